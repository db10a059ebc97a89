import math

import numpy as np
import pytest

from csiq import report
from csiq.errors import DomainError, ShapeError


def test_nmse_perfect_reconstruction():
    h = np.array([[1.0 + 2j, 0.5j]])
    lin, excl = report.nmse(h, h)
    assert lin == 0.0 and excl == 0
    db, _ = report.nmse_db(h, h)
    assert db == -math.inf


def test_nmse_zero_estimate_is_zero_db():
    h = np.array([[3.0, 4.0j], [1.0, 1.0]])
    lin, _ = report.nmse(h, np.zeros_like(h))
    assert lin == pytest.approx(1.0, rel=1e-15)
    db, _ = report.nmse_db(h, np.zeros_like(h))
    assert db == pytest.approx(0.0, abs=1e-12)


def test_nmse_scaled_estimate():
    rng = np.random.default_rng(0)
    h = rng.standard_normal((10, 6)) + 1j * rng.standard_normal((10, 6))
    db, _ = report.nmse_db(h, 0.9 * h)
    assert db == pytest.approx(20 * math.log10(0.1), abs=1e-12)  # -20 dB


def test_nmse_scale_invariance():
    rng = np.random.default_rng(1)
    h = rng.standard_normal((8, 5))
    hhat = h + rng.standard_normal((8, 5)) * 0.1
    a, _ = report.nmse(h, hhat)
    b, _ = report.nmse(1000.0 * h, 1000.0 * hhat)
    assert a == pytest.approx(b, rel=1e-12)


def test_nmse_excludes_zero_norm_rows():
    h = np.array([[1.0, 0.0], [0.0, 0.0]])
    hhat = np.array([[0.9, 0.0], [0.5, 0.0]])
    lin, excl = report.nmse(h, hhat)
    assert excl == 1
    assert lin == pytest.approx(0.01, rel=1e-12)
    with pytest.raises(DomainError):
        report.nmse(np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(ShapeError):
        report.nmse(np.zeros((2, 2)), np.zeros((2, 3)))


def test_nmse_ratio_of_means():
    h = np.array([[1.0, 0.0], [2.0, 0.0]])
    hhat = np.array([[0.0, 0.0], [2.0, 0.0]])
    per_sample, _ = report.nmse(h, hhat)
    pooled, _ = report.nmse(h, hhat, ratio_of_means=True)
    assert per_sample == pytest.approx(0.5, rel=1e-15)
    assert pooled == pytest.approx(1.0 / 5.0, rel=1e-15)


def test_db_floor():
    assert report.db_floor(-math.inf) == report.DB_FLOOR
    assert report.db_floor(-500.0) == report.DB_FLOOR
    assert report.db_floor(-3.5) == -3.5


def test_cdf_uniform_grid():
    curve = report.codeword_cdf(np.linspace(-1, 1, 2001))
    assert curve.values[0] == -1.0 and curve.values[-1] == 1.0
    assert np.all(np.diff(curve.probs) > 0)
    assert curve.probs[-1] == 1.0
    # mass of |v| < 0.1 on a uniform grid over [-1, 1]
    assert curve.concentration(0.1) == pytest.approx(0.1, abs=1e-3)


def test_cdf_all_zero_and_empty():
    curve = report.codeword_cdf(np.zeros((3, 4)))
    assert curve.concentration(0.1) == 1.0
    assert np.all(curve.values == 0.0)
    with pytest.raises(DomainError):
        report.codeword_cdf(np.zeros((0,)))


def test_cdf_csv():
    curve = report.codeword_cdf(np.array([0.5, -0.5]))
    text = report.cdf_csv(curve)
    lines = text.strip().splitlines()
    assert lines[0] == "value,prob"
    assert lines[1] == "-0.5,0.5"
    assert lines[2] == "0.5,1.0"


def test_method_name():
    assert report.method_name("stage1", "none") == "mu-law"
    assert report.method_name("l1", "none") == "L1Adaptor"
    assert report.method_name("stage2", "bottle_fc") == "BottleFC"
    assert report.method_name("stage2", "para_bottle_fc") == "ParaBottleFC"
    assert report.method_name("stage1", "offset_net") == "OffsetNet"


def _demo_report():
    recs = [
        report.RunRecord("mu-law", 4, 4, -8.0, 20.0, 100, 90, 0),
        report.RunRecord("mu-law", 4, 6, -8.5, 26.0, 100, 90, 0),
        report.RunRecord("BottleFC", 4, 4, -9.0, 24.0, 160, 150, 0),
        report.RunRecord("NQ", 4, None, -12.0, math.inf, 100, 90, 0),
    ]
    return report.RunReport(records=recs, dataset_fingerprint="abc", seeds=(0,))


def test_metric_table_layout():
    table = report.metric_table(_demo_report(), "nmse_db")
    lines = table.splitlines()
    assert lines[1].split() == ["method", "cr4/b4", "cr4/b6"]
    body = {ln.split()[0]: ln.split()[1:] for ln in lines[3:]}
    # NQ repeats its single value across the bit columns
    assert body["NQ"] == ["-12.00", "-12.00"]
    assert body["mu-law"] == ["-8.00", "-8.50"]
    assert body["BottleFC"] == ["-9.00", "n/a"]
    # method rows follow the canonical order
    assert list(body) == ["NQ", "mu-law", "BottleFC"]


def test_qsnr_table_drops_nq():
    table = report.metric_table(_demo_report(), "qsnr_db")
    assert "NQ" not in table
    assert "20.00" in table and "26.00" in table
    with pytest.raises(DomainError):
        report.metric_table(_demo_report(), "loss")


def test_complexity_table():
    table = report.complexity_table(_demo_report())
    lines = table.splitlines()
    assert "cr4 params" in lines[1] and "cr4 flops" in lines[1]
    mu = [ln for ln in lines if ln.startswith("mu-law")][0]
    assert mu.split()[1:] == ["100", "90"]
    assert not any(ln.startswith("NQ") for ln in lines)


def test_report_csv_round_trip():
    rep = _demo_report()
    text = report.report_csv(rep)
    back = report.parse_report_csv(text)
    assert set(back.records) == set(rep.records)  # csv emits a canonical order
    assert back.seeds == (0,)
    with pytest.raises(DomainError):
        report.parse_report_csv("a,b\n1,2\n")


def test_report_csv_infinite_values_round_trip():
    rec = report.RunRecord("NQ", 8, None, -math.inf, math.inf, 5, 4, 1)
    text = report.report_csv(report.RunReport(records=[rec]))
    back = report.parse_report_csv(text)
    assert back.records[0].nmse_db == -math.inf
    assert back.records[0].qsnr_db == math.inf
    assert back.records[0].bits is None


def test_extend_merges_seeds():
    a = _demo_report()
    b = report.RunReport(
        records=[report.RunRecord("mu-law", 4, 4, -7.0, 21.0, 100, 90, 1)], seeds=(1,)
    )
    a.extend(b)
    assert a.seeds == (0, 1)
    cells = report._aggregate(a, lambda r: r.nmse_db)
    assert cells[("mu-law", 4, 4)] == pytest.approx(-7.5)  # median of two seeds


def test_median_aggregation_three_seeds():
    recs = [report.RunRecord("mu-law", 4, 4, v, 0.0, 1, 1, s) for s, v in enumerate((-6.0, -9.0, -7.0))]
    rep = report.RunReport(records=recs, seeds=(0, 1, 2))
    table = report.metric_table(rep, "nmse_db")
    assert "-7.00" in table


def test_make_tables_keys():
    out = report.make_tables(_demo_report())
    assert set(out) == {"qsnr.txt", "nmse.txt", "complexity.txt", "records.csv"}
    assert out["records.csv"].startswith("method,cr,bits,")


def test_metric_table_floors_neg_infinity():
    rep = report.RunReport(
        records=[report.RunRecord("mu-law", 4, 4, -math.inf, math.inf, 1, 1, 0)]
    )
    table = report.metric_table(rep, "nmse_db")
    assert f"{report.DB_FLOOR:.2f}" in table
    assert "inf" in report.metric_table(rep, "qsnr_db")
