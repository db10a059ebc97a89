"""Reconstruction metrics, codeword distribution curves, and result tables.

NMSE follows the per-sample-ratio-then-mean convention (matching the
QSNR metric); the ratio-of-means alternative sits behind a flag. Table
emitters are deterministic: same records in, byte-identical text out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError

DB_FLOOR = -120.0

# Row order for rendered tables; extra method names sort after these.
METHOD_ORDER = ("NQ", "mu-law", "OffsetNet", "L1Adaptor", "BottleFC", "ParaBottleFC")


def method_name(regime, adaptor):
    """Canonical method label for a (training regime, adaptor kind) pair."""
    if adaptor == "none":
        return "L1Adaptor" if regime == "l1" else "mu-law"
    return {"bottle_fc": "BottleFC", "para_bottle_fc": "ParaBottleFC", "offset_net": "OffsetNet"}[adaptor]


def _rows(h):
    arr = np.asarray(h)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr.reshape(arr.shape[0], -1)


def nmse(h, h_hat, ratio_of_means=False):
    """E[||H - Hhat||^2 / ||H||^2] per sample, then mean over the batch.

    Zero-norm reference samples are excluded; returns (linear value,
    excluded count). ratio_of_means=True computes sum(err)/sum(sig)
    instead.
    """
    a = _rows(h)
    b = _rows(h_hat)
    if a.shape != b.shape:
        raise ShapeError(f"nmse shape mismatch: {a.shape} vs {b.shape}")
    sig = np.sum(np.abs(a.astype(np.complex128)) ** 2, axis=1).real
    err = np.sum(np.abs((a - b).astype(np.complex128)) ** 2, axis=1).real
    valid = sig > 0.0
    n_excluded = int(np.count_nonzero(~valid))
    if not np.any(valid):
        raise DomainError("nmse: every reference sample has zero norm")
    if ratio_of_means:
        return float(np.sum(err[valid]) / np.sum(sig[valid])), n_excluded
    return float(np.mean(err[valid] / sig[valid])), n_excluded


def nmse_db(h, h_hat, ratio_of_means=False):
    lin, n_excluded = nmse(h, h_hat, ratio_of_means)
    if lin == 0.0:
        return -math.inf, n_excluded
    return 10.0 * math.log10(lin), n_excluded


def db_floor(x, floor=DB_FLOOR):
    """Replace -inf (and anything below the floor) for printable tables."""
    return max(x, floor)


@dataclass(frozen=True)
class CdfCurve:
    """Empirical CDF over codeword elements: sorted values, probs (i+1)/n."""

    values: np.ndarray
    probs: np.ndarray

    def concentration(self, threshold=0.1):
        """P(|v| < threshold) over the underlying elements."""
        return float(np.count_nonzero(np.abs(self.values) < threshold) / len(self.values))


def codeword_cdf(codewords):
    flat = np.asarray(codewords, dtype=np.float64).ravel()
    if flat.size == 0:
        raise DomainError("codeword_cdf: empty batch")
    values = np.sort(flat)
    probs = np.arange(1, values.size + 1, dtype=np.float64) / values.size
    return CdfCurve(values=values, probs=probs)


def cdf_csv(curve: CdfCurve):
    lines = ["value,prob"]
    for v, p in zip(curve.values, curve.probs):
        lines.append(f"{float(v)!r},{float(p)!r}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RunRecord:
    method: str
    cr: int
    bits: int | None  # None marks the no-quantization row
    nmse_db: float
    qsnr_db: float
    params: int
    flops: int
    seed: int


@dataclass
class RunReport:
    records: list = field(default_factory=list)
    dataset_fingerprint: str = ""
    seeds: tuple = ()

    def extend(self, other: "RunReport"):
        self.records.extend(other.records)
        self.seeds = tuple(sorted(set(self.seeds) | set(other.seeds)))
        if not self.dataset_fingerprint:
            self.dataset_fingerprint = other.dataset_fingerprint


def _method_sort_key(name):
    try:
        return (0, METHOD_ORDER.index(name))
    except ValueError:
        return (1, name)


def _median(values):
    return float(np.median(np.asarray(values, dtype=np.float64)))


def _aggregate(report: RunReport, value_of):
    """Median over seeds for each (method, cr, bits) cell."""
    cells = {}
    for r in report.records:
        cells.setdefault((r.method, r.cr, r.bits), []).append(value_of(r))
    return {k: _median(v) for k, v in cells.items()}


def _grid(report: RunReport):
    crs = sorted({r.cr for r in report.records})
    bits = sorted({r.bits for r in report.records if r.bits is not None})
    methods = sorted({r.method for r in report.records}, key=_method_sort_key)
    return crs, bits, methods


def _fmt_db(x):
    if math.isinf(x) and x > 0:
        return "inf"
    return f"{db_floor(x):.2f}"


def _render_grid(title, methods, columns, cell_text):
    """Aligned text table: one row per method, one column per grid cell."""
    header = ["method"] + [c[0] for c in columns]
    rows = [[m] + [cell_text(m, c[1]) for c in columns] for m in methods]
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    out = [title]
    out.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    out.append("  ".join("-" * w for w in widths))
    for r in rows:
        out.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(out) + "\n"


def metric_table(report: RunReport, metric):
    """Aligned-text table for metric in {"qsnr_db", "nmse_db"}.

    Columns are (CR, B) cells; the no-quantization row repeats its per-CR
    value across that CR's B columns. Cells without records print n/a.
    """
    if metric not in ("qsnr_db", "nmse_db"):
        raise DomainError(f"unknown metric {metric!r}")
    cells = _aggregate(report, lambda r: getattr(r, metric))
    crs, bits, methods = _grid(report)
    if metric == "qsnr_db":
        methods = [m for m in methods if m != "NQ"]
    columns = [(f"cr{c}/b{b}", (c, b)) for c in crs for b in bits]

    def cell_text(m, cb):
        c, b = cb
        if m == "NQ":
            key = (m, c, None)
        else:
            key = (m, c, b)
        return _fmt_db(cells[key]) if key in cells else "n/a"

    title = {"qsnr_db": "QSNR (dB), median over seeds", "nmse_db": "NMSE (dB), median over seeds"}[metric]
    return _render_grid(title, methods, columns, cell_text)


def complexity_table(report: RunReport):
    """Params and FLOPs per method per CR (identical across B and seeds)."""
    cells = {}
    for r in report.records:
        cells[(r.method, r.cr)] = (r.params, r.flops)
    crs = sorted({r.cr for r in report.records})
    methods = sorted({r.method for r in report.records if r.method != "NQ"}, key=_method_sort_key)
    columns = []
    for c in crs:
        columns.append((f"cr{c} params", (c, 0)))
        columns.append((f"cr{c} flops", (c, 1)))

    def cell_text(m, key):
        c, which = key
        if (m, c) not in cells:
            return "n/a"
        return str(cells[(m, c)][which])

    return _render_grid("Complexity (params / FLOPs per sample)", methods, columns, cell_text)


def report_csv(report: RunReport):
    """Long-format CSV of every record; floats via repr for exact reload."""
    lines = ["method,cr,bits,nmse_db,qsnr_db,params,flops,seed"]
    ordered = sorted(
        report.records,
        key=lambda r: (_method_sort_key(r.method), r.cr, -1 if r.bits is None else r.bits, r.seed),
    )
    for r in ordered:
        b = "" if r.bits is None else r.bits
        lines.append(f"{r.method},{r.cr},{b},{r.nmse_db!r},{r.qsnr_db!r},{r.params},{r.flops},{r.seed}")
    return "\n".join(lines) + "\n"


def parse_report_csv(text):
    lines = [ln for ln in text.strip().splitlines() if ln]
    if lines[:1] != ["method,cr,bits,nmse_db,qsnr_db,params,flops,seed"]:
        raise DomainError("unrecognized report header")
    records = []
    for ln in lines[1:]:
        meth, cr, bits, nm, qs, params, flops, seed = ln.split(",")
        records.append(
            RunRecord(
                method=meth, cr=int(cr), bits=None if bits == "" else int(bits),
                nmse_db=float(nm), qsnr_db=float(qs),
                params=int(params), flops=int(flops), seed=int(seed),
            )
        )
    report = RunReport(records=records)
    report.seeds = tuple(sorted({r.seed for r in records}))
    return report


def make_tables(report: RunReport):
    """All rendered artifacts keyed by name."""
    return {
        "qsnr.txt": metric_table(report, "qsnr_db"),
        "nmse.txt": metric_table(report, "nmse_db"),
        "complexity.txt": complexity_table(report),
        "records.csv": report_csv(report),
    }
