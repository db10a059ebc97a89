import numpy as np
import pytest

from csiq import channel
from csiq.errors import ConfigError, FormatError, ShapeError


def test_default_delay_windows():
    conc = channel.default_delay_window("concentrated")
    disp = channel.default_delay_window("dispersed")
    assert conc == pytest.approx(0.2 * 32 / (256 * 15e3), rel=1e-15)
    assert disp == pytest.approx(0.9 * 32 / (256 * 15e3), rel=1e-15)
    assert disp > conc
    with pytest.raises(ConfigError):
        channel.default_delay_window("urban")


def test_generate_paths_deterministic():
    a = channel.generate_paths(123, 8)
    b = channel.generate_paths(123, 8)
    assert np.array_equal(a.gains, b.gains)
    assert np.array_equal(a.delays, b.delays)
    assert np.array_equal(a.angles, b.angles)
    c = channel.generate_paths(124, 8)
    assert not np.array_equal(a.gains, c.gains)


def test_generate_paths_ranges():
    window = channel.default_delay_window("dispersed")
    ps = channel.generate_paths(5, 64, scenario="dispersed")
    assert ps.count == 64
    assert np.all(ps.delays >= 0) and np.all(ps.delays <= window)
    assert np.all(np.abs(ps.angles) <= np.pi / 2)
    with pytest.raises(ConfigError):
        channel.generate_paths(0, 0)
    with pytest.raises(ConfigError):
        channel.generate_paths(0, 4, scenario="nope", window=1e-6)


def test_generate_paths_grid_snap():
    grid = 1.0 / (256 * 15e3)
    ps = channel.generate_paths(7, 32, grid_step=grid)
    bins = ps.delays / grid
    assert np.allclose(bins, np.round(bins), atol=1e-9)


def test_synthesize_broadside_columns_equal():
    # theta = 0 makes every antenna see the same phase
    ps = channel.PathSet(
        gains=np.array([0.5 + 0.1j, -0.2j]),
        delays=np.array([0.0, 2e-6]),
        angles=np.zeros(2),
    )
    h = channel.synthesize_raw(ps, nsub=16, nt=4)
    for k in range(1, 4):
        assert np.allclose(h[:, k], h[:, 0], atol=1e-14)


def test_synthesize_zero_delay_rows_equal():
    ps = channel.PathSet(
        gains=np.array([1.0 + 0j, 0.3 - 0.4j]),
        delays=np.zeros(2),
        angles=np.array([0.3, -1.0]),
    )
    h = channel.synthesize_raw(ps, nsub=8, nt=6)
    for n in range(1, 8):
        assert np.allclose(h[n], h[0], atol=1e-14)


def test_synthesize_superposition():
    a = channel.generate_paths(1, 3)
    b = channel.generate_paths(2, 5)
    both = channel.PathSet(
        gains=np.concatenate([a.gains, b.gains]),
        delays=np.concatenate([a.delays, b.delays]),
        angles=np.concatenate([a.angles, b.angles]),
    )
    ha = channel.synthesize_raw(a, 32, 8)
    hb = channel.synthesize_raw(b, 32, 8)
    hab = channel.synthesize_raw(both, 32, 8)
    assert np.max(np.abs(hab - (ha + hb))) < 1e-12


def test_transform_unitary_round_trip():
    plan = channel.AngularDelayPlan(nsub=32, nt=8)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 32, 8)) + 1j * rng.standard_normal((5, 32, 8))
    g = channel.to_angular_delay(x, plan)
    back = channel.from_angular_delay(g, plan)
    assert np.max(np.abs(back - x)) < 1e-10
    # orthonormal scaling preserves energy
    assert np.sum(np.abs(g) ** 2) == pytest.approx(np.sum(np.abs(x) ** 2), rel=1e-12)


def test_transform_matches_dft_matrices():
    # oracle: +j-kernel orthonormal DFT matrices applied on each side
    nsub, nt = 16, 8
    plan = channel.AngularDelayPlan(nsub=nsub, nt=nt)
    rng = np.random.default_rng(1)
    h = rng.standard_normal((nsub, nt)) + 1j * rng.standard_normal((nsub, nt))
    fd = np.exp(2j * np.pi * np.outer(np.arange(nsub), np.arange(nsub)) / nsub) / np.sqrt(nsub)
    fa = np.exp(2j * np.pi * np.outer(np.arange(nt), np.arange(nt)) / nt) / np.sqrt(nt)
    oracle = fd @ h @ fa.T
    got = channel.to_angular_delay(h, plan)
    assert np.max(np.abs(got - oracle)) < 1e-12


def test_transform_zero_and_shapes():
    plan = channel.AngularDelayPlan(nsub=8, nt=4)
    out = channel.to_angular_delay(np.zeros((8, 4)), plan)
    assert np.all(out == 0)
    with pytest.raises(ShapeError):
        channel.to_angular_delay(np.zeros((4, 8)), plan)
    with pytest.raises(ShapeError):
        channel.from_angular_delay(np.zeros((8, 5)), plan)


def test_single_grid_path_hits_one_delay_row():
    nsub, nt = 64, 8
    grid = 1.0 / (nsub * channel.DELTA_F_DEFAULT)
    ps = channel.PathSet(
        gains=np.array([1.0 + 0j]),
        delays=np.array([3 * grid]),
        angles=np.array([0.7]),
    )
    h = channel.synthesize_raw(ps, nsub, nt)
    g = channel.to_angular_delay(h, channel.AngularDelayPlan(nsub=nsub, nt=nt))
    row_energy = np.sum(np.abs(g) ** 2, axis=1)
    assert row_energy[3] / np.sum(row_energy) == pytest.approx(1.0, abs=1e-12)


def test_truncate_keeps_everything_when_nc_full():
    rng = np.random.default_rng(2)
    mats = rng.standard_normal((4, 8, 4)) + 1j * rng.standard_normal((4, 8, 4))
    ds, ratio = channel.truncate_and_normalize(mats, nc=8)
    assert ratio == 1.0
    assert ds.samples.shape == (4, 8, 4)
    peak = max(np.max(np.abs(ds.samples.real)), np.max(np.abs(ds.samples.imag)))
    assert peak == pytest.approx(1.0, rel=1e-6)


def test_truncate_ratio_and_scale():
    mats = np.zeros((1, 4, 2), dtype=complex)
    mats[0, 0, 0] = 3.0
    mats[0, 3, 1] = 4.0  # dropped row
    ds, ratio = channel.truncate_and_normalize(mats, nc=2)
    assert ratio == pytest.approx(9.0 / 25.0, rel=1e-12)
    assert ds.scale == 3.0
    assert ds.samples[0, 0, 0] == 1.0


def test_truncate_zero_batch():
    ds, ratio = channel.truncate_and_normalize(np.zeros((2, 4, 3), dtype=complex), nc=2)
    assert ratio == 1.0
    assert ds.scale == 1.0
    with pytest.raises(ConfigError):
        channel.truncate_and_normalize(np.zeros((2, 4, 3), dtype=complex), nc=5)
    with pytest.raises(ShapeError):
        channel.truncate_and_normalize(np.zeros(4, dtype=complex), nc=2)


def test_dataset_split():
    samples = np.arange(15 * 2 * 3, dtype=np.complex64).reshape(15, 2, 3)
    ds = channel.CsiDataset(samples=samples, scale=2.0)
    tr, va, te = ds.split((10, 3, 2))
    assert (len(tr), len(va), len(te)) == (10, 3, 2)
    assert np.array_equal(tr.samples, samples[:10])
    assert np.array_equal(te.samples, samples[13:])
    assert va.scale == 2.0
    with pytest.raises(ConfigError):
        ds.split((10, 3, 3))


def test_split_presets():
    assert channel.FULL_SCALE_SPLIT == (100000, 30000, 20000)
    assert sum(channel.FULL_SCALE_SPLIT) == 150000
    assert channel.DESK_SPLIT == (5000, 1000, 1000)


def test_real_vector_round_trip():
    rng = np.random.default_rng(3)
    raw = (rng.standard_normal((6, 4, 5)) + 1j * rng.standard_normal((6, 4, 5))) / 4
    ds = channel.CsiDataset(samples=raw.astype(np.complex64), scale=1.0)
    vecs = ds.as_real_vectors()
    assert vecs.shape == (6, 40)
    assert vecs.dtype == np.float32
    assert np.array_equal(vecs[0, :20], ds.samples[0].reshape(-1).real)
    back = channel.vectors_to_matrices(vecs, 4, 5)
    assert np.array_equal(back.astype(np.complex64), ds.samples)
    with pytest.raises(ShapeError):
        channel.vectors_to_matrices(vecs, 4, 4)


def test_generate_dataset_deterministic_and_chunk_free():
    a, ra = channel.generate_dataset(11, 7, paths=4, nc=8, nt=4, nsub=32, chunk=3)
    b, rb = channel.generate_dataset(11, 7, paths=4, nc=8, nt=4, nsub=32, chunk=100)
    assert np.array_equal(a.samples, b.samples)
    assert a.scale == b.scale
    assert ra == rb
    c, _ = channel.generate_dataset(12, 7, paths=4, nc=8, nt=4, nsub=32)
    assert not np.array_equal(a.samples, c.samples)


def test_generate_dataset_grid_snap_retains_energy():
    _, ratio = channel.generate_dataset(0, 16, paths=6, nc=8, nt=4, nsub=32)
    assert ratio == pytest.approx(1.0, abs=1e-9)
    _, loose = channel.generate_dataset(0, 16, paths=6, nc=8, nt=4, nsub=32, snap_to_grid=False)
    assert 0.5 < loose <= 1.0


def test_dataset_file_round_trip(tmp_path):
    ds, _ = channel.generate_dataset(4, 5, paths=3, nc=4, nt=4, nsub=16)
    path = tmp_path / "d.csiq"
    channel.save_dataset(path, ds)
    back = channel.load_dataset(path)
    assert back.scale == ds.scale
    assert np.array_equal(back.samples, ds.samples)
    assert back.samples.dtype == np.complex64


def test_dataset_file_errors(tmp_path):
    ds, _ = channel.generate_dataset(4, 2, paths=3, nc=4, nt=4, nsub=16)
    path = tmp_path / "d.csiq"
    channel.save_dataset(path, ds)
    blob = path.read_bytes()
    path.write_bytes(b"ZZZZ" + blob[4:])
    with pytest.raises(FormatError):
        channel.load_dataset(path)
    path.write_bytes(blob[:-5])
    with pytest.raises(FormatError):
        channel.load_dataset(path)
    bad = bytearray(blob)
    bad[4] = 99  # version field
    path.write_bytes(bytes(bad))
    with pytest.raises(FormatError):
        channel.load_dataset(path)
    path.write_bytes(blob[:3])
    with pytest.raises(FormatError):
        channel.load_dataset(path)
