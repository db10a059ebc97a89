"""Synthetic sparse multipath CSI and its angular-delay representation.

A channel matrix over sub-carriers and a uniform linear array is built
from a handful of paths (gain, delay, departure angle). The 2-D DFT into
the angular-delay domain concentrates that energy into the first rows, so
keeping only the first Nc rows loses little. Datasets of truncated,
globally normalized samples persist in a small binary container.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, FormatError, NumericError, ShapeError

DELTA_F_DEFAULT = 15e3  # sub-carrier spacing, Hz

# Desk defaults: 256 sub-carriers, 32 antennas, keep 32 delay rows.
NSUB_DEFAULT = 256
NT_DEFAULT = 32
NC_DEFAULT = 32

# Delay windows as a fraction of the kept-row span Nc/(Nsub*Delta_f):
# "concentrated" mimics short indoor spreads, "dispersed" fills most of
# the window while staying inside the kept rows.
SCENARIO_SPREAD = {"concentrated": 0.2, "dispersed": 0.9}

DATASET_MAGIC = b"CSIQ"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sHIHHd")

# Sample budget used by the full-scale preset: train/val/test.
FULL_SCALE_SPLIT = (100000, 30000, 20000)
DESK_SPLIT = (5000, 1000, 1000)


@dataclass(frozen=True)
class PathSet:
    """Multipath description: per-path complex gain, delay (s), angle (rad)."""

    gains: np.ndarray
    delays: np.ndarray
    angles: np.ndarray

    def __post_init__(self):
        if not (len(self.gains) == len(self.delays) == len(self.angles)):
            raise ShapeError("PathSet field lengths disagree")
        if len(self.gains) < 1:
            raise ConfigError("PathSet needs at least one path")

    @property
    def count(self):
        return len(self.gains)


def default_delay_window(scenario, nc=NC_DEFAULT, nsub=NSUB_DEFAULT, delta_f=DELTA_F_DEFAULT):
    """Upper delay bound (seconds) keeping paths inside the first nc rows."""
    try:
        frac = SCENARIO_SPREAD[scenario]
    except KeyError:
        raise ConfigError(f"unknown scenario {scenario!r}") from None
    return frac * nc / (nsub * delta_f)


def generate_paths(seed, L, scenario="concentrated", window=None, grid_step=None):
    """Draw L paths deterministically from a seed.

    window: delay upper bound in seconds; defaults to the scenario window
    for the desk dimensions. grid_step: if given, delays snap to integer
    multiples of it so each path lands exactly on one delay row of a
    matching transform.
    """
    if L < 1:
        raise ConfigError("path count must be >= 1")
    if window is None:
        window = default_delay_window(scenario)
    elif scenario not in SCENARIO_SPREAD:
        raise ConfigError(f"unknown scenario {scenario!r}")
    rng = np.random.default_rng(seed)
    delays = rng.uniform(0.0, window, size=L)
    if grid_step is not None:
        delays = np.round(delays / grid_step) * grid_step
    angles = rng.uniform(-np.pi / 2, np.pi / 2, size=L)
    gains = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) / np.sqrt(2.0 * L)
    return PathSet(gains=gains, delays=delays, angles=angles)


def synthesize_raw(paths: PathSet, nsub, nt, delta_f=DELTA_F_DEFAULT):
    """Sub-carrier x antenna channel matrix for a ULA.

    Row n holds sum_l g_l exp(-j 2 pi n tau_l delta_f) a(theta_l), with
    steering vector a(theta)_k = exp(-j pi k sin(theta)) for half-wavelength
    element spacing.
    """
    if nsub < 1 or nt < 1:
        raise ConfigError("nsub and nt must be >= 1")
    n = np.arange(nsub)[:, None]
    ramp = np.exp(-2j * np.pi * n * (paths.delays[None, :] * delta_f))
    steer = np.exp(-1j * np.pi * np.outer(np.sin(paths.angles), np.arange(nt)))
    out = ramp @ (paths.gains[:, None] * steer)
    if not np.all(np.isfinite(out)):
        raise NumericError("synthesize_raw produced non-finite values")
    return out


@dataclass(frozen=True)
class AngularDelayPlan:
    """Dimensions plus the kernel convention of the 2-D unitary transform.

    Both axes use orthonormal +j-kernel DFTs (numpy ifft with "ortho").
    The sub-carrier phase ramp exp(-j 2 pi n tau delta_f) then lands on
    delay row round(tau * nsub * delta_f), so small delays concentrate in
    the leading rows and row truncation keeps the energy.
    """

    nsub: int
    nt: int


def _check_plan(arr, plan):
    if arr.shape[-2] != plan.nsub or arr.shape[-1] != plan.nt:
        raise ShapeError(f"matrix {arr.shape} does not match plan ({plan.nsub}, {plan.nt})")


def to_angular_delay(raw, plan: AngularDelayPlan):
    """Unitary 2-D transform into the angular-delay domain. Accepts one
    matrix or a leading batch axis."""
    arr = np.asarray(raw)
    _check_plan(arr, plan)
    step = np.fft.ifft(arr, axis=-2, norm="ortho")
    return np.fft.ifft(step, axis=-1, norm="ortho")


def from_angular_delay(mat, plan: AngularDelayPlan):
    arr = np.asarray(mat)
    _check_plan(arr, plan)
    step = np.fft.fft(arr, axis=-1, norm="ortho")
    return np.fft.fft(step, axis=-2, norm="ortho")


@dataclass(frozen=True)
class CsiDataset:
    """Truncated angular-delay samples with one global normalization scale.

    samples: complex64 array (N, Nc, Nt) with real/imag in [-1, 1] after
    normalization; scale: the factor that was divided out.
    """

    samples: np.ndarray
    scale: float

    def __post_init__(self):
        if self.samples.ndim != 3:
            raise ShapeError("dataset samples must have shape (N, Nc, Nt)")
        if self.scale <= 0:
            raise DomainError("dataset scale must be positive")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def nc(self):
        return self.samples.shape[1]

    @property
    def nt(self):
        return self.samples.shape[2]

    def split(self, sizes):
        """Cut into consecutive subsets; sizes must sum to N exactly."""
        if sum(sizes) != len(self):
            raise ConfigError(f"split sizes {tuple(sizes)} do not sum to {len(self)}")
        out = []
        start = 0
        for s in sizes:
            out.append(CsiDataset(self.samples[start : start + s], self.scale))
            start += s
        return tuple(out)

    def as_real_vectors(self):
        """Flatten each sample to a float32 row [real parts, imag parts]."""
        n = len(self)
        flat = self.samples.reshape(n, -1)
        return np.concatenate([flat.real, flat.imag], axis=1).astype(np.float32)


def vectors_to_matrices(vecs, nc, nt):
    """Inverse of as_real_vectors for reconstructed rows."""
    arr = np.asarray(vecs)
    if arr.ndim == 1:
        arr = arr[None, :]
    half = nc * nt
    if arr.shape[1] != 2 * half:
        raise ShapeError(f"expected row length {2 * half}, got {arr.shape[1]}")
    re = arr[:, :half].reshape(-1, nc, nt)
    im = arr[:, half:].reshape(-1, nc, nt)
    return re + 1j * im


def truncate_and_normalize(mats, nc):
    """Keep the first nc rows and scale the whole batch into [-1, 1].

    Returns (CsiDataset, retained_energy_ratio). The scale is the max
    absolute real or imaginary component over the truncated batch (1.0
    for an all-zero batch), so after division the max component is 1.
    """
    arr = np.asarray(mats)
    if arr.ndim == 2:
        arr = arr[None, ...]
    if arr.ndim != 3:
        raise ShapeError("expected (N, Nsub, Nt) or (Nsub, Nt)")
    if nc > arr.shape[1]:
        raise ConfigError(f"nc={nc} exceeds row count {arr.shape[1]}")
    kept = arr[:, :nc, :]
    total = float(np.sum(np.abs(arr) ** 2))
    retained = float(np.sum(np.abs(kept) ** 2))
    ratio = 1.0 if total == 0.0 else retained / total
    scale = max(float(np.max(np.abs(kept.real))), float(np.max(np.abs(kept.imag))))
    if scale == 0.0:
        scale = 1.0
    samples = (kept / scale).astype(np.complex64)
    return CsiDataset(samples=samples, scale=scale), ratio


def generate_dataset(
    seed,
    num,
    paths=8,
    scenario="concentrated",
    nc=NC_DEFAULT,
    nt=NT_DEFAULT,
    nsub=NSUB_DEFAULT,
    delta_f=DELTA_F_DEFAULT,
    snap_to_grid=True,
    chunk=256,
):
    """Generate num samples; per-sample path draws derive from (seed, index).

    snap_to_grid puts every delay on a transform bin so samples are exactly
    sparse in delay; retained energy is then 1 up to round-off.
    Returns (CsiDataset, retained_energy_ratio).
    """
    if num < 1:
        raise ConfigError("num must be >= 1")
    window = default_delay_window(scenario, nc=nc, nsub=nsub, delta_f=delta_f)
    grid = 1.0 / (nsub * delta_f) if snap_to_grid else None
    plan = AngularDelayPlan(nsub=nsub, nt=nt)
    kept_chunks = []
    total_energy = 0.0
    kept_energy = 0.0
    for start in range(0, num, chunk):
        stop = min(start + chunk, num)
        raws = np.empty((stop - start, nsub, nt), dtype=np.complex128)
        for i in range(start, stop):
            ps = generate_paths(
                np.random.SeedSequence([seed, i]), paths, scenario, window=window, grid_step=grid
            )
            raws[i - start] = synthesize_raw(ps, nsub, nt, delta_f)
        full = to_angular_delay(raws, plan)
        kept = full[:, :nc, :]
        total_energy += float(np.sum(np.abs(full) ** 2))
        kept_energy += float(np.sum(np.abs(kept) ** 2))
        kept_chunks.append(kept)
    kept_all = np.concatenate(kept_chunks, axis=0)
    ratio = 1.0 if total_energy == 0.0 else kept_energy / total_energy
    scale = max(float(np.max(np.abs(kept_all.real))), float(np.max(np.abs(kept_all.imag))))
    if scale == 0.0:
        scale = 1.0
    samples = (kept_all / scale).astype(np.complex64)
    return CsiDataset(samples=samples, scale=scale), ratio


def save_dataset(path, dataset: CsiDataset):
    n, nc, nt = dataset.samples.shape
    if n > 0xFFFFFFFF or nc > 0xFFFF or nt > 0xFFFF:
        raise FormatError(f"dimensions ({n}, {nc}, {nt}) overflow the header fields")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n, nc, nt, dataset.scale))
        fh.write(np.ascontiguousarray(dataset.samples, dtype="<c8").tobytes())


def load_dataset(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FormatError("truncated dataset header")
        magic, version, n, nc, nt, scale = _HEADER.unpack(head)
        if magic != DATASET_MAGIC:
            raise FormatError(f"bad dataset magic {magic!r}")
        if version != DATASET_VERSION:
            raise FormatError(f"unsupported dataset version {version}")
        body = fh.read()
    need = n * nc * nt * 8
    if len(body) != need:
        raise FormatError(f"dataset body is {len(body)} bytes, expected {need}")
    samples = np.frombuffer(body, dtype="<c8").reshape(n, nc, nt).astype(np.complex64)
    return CsiDataset(samples=samples, scale=scale)
