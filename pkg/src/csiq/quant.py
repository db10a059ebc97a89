"""Mu-law companding and sign-magnitude quantization of codeword vectors.

Values are companded by Phi(x) = ln(1 + mu*x) / ln(1 + mu) on |x| <= 1,
then the magnitude is cut into 2^(B-1) uniform cells and reconstructed at
expanded cell midpoints, with one bit spent on the sign. A piecewise
linear table (polyline) stands in for the log curve where transcendental
evaluation is unwanted; its worst-case deviation from the exact curve has
a closed form used both for validation and for knot budgeting.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, FormatError, NumericError, ShapeError
from . import engine

MU_DEFAULT = 50.0

CODEWORD_MAGIC = b"CSIV"
BITSTREAM_MAGIC = b"CSIB"
_CODEWORD_HEADER = struct.Struct("<4sHII")        # magic, version, count, m
_BITSTREAM_HEADER = struct.Struct("<4sHIIHd")     # magic, version, count, m, bits, mu
FILE_VERSION = 1


def _as_float_array(v, name):
    arr = np.asarray(v, dtype=np.float64) if not isinstance(v, np.ndarray) else v
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name}: non-finite input")
    return arr


def compand(x, mu=MU_DEFAULT):
    """Phi(x) = ln(1 + mu x) / ln(1 + mu), elementwise, for x in [0, 1]."""
    if mu <= 0:
        raise ConfigError("mu must be positive")
    arr = _as_float_array(x, "compand")
    if np.any(arr < 0) or np.any(arr > 1):
        raise DomainError("compand: input outside [0, 1]")
    out = np.log1p(mu * arr) / math.log1p(mu)
    return out if isinstance(x, np.ndarray) else float(out)


def expand(y, mu=MU_DEFAULT):
    """Inverse companding: Phi^{-1}(y) = ((1 + mu)^y - 1) / mu on [0, 1]."""
    if mu <= 0:
        raise ConfigError("mu must be positive")
    arr = _as_float_array(y, "expand")
    if np.any(arr < 0) or np.any(arr > 1):
        raise DomainError("expand: input outside [0, 1]")
    out = np.expm1(arr * math.log1p(mu)) / mu
    return out if isinstance(y, np.ndarray) else float(out)


@dataclass(frozen=True)
class QuantizerConfig:
    bits: int = 4          # total bits per value, including the sign bit
    mu: float = MU_DEFAULT

    def __post_init__(self):
        if self.bits < 2:
            raise ConfigError("bits must be >= 2 (1 sign bit + >=1 magnitude bit)")
        if self.mu <= 0:
            raise ConfigError("mu must be positive")

    @property
    def levels(self):
        """Magnitude cells per sign: 2^(bits-1)."""
        return 1 << (self.bits - 1)


def quantize(v, cfg: QuantizerConfig):
    """Map values in [-1, 1] to integer codes in [0, 2^bits).

    Code layout: sign_bit * 2^(bits-1) + cell, sign_bit = 1 for negative
    input. Companded magnitude is floored into 2^(bits-1) uniform cells;
    the top cell absorbs the boundary point |v| = 1.
    """
    arr = _as_float_array(v, "quantize")
    if np.any(np.abs(arr) > 1):
        raise DomainError("quantize: input outside [-1, 1]")
    levels = cfg.levels
    mag = compand(np.abs(arr), cfg.mu)
    cell = np.minimum(np.floor(mag * levels).astype(np.int64), levels - 1)
    sign_bit = (arr < 0).astype(np.int64)
    return sign_bit * levels + cell


def dequantize(codes, cfg: QuantizerConfig):
    """Reconstruct at the expanded midpoint of each magnitude cell."""
    arr = np.asarray(codes)
    if not np.issubdtype(arr.dtype, np.integer):
        raise DomainError("dequantize: codes must be integers")
    total = 1 << cfg.bits
    if np.any(arr < 0) or np.any(arr >= total):
        raise DomainError(f"dequantize: code outside [0, {total})")
    levels = cfg.levels
    cell = arr % levels
    sign = np.where(arr >= levels, -1.0, 1.0)
    mid = expand((cell.astype(np.float64) + 0.5) / levels, cfg.mu)
    return sign * mid


def roundtrip(v, cfg: QuantizerConfig):
    """dequantize(quantize(v)) convenience."""
    return dequantize(quantize(v, cfg), cfg)


def uniform_roundtrip(v, bits):
    """Plain uniform counterpart: same sign-magnitude layout, no companding.

    Used as the comparison point when measuring what the log curve buys.
    """
    arr = _as_float_array(v, "uniform_roundtrip")
    if np.any(np.abs(arr) > 1):
        raise DomainError("uniform_roundtrip: input outside [-1, 1]")
    levels = 1 << (bits - 1)
    cell = np.minimum(np.floor(np.abs(arr) * levels).astype(np.int64), levels - 1)
    sign = np.sign(arr)
    sign = np.where(sign == 0, 1.0, sign)
    return sign * (cell.astype(np.float64) + 0.5) / levels


def roundtrip_error_bound(cfg: QuantizerConfig):
    """Worst-case |v - dequantize(quantize(v))| over v in [-1, 1].

    The widest expanded half-cell sits at the top of the range: the error
    is maximized at |v| = 1, reconstructed at the expanded midpoint of the
    last cell, giving 1 - Phi^{-1}(1 - 2^{-bits_mag}) with
    bits_mag = bits - 1 magnitude bits and cell midpoints at half steps.
    """
    levels = cfg.levels
    return 1.0 - expand((levels - 0.5) / levels, cfg.mu)


# ---------------------------------------------------------------------------
# Polyline companding table.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Polyline:
    """Piecewise linear approximation of the companding curve.

    Knots are uniform in x over [0, 1]; segments interpolate Phi at the
    knots.
    """

    knots_x: np.ndarray
    knots_y: np.ndarray
    mu: float

    @property
    def segments(self):
        return len(self.knots_x) - 1


def build_polyline(segments=8, mu=MU_DEFAULT):
    if segments < 1:
        raise ConfigError("polyline needs at least one segment")
    x = np.linspace(0.0, 1.0, segments + 1)
    y = compand(x, mu)
    return Polyline(knots_x=x, knots_y=y, mu=mu)


def polyline_eval(poly: Polyline, x):
    arr = _as_float_array(x, "polyline_eval")
    if np.any(arr < 0) or np.any(arr > 1):
        raise DomainError("polyline_eval: input outside [0, 1]")
    out = np.interp(arr, poly.knots_x, poly.knots_y)
    return out if isinstance(x, np.ndarray) else float(out)


def polyline_max_error(poly: Polyline):
    """Exact max |Phi(x) - polyline(x)| over [0, 1].

    Phi is concave, so on each segment the deviation peaks where the
    derivative matches the chord slope s: Phi'(x*) = s gives
    x* = (mu / (ln(1+mu) s) - 1) / mu. The first segment, with the
    steepest curvature, always dominates, but every segment is checked.
    """
    mu = poly.mu
    log1p_mu = math.log1p(mu)
    worst = 0.0
    for i in range(poly.segments):
        x0, x1 = poly.knots_x[i], poly.knots_x[i + 1]
        y0, y1 = poly.knots_y[i], poly.knots_y[i + 1]
        s = (y1 - y0) / (x1 - x0)
        xs = (mu / (log1p_mu * s) - 1.0) / mu
        if not x0 < xs < x1:
            continue
        gap = compand(float(xs), mu) - (y0 + s * (xs - x0))
        worst = max(worst, abs(gap))
    return worst


def polyline_segments_for(tolerance, mu=MU_DEFAULT, max_segments=1 << 20):
    """Smallest power-of-two segment count whose max deviation <= tolerance."""
    if tolerance <= 0:
        raise ConfigError("tolerance must be positive")
    k = 1
    while k <= max_segments:
        if polyline_max_error(build_polyline(k, mu)) <= tolerance:
            return k
        k *= 2
    raise ConfigError(f"tolerance {tolerance} not reachable within {max_segments} segments")


# ---------------------------------------------------------------------------
# Bit packing.
# ---------------------------------------------------------------------------


def pack_bits(codes, bits):
    """Pack integer codes, MSB first, bits per code; pad bits are zero."""
    arr = np.asarray(codes)
    if not np.issubdtype(arr.dtype, np.integer):
        raise DomainError("pack_bits: codes must be integers")
    if np.any(arr < 0) or np.any(arr >= (1 << bits)):
        raise DomainError(f"pack_bits: code outside [0, 2^{bits})")
    flat = arr.ravel().astype(np.int64)
    shifts = np.arange(bits - 1, -1, -1)
    bitmat = ((flat[:, None] >> shifts) & 1).astype(np.uint8)
    return np.packbits(bitmat.ravel()).tobytes()


def unpack_bits(buf, bits, count):
    """Inverse of pack_bits: recover `count` codes of width `bits`."""
    need_bits = bits * count
    need_bytes = (need_bits + 7) // 8
    if len(buf) < need_bytes:
        raise ShapeError(f"unpack_bits: need {need_bytes} bytes, got {len(buf)}")
    bitarr = np.unpackbits(np.frombuffer(buf, dtype=np.uint8, count=need_bytes))
    bitmat = bitarr[:need_bits].reshape(count, bits).astype(np.int64)
    weights = 1 << np.arange(bits - 1, -1, -1, dtype=np.int64)
    return bitmat @ weights


# ---------------------------------------------------------------------------
# Codeword and bit-stream file containers (little-endian throughout).
#
#   codeword file:  magic "CSIV" | version u16 | count u32 | m u32
#                   | count*m float32 values
#   bit-stream:     magic "CSIB" | version u16 | count u32 | m u32
#                   | bits u16 | mu f64 | packed codes for count*m values
#                   (one MSB-first stream, zero pad bits at the end)
# ---------------------------------------------------------------------------


def save_codewords(path, values):
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ShapeError("codeword file holds a (count, m) array")
    count, m = arr.shape
    if count > 0xFFFFFFFF or m > 0xFFFFFFFF:
        raise FormatError("codeword dimensions overflow the header")
    with open(path, "wb") as fh:
        fh.write(_CODEWORD_HEADER.pack(CODEWORD_MAGIC, FILE_VERSION, count, m))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_codewords(path):
    with open(path, "rb") as fh:
        head = fh.read(_CODEWORD_HEADER.size)
        if len(head) != _CODEWORD_HEADER.size:
            raise FormatError("truncated codeword header")
        magic, version, count, m = _CODEWORD_HEADER.unpack(head)
        if magic != CODEWORD_MAGIC:
            raise FormatError(f"bad codeword magic {magic!r}")
        if version != FILE_VERSION:
            raise FormatError(f"unsupported codeword file version {version}")
        body = fh.read()
    if len(body) != count * m * 4:
        raise FormatError(f"codeword body is {len(body)} bytes, expected {count * m * 4}")
    return np.frombuffer(body, dtype="<f4").reshape(count, m).astype(np.float32)


def save_bitstream(path, codes, bits, mu=MU_DEFAULT):
    arr = np.asarray(codes)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ShapeError("bit-stream file holds a (count, m) code array")
    count, m = arr.shape
    with open(path, "wb") as fh:
        fh.write(_BITSTREAM_HEADER.pack(BITSTREAM_MAGIC, FILE_VERSION, count, m, bits, mu))
        fh.write(pack_bits(arr, bits))


def load_bitstream(path):
    """Returns (codes array (count, m), bits, mu)."""
    with open(path, "rb") as fh:
        head = fh.read(_BITSTREAM_HEADER.size)
        if len(head) != _BITSTREAM_HEADER.size:
            raise FormatError("truncated bit-stream header")
        magic, version, count, m, bits, mu = _BITSTREAM_HEADER.unpack(head)
        if magic != BITSTREAM_MAGIC:
            raise FormatError(f"bad bit-stream magic {magic!r}")
        if version != FILE_VERSION:
            raise FormatError(f"unsupported bit-stream file version {version}")
        body = fh.read()
    need = (count * m * bits + 7) // 8
    if len(body) != need:
        raise FormatError(f"bit-stream body is {len(body)} bytes, expected {need}")
    pad = need * 8 - count * m * bits
    if pad:
        tail = np.unpackbits(np.frombuffer(body[-1:], dtype=np.uint8))
        if np.any(tail[8 - pad :]):
            raise FormatError("nonzero pad bits at end of bit stream")
    codes = unpack_bits(body, bits, count * m).reshape(count, m)
    return codes, bits, mu


# ---------------------------------------------------------------------------
# Quality metric and the straight-through estimator.
# ---------------------------------------------------------------------------


def qsnr(v, v_hat):
    """Mean over rows of ||v_i||^2 / ||v_i - v_hat_i||^2 (linear ratio).

    Rows reconstructed exactly would blow the ratio up, so they are
    excluded from the mean and reported via the second return value.
    Returns (mean_ratio, exact_count). All-exact input returns
    (inf, n_rows).
    """
    a = np.asarray(v, dtype=np.float64)
    b = np.asarray(v_hat, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"qsnr shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 1:
        a = a[None, :]
        b = b[None, :]
    sig = np.sum(a * a, axis=1)
    err = np.sum((a - b) ** 2, axis=1)
    exact = err == 0.0
    n_exact = int(np.count_nonzero(exact))
    if n_exact == a.shape[0]:
        return math.inf, n_exact
    ratio = sig[~exact] / err[~exact]
    return float(np.mean(ratio)), n_exact


def qsnr_db(v, v_hat):
    ratio, n_exact = qsnr(v, v_hat)
    if math.isinf(ratio):
        return math.inf, n_exact
    return 10.0 * math.log10(ratio), n_exact


def quantize_ste(x: "engine.Tensor", cfg: QuantizerConfig):
    """Quantize-dequantize in the forward pass, identity in the backward.

    Input is clipped to [-1, 1] before quantization; the clip is also
    treated as identity by the backward pass, matching the convention of
    passing gradients straight through the whole non-differentiable block.
    """
    clipped = np.clip(x.data, -1.0, 1.0)
    y = dequantize(quantize(clipped, cfg), cfg).astype(x.data.dtype)
    out = engine.Tensor(y, _parents=(x,))

    def backward(g):
        x.accumulate(g)

    out._backward = backward
    return out
