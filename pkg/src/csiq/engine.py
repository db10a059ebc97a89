"""Minimal reverse-mode differentiable engine for dense-layer models.

Tensors wrap numpy arrays (float32 for training, float64 for gradient
checks; the dtype of the input arrays is preserved). Reductions accumulate
in float64 regardless of the storage dtype. Every op validates finiteness
of its forward output so NaN/Inf surface immediately instead of
propagating.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, FormatError, NumericError, ShapeError

# Toggle for the per-op finiteness validation. Kept on by default; the
# cost is one vectorized isfinite pass per op output.
CHECK_FINITE = True

CKPT_MAGIC = b"CSIC"
CKPT_VERSION = 1


def _check_finite(arr, op_name):
    if CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise NumericError(f"{op_name} produced a non-finite value")


class Tensor:
    """A node in the computation graph: value, gradient, backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def accumulate(self, g):
        """Add g into this node's gradient buffer (allocated lazily)."""
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros(self.data.shape, dtype=self.data.dtype)
        self.grad += g

    def backward(self):
        """Reverse-mode sweep from a scalar root."""
        if self.data.ndim != 0:
            raise ShapeError("backward() requires a scalar root")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones((), dtype=self.data.dtype)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def tensor(values, dtype=np.float32, requires_grad=False):
    """Wrap values in a leaf Tensor. Copies the input."""
    data = np.array(values, dtype=dtype)
    _check_finite(data, "tensor")
    return Tensor(data, requires_grad=requires_grad)


def constant(array):
    """Wrap an existing array as a non-differentiable leaf without copying."""
    _check_finite(array, "constant")
    return Tensor(array)


class Parameter(Tensor):
    """Trainable leaf with Adam moment buffers."""

    __slots__ = ("m", "v")

    def __init__(self, data):
        super().__init__(data, requires_grad=True)
        self.m = np.zeros_like(data)
        self.v = np.zeros_like(data)


class ParamSet:
    """Named parameters with per-group freeze flags and an optimizer step count.

    Group = the name prefix up to the first dot, e.g. "en.w0" belongs to
    group "en". Frozen groups are skipped entirely by adam_step, so their
    bytes (values and moments) never change.
    """

    def __init__(self):
        self._params: dict[str, Parameter] = {}
        self.frozen: set[str] = set()
        self.step = 0

    @staticmethod
    def group_of(name):
        return name.split(".", 1)[0]

    def add(self, name, array):
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        p = Parameter(np.array(array))
        self._params[name] = p
        return p

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def groups(self):
        return sorted({self.group_of(n) for n in self._params})

    def freeze(self, group):
        if group not in self.groups():
            raise ConfigError(f"no parameter group {group!r}")
        self.frozen.add(group)

    def unfreeze(self, group):
        self.frozen.discard(group)

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def group_bytes(self, group):
        """Concatenated raw bytes of all parameters in a group, in name order."""
        chunks = [p.data.tobytes() for n, p in self._params.items() if self.group_of(n) == group]
        return b"".join(chunks)

    def snapshot(self):
        """Copy of all values, Adam moments, and the step counter."""
        return ({n: (p.data.copy(), p.m.copy(), p.v.copy()) for n, p in self._params.items()},
                self.step)

    def restore(self, state):
        tensors, step = state
        if set(tensors) != set(self._params):
            raise ConfigError("snapshot does not match this ParamSet")
        for name, (data, m, v) in tensors.items():
            p = self._params[name]
            p.data[...] = data
            p.m[...] = m
            p.v[...] = v
        self.step = step


def adam_step(params: ParamSet, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with bias correction. Frozen groups are untouched."""
    params.step += 1
    t = params.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        if ParamSet.group_of(name) in params.frozen:
            continue
        if p.grad is None:
            raise NumericError(f"adam_step: parameter {name!r} has no gradient")
        g = p.grad
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        p.data -= lr * (p.m / bc1) / (np.sqrt(p.v / bc2) + eps)


@dataclass(frozen=True)
class LrSchedule:
    kind: str = "cosine"  # constant | cosine
    eta_max: float = 1e-3
    eta_min: float = 0.0
    total_steps: int = 100


def lr_at(schedule: LrSchedule, step):
    """Learning rate at an integer step in [0, total_steps]."""
    if not 0 <= step <= schedule.total_steps:
        raise DomainError(f"step {step} outside [0, {schedule.total_steps}]")
    if schedule.kind == "constant":
        return schedule.eta_max
    if schedule.kind == "cosine":
        if schedule.total_steps == 0:
            return schedule.eta_max
        span = schedule.eta_max - schedule.eta_min
        return schedule.eta_min + 0.5 * span * (1.0 + math.cos(math.pi * step / schedule.total_steps))
    raise ConfigError(f"unknown lr schedule kind {schedule.kind!r}")


# ---------------------------------------------------------------------------
# Ops. Each returns a Tensor whose _backward accumulates exact analytic
# gradients into its parents.
# ---------------------------------------------------------------------------


def dense(x: Tensor, w: Tensor, b: Tensor):
    """y = x @ w + b for x:(n,in), w:(in,out), b:(out,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError("dense expects x:(n,in), w:(in,out), b:(out,)")
    if x.data.shape[1] != w.data.shape[0] or w.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"dense shape mismatch: x{x.data.shape} w{w.data.shape} b{b.data.shape}"
        )
    y = x.data @ w.data + b.data
    _check_finite(y, "dense")
    out = Tensor(y, _parents=(x, w, b))

    def backward(g):
        x.accumulate(g @ w.data.T)
        w.accumulate(x.data.T @ g)
        b.accumulate(g.sum(axis=0))

    out._backward = backward
    return out


def tanh(x: Tensor):
    y = np.tanh(x.data)
    _check_finite(y, "tanh")
    out = Tensor(y, _parents=(x,))

    def backward(g):
        x.accumulate(g * (1.0 - y * y))

    out._backward = backward
    return out


def leaky_relu(x: Tensor, slope=0.3):
    y = np.where(x.data >= 0, x.data, slope * x.data)
    _check_finite(y, "leaky_relu")
    out = Tensor(y, _parents=(x,))

    def backward(g):
        x.accumulate(g * np.where(x.data >= 0, 1.0, slope))

    out._backward = backward
    return out


def add(a: Tensor, b: Tensor):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data, _parents=(a, b))
    _check_finite(out.data, "add")

    def backward(g):
        a.accumulate(g)
        b.accumulate(g)

    out._backward = backward
    return out


def sub(a: Tensor, b: Tensor):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data - b.data, _parents=(a, b))
    _check_finite(out.data, "sub")

    def backward(g):
        a.accumulate(g)
        b.accumulate(-g)

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data, _parents=(a, b))
    _check_finite(out.data, "mul")

    def backward(g):
        a.accumulate(g * b.data)
        b.accumulate(g * a.data)

    out._backward = backward
    return out


def div(a: Tensor, b: Tensor):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"div shape mismatch: {a.data.shape} vs {b.data.shape}")
    with np.errstate(divide="ignore", invalid="ignore"):
        y = a.data / b.data
    _check_finite(y, "div")
    out = Tensor(y, _parents=(a, b))

    def backward(g):
        a.accumulate(g / b.data)
        b.accumulate(-g * a.data / (b.data * b.data))

    out._backward = backward
    return out


def scale(x: Tensor, c):
    out = Tensor(x.data * c, _parents=(x,))
    _check_finite(out.data, "scale")

    def backward(g):
        x.accumulate(g * c)

    out._backward = backward
    return out


def add_const(x: Tensor, c):
    out = Tensor(x.data + c, _parents=(x,))
    _check_finite(out.data, "add_const")

    def backward(g):
        x.accumulate(g)

    out._backward = backward
    return out


def sumsq_rows(x: Tensor):
    """Per-row sum of squares: (n,m) -> (n,), accumulated in float64."""
    if x.data.ndim != 2:
        raise ShapeError("sumsq_rows expects a 2-d tensor")
    y = np.sum(np.square(x.data, dtype=np.float64), axis=1, dtype=np.float64)
    _check_finite(y, "sumsq_rows")
    out = Tensor(y.astype(np.float64), _parents=(x,))

    def backward(g):
        x.accumulate((2.0 * g[:, None]) * x.data)

    out._backward = backward
    return out


def mean_all(x: Tensor):
    """Mean over all elements, as a float64 scalar."""
    n = x.data.size
    val = np.asarray(np.sum(x.data, dtype=np.float64) / n)
    _check_finite(val, "mean_all")
    out = Tensor(val, _parents=(x,))

    def backward(g):
        x.accumulate(np.full(x.data.shape, g / n, dtype=np.float64))

    out._backward = backward
    return out


def sum_all(x: Tensor):
    """Sum over all elements, as a float64 scalar."""
    val = np.asarray(np.sum(x.data, dtype=np.float64))
    _check_finite(val, "sum_all")
    out = Tensor(val, _parents=(x,))

    def backward(g):
        x.accumulate(np.full(x.data.shape, g, dtype=np.float64))

    out._backward = backward
    return out


def mse_loss(pred: Tensor, target: Tensor):
    """(1/N) sum_i ||pred_i - target_i||^2 with N = pred.shape[0].

    Per-sample squared Euclidean norm averaged over the batch; the sum
    runs over every non-batch element.
    """
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse_loss shape mismatch: {pred.data.shape} vs {target.data.shape}")
    n = pred.data.shape[0] if pred.data.ndim > 0 else 1
    diff = pred.data - target.data
    val = np.asarray(np.sum(np.square(diff, dtype=np.float64), dtype=np.float64) / n)
    _check_finite(val, "mse_loss")
    out = Tensor(val, _parents=(pred, target))

    def backward(g):
        gd = (2.0 / n) * g * diff
        pred.accumulate(gd)
        target.accumulate(-gd)

    out._backward = backward
    return out


def l1_norm(x: Tensor):
    """sum_i |x_i| with subgradient 0 at 0."""
    val = np.asarray(np.sum(np.abs(x.data), dtype=np.float64))
    _check_finite(val, "l1_norm")
    out = Tensor(val, _parents=(x,))

    def backward(g):
        x.accumulate(g * np.sign(x.data))

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# Checkpoint I/O.
#
# Layout (little-endian):
#   magic "CSIC" | version u16 | meta_len u32 | meta json (utf-8)
#   | step u64 | count u32
#   then per parameter:
#   name_len u16 | name utf-8 | ndim u8 | dims u32 * ndim
#   | values f32 * n | adam_m f32 * n | adam_v f32 * n
# The frozen-group map travels in the meta json under "frozen".
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: ParamSet, meta=None):
    meta = dict(meta or {})
    meta["frozen"] = sorted(params.frozen)
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<H", CKPT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", params.step))
        fh.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            nb = name.encode("utf-8")
            if len(nb) > 0xFFFF:
                raise FormatError("parameter name too long")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            dims = p.data.shape
            if len(dims) > 0xFF or any(d > 0xFFFFFFFF for d in dims):
                raise FormatError(f"parameter {name!r} shape does not fit the header")
            fh.write(struct.pack("<B", len(dims)))
            fh.write(struct.pack(f"<{len(dims)}I", *dims))
            for arr in (p.data, p.m, p.v):
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path):
    """Returns (ParamSet, meta dict)."""
    params = ParamSet()
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != CKPT_MAGIC:
            raise FormatError("bad checkpoint magic")
        (version,) = struct.unpack("<H", _read_exact(fh, 2, "version"))
        if version != CKPT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack("<I", _read_exact(fh, 4, "meta length"))
        meta = json.loads(_read_exact(fh, meta_len, "meta").decode("utf-8"))
        (params.step,) = struct.unpack("<Q", _read_exact(fh, 8, "step"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "count"))
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "ndim"))
            dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "dims"))
            n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            arrays = []
            for what in ("values", "adam_m", "adam_v"):
                raw = _read_exact(fh, 4 * n, what)
                arrays.append(np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32))
            p = params.add(name, arrays[0])
            p.m = arrays[1]
            p.v = arrays[2]
        if fh.read(1):
            raise FormatError("trailing bytes after checkpoint payload")
    params.frozen = set(meta.get("frozen", []))
    return params, meta
