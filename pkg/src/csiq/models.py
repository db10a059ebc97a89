"""Encoder/decoder stacks, codeword adaptors, and complexity accounting.

The encoder compresses a flattened channel sample to an M-element
codeword bounded in (-1, 1) by a final tanh; the decoder mirrors it. An
adaptor is a residual module applied to the dequantized codeword before
decoding:

  bottle_fc        v + FC(M -> M/8) . act . FC(M/8 -> M)
  para_bottle_fc   v + branch(M/8) + branch(M/16)
  offset_net       v + FC(M -> M) . act . FC(M -> M) . act . FC(M -> M)
  none             identity (also used by the loss-side codeword shaping)

Complexity counts are exact: parameters = weights + biases, FLOPs = one
multiply-accumulate per weight per sample (biases not counted).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import engine, quant
from .errors import ConfigError, ShapeError

ADAPTOR_KINDS = ("none", "bottle_fc", "para_bottle_fc", "offset_net")
LEAKY_SLOPE = 0.3
HIDDEN_DEFAULT = (1024,)


@dataclass(frozen=True)
class EncoderSpec:
    nc: int
    nt: int
    m: int
    hidden: tuple = HIDDEN_DEFAULT

    def __post_init__(self):
        if self.nc < 1 or self.nt < 1 or self.m < 1:
            raise ConfigError("EncoderSpec dimensions must be positive")

    @property
    def input_dim(self):
        return 2 * self.nc * self.nt

    @property
    def cr(self):
        return self.input_dim // self.m


@dataclass(frozen=True)
class DecoderSpec:
    nc: int
    nt: int
    m: int
    hidden: tuple = HIDDEN_DEFAULT  # listed encoder-side; applied reversed

    @property
    def input_dim(self):
        return 2 * self.nc * self.nt


@dataclass(frozen=True)
class AdaptorSpec:
    kind: str
    m: int

    def __post_init__(self):
        if self.kind not in ADAPTOR_KINDS:
            raise ConfigError(f"unknown adaptor kind {self.kind!r}")
        if self.kind == "bottle_fc" and self.m % 8:
            raise ConfigError("bottle_fc needs M divisible by 8")
        if self.kind == "para_bottle_fc" and self.m % 16:
            raise ConfigError("para_bottle_fc needs M divisible by 16")


def encoder_for_cr(nc, nt, cr, hidden=HIDDEN_DEFAULT):
    """EncoderSpec with M = 2*Nc*Nt / CR; the division must be exact."""
    raw = 2 * nc * nt
    if cr < 1 or raw % cr:
        raise ConfigError(f"CR {cr} does not divide 2*Nc*Nt = {raw}")
    return EncoderSpec(nc=nc, nt=nt, m=raw // cr, hidden=tuple(hidden))


def mirror(enc: EncoderSpec):
    return DecoderSpec(nc=enc.nc, nt=enc.nt, m=enc.m, hidden=enc.hidden)


def encoder_dims(spec: EncoderSpec):
    return [spec.input_dim, *spec.hidden, spec.m]


def decoder_dims(spec: DecoderSpec):
    return [spec.m, *reversed(spec.hidden), spec.input_dim]


def adaptor_branch_dims(spec: AdaptorSpec):
    m = spec.m
    if spec.kind == "none":
        return []
    if spec.kind == "bottle_fc":
        return [[m, m // 8, m]]
    if spec.kind == "para_bottle_fc":
        return [[m, m // 8, m], [m, m // 16, m]]
    return [[m, m, m, m]]


def _chain_counts(dims):
    weights = sum(fi * fo for fi, fo in zip(dims[:-1], dims[1:]))
    biases = sum(dims[1:])
    return weights, biases


def _spec_dims(spec):
    if isinstance(spec, EncoderSpec):
        return [encoder_dims(spec)]
    if isinstance(spec, DecoderSpec):
        return [decoder_dims(spec)]
    if isinstance(spec, AdaptorSpec):
        return adaptor_branch_dims(spec)
    raise ConfigError(f"not a model spec: {spec!r}")


def weight_count(spec):
    return sum(_chain_counts(d)[0] for d in _spec_dims(spec))


def param_count(spec):
    return sum(sum(_chain_counts(d)) for d in _spec_dims(spec))


def flop_count(spec):
    """Multiply-accumulates per sample; 1 MAC = 1 FLOP, biases free."""
    return weight_count(spec)


class ForwardOut(NamedTuple):
    v: engine.Tensor       # encoder output
    vq: engine.Tensor      # after quantize/dequantize (v if bypassed)
    va: engine.Tensor      # after the adaptor
    xhat: engine.Tensor    # decoder output


class FeedbackModel:
    """Encoder + adaptor + decoder over one shared ParamSet.

    Parameter groups: "en", "na", "de". Adaptor branch parameters are
    named na.br<k>.w<i> / na.br<k>.b<i>.
    """

    def __init__(self, enc: EncoderSpec, dec: DecoderSpec, adaptor: AdaptorSpec, params):
        if enc.m != dec.m or enc.m != adaptor.m:
            raise ConfigError("encoder, decoder, and adaptor disagree on M")
        self.enc = enc
        self.dec = dec
        self.adaptor = adaptor
        self.params = params

    @classmethod
    def build(cls, enc, dec, adaptor, seed):
        """Glorot-uniform weights, zero biases; the final layer of every
        adaptor branch is zeroed so the adaptor starts as an exact identity."""
        rng = np.random.default_rng(seed)
        params = engine.ParamSet()

        def glorot(fi, fo):
            lim = math.sqrt(6.0 / (fi + fo))
            return rng.uniform(-lim, lim, size=(fi, fo)).astype(np.float32)

        def add_chain(prefix, dims, zero_last=False):
            n_layers = len(dims) - 1
            for i, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
                zero = zero_last and i == n_layers - 1
                w = np.zeros((fi, fo), dtype=np.float32) if zero else glorot(fi, fo)
                params.add(f"{prefix}.w{i}", w)
                params.add(f"{prefix}.b{i}", np.zeros(fo, dtype=np.float32))

        add_chain("en", encoder_dims(enc))
        for bi, dims in enumerate(adaptor_branch_dims(adaptor)):
            add_chain(f"na.br{bi}", dims, zero_last=True)
        add_chain("de", decoder_dims(dec))
        return cls(enc, dec, adaptor, params)

    def encode(self, x: engine.Tensor):
        if x.data.ndim != 2 or x.data.shape[1] != self.enc.input_dim:
            raise ShapeError(f"encoder expects (n, {self.enc.input_dim}), got {x.data.shape}")
        h = x
        dims = encoder_dims(self.enc)
        last = len(dims) - 2
        for i in range(len(dims) - 1):
            h = engine.dense(h, self.params[f"en.w{i}"], self.params[f"en.b{i}"])
            h = engine.tanh(h) if i == last else engine.leaky_relu(h, LEAKY_SLOPE)
        return h

    def adapt(self, v: engine.Tensor):
        if self.adaptor.kind == "none":
            return v
        if v.data.ndim != 2 or v.data.shape[1] != self.adaptor.m:
            raise ShapeError(f"adaptor expects (n, {self.adaptor.m}), got {v.data.shape}")
        out = v
        for bi, dims in enumerate(adaptor_branch_dims(self.adaptor)):
            h = v
            last = len(dims) - 2
            for i in range(len(dims) - 1):
                h = engine.dense(h, self.params[f"na.br{bi}.w{i}"], self.params[f"na.br{bi}.b{i}"])
                if i < last:
                    h = engine.leaky_relu(h, LEAKY_SLOPE)
            out = engine.add(out, h)
        return out

    def decode(self, v: engine.Tensor):
        if v.data.ndim != 2 or v.data.shape[1] != self.dec.m:
            raise ShapeError(f"decoder expects (n, {self.dec.m}), got {v.data.shape}")
        h = v
        dims = decoder_dims(self.dec)
        last = len(dims) - 2
        for i in range(len(dims) - 1):
            h = engine.dense(h, self.params[f"de.w{i}"], self.params[f"de.b{i}"])
            if i < last:
                h = engine.leaky_relu(h, LEAKY_SLOPE)
        return h

    def forward(self, x: engine.Tensor, qcfg=None):
        """Full pipeline; qcfg=None bypasses the quantizer (NQ path)."""
        v = self.encode(x)
        vq = quant.quantize_ste(v, qcfg) if qcfg is not None else v
        va = self.adapt(vq)
        xhat = self.decode(va)
        return ForwardOut(v=v, vq=vq, va=va, xhat=xhat)

    def spec_meta(self):
        return {
            "nc": self.enc.nc,
            "nt": self.enc.nt,
            "m": self.enc.m,
            "hidden": list(self.enc.hidden),
            "adaptor": self.adaptor.kind,
        }

    @classmethod
    def from_meta(cls, meta, params):
        enc = EncoderSpec(
            nc=int(meta["nc"]), nt=int(meta["nt"]), m=int(meta["m"]),
            hidden=tuple(int(h) for h in meta["hidden"]),
        )
        return cls(enc, mirror(enc), AdaptorSpec(kind=meta["adaptor"], m=enc.m), params)

    def save(self, path, extra_meta=None):
        meta = dict(extra_meta or {})
        meta["model"] = self.spec_meta()
        engine.save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path):
        params, meta = engine.load_checkpoint(path)
        return cls.from_meta(meta["model"], params), meta
