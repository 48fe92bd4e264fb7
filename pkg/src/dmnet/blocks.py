"""Spatial/wavelet modulation attention blocks and their Transformer wrappers.

Both attention blocks compute a single-head channel attention: Q, K and V
are (C, positions) matrices, Q and K are L2-normalized over positions, and
the output is ``softmax(Q K^T / alpha) V`` with a learnable temperature
``alpha = exp(log_alpha)``.

WMA (wavelet modulation attention) runs this on the Haar subbands of a
channel-reduced feature, so the attention sees a quarter of the spatial
positions.  A grouped 7x7 convolution of the subband stack produces a
per-position weight field that multiplies the attention output before the
inverse transform.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from . import ops
from .fourier import fft2_stacked, ifft2_stacked
from .tensor import Tensor
from .wavelet import dwt_stacked, idwt_stacked

INIT_STD = 0.02
DYN_KERNEL = 7
FREQ_DOMAINS = ("wavelet", "fourier")
FREQ_LOSSES = ("fourier", "wavelet")


def trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std) truncated to [-2 std, 2 std] by resampling."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2
    return (out * std).astype(np.float32)


def param(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=True)


@dataclass
class Conv:
    weight: Tensor
    bias: Optional[Tensor]
    padding: int = 0
    groups: int = 1

    @classmethod
    def init(cls, rng, cin: int, cout: int, k: int = 1, groups: int = 1, bias: bool = True) -> "Conv":
        w = param(trunc_normal(rng, (cout, cin // groups, k, k)))
        b = param(np.zeros(cout)) if bias else None
        return cls(w, b, padding=k // 2, groups=groups)

    @classmethod
    def depthwise(cls, rng, c: int, k: int = 3) -> "Conv":
        return cls.init(rng, c, c, k, groups=c)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, 1, self.padding, self.groups)


@dataclass
class Norm:
    gamma: Tensor
    beta: Tensor

    @classmethod
    def init(cls, c: int) -> "Norm":
        return cls(param(np.ones(c)), param(np.zeros(c)))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, eps=1e-6)


@dataclass(frozen=True)
class AblationToggles:
    """Switches for the WMA ablation variants.

    ``freq_loss`` only affects training; the network ignores it.
    """

    dynamic: bool = True
    freq_domain: str = "wavelet"
    freq_loss: str = "fourier"

    def __post_init__(self):
        if self.freq_domain not in FREQ_DOMAINS:
            raise ValueError(f"freq_domain must be one of {FREQ_DOMAINS}, got {self.freq_domain!r}")
        if self.freq_loss not in FREQ_LOSSES:
            raise ValueError(f"freq_loss must be one of {FREQ_LOSSES}, got {self.freq_loss!r}")


@dataclass
class SMAWeights:
    pw: Conv
    dw: Conv
    log_alpha: Tensor
    proj: Conv

    @classmethod
    def init(cls, rng, c: int) -> "SMAWeights":
        return cls(pw=Conv.init(rng, c, 3 * c), dw=Conv.depthwise(rng, 3 * c),
                   log_alpha=param(np.zeros(1)), proj=Conv.init(rng, c, c))


@dataclass
class WMAWeights:
    reduce: Conv
    pw: Conv
    dw: Conv
    log_alpha: Tensor
    dyn: Optional[Conv]
    expand: Conv

    @classmethod
    def init(cls, rng, c: int, variant: AblationToggles = AblationToggles()) -> "WMAWeights":
        if c % 4:
            raise ValueError(f"WMA needs channels divisible by 4, got {c}")
        # the subband (or re/im) stack always has c channels
        inner = c // 4 if variant.freq_domain == "wavelet" else c // 2
        return cls(
            reduce=Conv.init(rng, c, inner),
            pw=Conv.init(rng, c, 3 * c),
            dw=Conv.depthwise(rng, 3 * c),
            log_alpha=param(np.zeros(1)),
            dyn=Conv.init(rng, c, c, DYN_KERNEL, groups=c // 4) if variant.dynamic else None,
            expand=Conv.init(rng, inner, c),
        )


@dataclass
class FFNWeights:
    expand: Conv
    dw: Conv
    project: Conv

    @classmethod
    def init(cls, rng, c: int, ratio: float = 2.0) -> "FFNWeights":
        hidden = int(round(c * ratio))
        if hidden < 1:
            raise ValueError(f"FFN expansion ratio {ratio} gives no hidden channels")
        return cls(expand=Conv.init(rng, c, 2 * hidden), dw=Conv.depthwise(rng, 2 * hidden),
                   project=Conv.init(rng, hidden, c))


@dataclass
class SMTWeights:
    norm1: Norm
    attn: SMAWeights
    norm2: Norm
    ffn: FFNWeights

    @classmethod
    def init(cls, rng, c: int, ratio: float = 2.0) -> "SMTWeights":
        return cls(Norm.init(c), SMAWeights.init(rng, c), Norm.init(c), FFNWeights.init(rng, c, ratio))


@dataclass
class WMTWeights:
    norm1: Norm
    attn: WMAWeights
    norm2: Norm
    ffn: FFNWeights

    @classmethod
    def init(cls, rng, c: int, ratio: float = 2.0, variant: AblationToggles = AblationToggles()) -> "WMTWeights":
        return cls(Norm.init(c), WMAWeights.init(rng, c, variant), Norm.init(c), FFNWeights.init(rng, c, ratio))


def named_parameters(obj, prefix: str = "") -> Iterator[tuple]:
    """Yield ``(dotted_name, tensor)`` for every parameter, in declaration order."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            val = getattr(obj, f.name)
            if val is not None:
                yield from named_parameters(val, f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, val in enumerate(obj):
            yield from named_parameters(val, f"{prefix}.{i}" if prefix else str(i))


# ----------------------------------------------------------------------------
# forward passes


def channel_attention(qkv: Tensor, log_alpha: Tensor, probe: Optional[dict] = None) -> Tensor:
    """``softmax(Q K^T / alpha) V`` over channels for a (n, 3C, h, w) stack."""
    n, c3, h, w = qkv.shape
    c = c3 // 3
    flat = ops.reshape(qkv, (n, c3, h * w))
    q, k, v = ops.split(flat, [c, c, c], axis=1)
    q = ops.l2_normalize(q, axis=-1)
    k = ops.l2_normalize(k, axis=-1)
    logits = ops.matmul(q, ops.permute(k, (0, 2, 1)))
    logits = ops.mul(logits, ops.exp(ops.neg(log_alpha)))
    attn = ops.softmax(logits, axis=-1)
    if probe is not None:
        probe["attn"] = attn
        probe["positions"] = h * w
    return ops.reshape(ops.matmul(attn, v), (n, c, h, w))


def sma_forward(x: Tensor, w: SMAWeights, probe: Optional[dict] = None) -> Tensor:
    qkv = w.dw(w.pw(x))
    return w.proj(channel_attention(qkv, w.log_alpha, probe))


def wma_forward(x: Tensor, w: WMAWeights, variant: AblationToggles = AblationToggles(),
                probe: Optional[dict] = None) -> Tensor:
    n, c, h, wd = x.shape
    reduced = w.reduce(x)
    if variant.freq_domain == "wavelet":
        if h % 2 or wd % 2:
            raise ValueError(f"WMA needs even spatial dims, got {h}x{wd}")
        feats = dwt_stacked(reduced)
    else:
        feats = fft2_stacked(reduced, norm="ortho")
    qkv = w.dw(w.pw(feats))
    local = {} if probe is None else probe
    modulated = channel_attention(qkv, w.log_alpha, local)
    attn = local["attn"]
    if attn.shape[-2:] != (c, c):
        raise AssertionError(f"WMA attention is {attn.shape[-2:]}, expected ({c}, {c})")
    if variant.freq_domain == "wavelet" and local["positions"] * 4 != h * wd:
        raise AssertionError(f"WMA attends over {local['positions']} positions, expected {h * wd // 4}")
    if variant.dynamic:
        if w.dyn is None:
            raise ValueError("dynamic branch enabled but WMA weights have no dyn conv")
        modulated = ops.mul(modulated, w.dyn(feats))
    if variant.freq_domain == "wavelet":
        back = idwt_stacked(modulated)
    else:
        back = ifft2_stacked(modulated, norm="ortho")
    return w.expand(back)


def ffn_forward(x: Tensor, w: FFNWeights) -> Tensor:
    hidden = w.project.weight.shape[1]
    a, b = ops.split(w.dw(w.expand(x)), [hidden, hidden], axis=1)
    return w.project(ops.mul(ops.gelu(a), b))


def smt_forward(x: Tensor, w: SMTWeights) -> Tensor:
    x = ops.add(sma_forward(w.norm1(x), w.attn), x)
    return ops.add(ffn_forward(w.norm2(x), w.ffn), x)


def wmt_forward(x: Tensor, w: WMTWeights, variant: AblationToggles = AblationToggles()) -> Tensor:
    x = ops.add(wma_forward(w.norm1(x), w.attn, variant), x)
    return ops.add(ffn_forward(w.norm2(x), w.ffn), x)
