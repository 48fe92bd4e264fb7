"""DMNet assembly plus parameter and FLOP accounting.

Layout: 3x3 head conv -> N1 groups of (N2 x [SMT, WMT] + 3x3 conv + group
residual) -> global residual from the head feature -> bias-free 3x3 tail
conv to 3*s*s channels -> pixel shuffle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from . import ops
from .blocks import (AblationToggles, Conv, DYN_KERNEL, SMTWeights, WMTWeights,
                     named_parameters, smt_forward, wmt_forward)
from .fourier import fft2
from .tensor import Tensor

SCALES = (2, 3, 4)


@dataclass(frozen=True)
class DMNetConfig:
    channels: int = 48
    n_groups: int = 3
    n_blocks: int = 3
    scale: int = 4
    ffn_ratio: float = 2.0
    ablation: AblationToggles = field(default_factory=AblationToggles)

    def __post_init__(self):
        if self.channels < 4 or self.channels % 4:
            raise ValueError(f"channels must be a positive multiple of 4, got {self.channels}")
        if self.scale not in SCALES:
            raise ValueError(f"scale must be one of {SCALES}, got {self.scale}")
        if self.n_groups < 1 or self.n_blocks < 1:
            raise ValueError(f"n_groups and n_blocks must be >= 1, got {self.n_groups}, {self.n_blocks}")
        if self.ffn_ratio <= 0:
            raise ValueError(f"ffn_ratio must be > 0, got {self.ffn_ratio}")


@dataclass
class SWBlockWeights:
    smt: SMTWeights
    wmt: WMTWeights


@dataclass
class SWGroupWeights:
    blocks: List[SWBlockWeights]
    conv: Conv


@dataclass
class DMNetWeights:
    head: Conv
    groups: List[SWGroupWeights]
    tail: Conv

    @classmethod
    def init(cls, cfg: DMNetConfig, seed: int = 0) -> "DMNetWeights":
        rng = np.random.default_rng(seed)
        c, r = cfg.channels, cfg.ffn_ratio
        head = Conv.init(rng, 3, c, 3)
        groups = []
        for _ in range(cfg.n_groups):
            blocks = [SWBlockWeights(SMTWeights.init(rng, c, r), WMTWeights.init(rng, c, r, cfg.ablation))
                      for _ in range(cfg.n_blocks)]
            groups.append(SWGroupWeights(blocks, Conv.init(rng, c, c, 3)))
        tail = Conv.init(rng, c, 3 * cfg.scale ** 2, 3, bias=False)
        return cls(head, groups, tail)

    def named_parameters(self):
        return list(named_parameters(self))

    def parameters(self) -> List[Tensor]:
        return [t for _, t in named_parameters(self)]

    def num_params(self) -> int:
        return sum(t.size for t in self.parameters())


def body(cfg: DMNetConfig, w: DMNetWeights, lr: Tensor) -> Tensor:
    f0 = w.head(lr)
    x = f0
    for group in w.groups:
        y = x
        for block in group.blocks:
            y = smt_forward(y, block.smt)
            y = wmt_forward(y, block.wmt, cfg.ablation)
        x = ops.add(group.conv(y), x)
    return ops.add(x, f0)


def super_resolve(cfg: DMNetConfig, w: DMNetWeights, lr: Tensor) -> Tensor:
    """Spatial-domain output only, (n, 3, s*h, s*w)."""
    if lr.ndim != 4 or lr.shape[1] != 3:
        raise ValueError(f"expected an (n, 3, h, w) input, got {lr.shape}")
    h, wd = lr.shape[-2:]
    if h % 2 or wd % 2:
        raise ValueError(f"input spatial dims must be even, got {h}x{wd}")
    return ops.pixel_shuffle(w.tail(body(cfg, w, lr)), cfg.scale)


def forward(cfg: DMNetConfig, w: DMNetWeights, lr: Tensor):
    """Return ``(sr, spectrum)``: the SR image and its unnormalized 2-D DFT."""
    sr = super_resolve(cfg, w, lr)
    return sr, fft2(sr)


# ----------------------------------------------------------------------------
# accounting


@dataclass
class LayerCost:
    name: str
    params: int
    flops: int


def _conv(name, cin, cout, k, h, w, groups=1, bias=True) -> LayerCost:
    params = cout * (cin // groups) * k * k + (cout if bias else 0)
    return LayerCost(name, params, 2 * h * w * cout * (cin // groups) * k * k)


def _norm(name, c, h, w) -> LayerCost:
    # mean, variance, normalize, affine: four multiply-accumulates per element
    return LayerCost(name, 2 * c, 8 * c * h * w)


def _attention(name, c, n) -> LayerCost:
    # Q K^T and attn @ V, each C*C*N multiply-accumulates
    return LayerCost(name, 1, 2 * 2 * c * c * n)


def _ffn(prefix, c, r, h, w) -> List[LayerCost]:
    hidden = int(round(c * r))
    return [
        _conv(f"{prefix}.expand", c, 2 * hidden, 1, h, w),
        _conv(f"{prefix}.dw", 2 * hidden, 2 * hidden, 3, h, w, groups=2 * hidden),
        LayerCost(f"{prefix}.gate", 0, hidden * h * w),
        _conv(f"{prefix}.project", hidden, c, 1, h, w),
    ]


def layer_table(cfg: DMNetConfig, lr_h: int, lr_w: int) -> List[LayerCost]:
    """Per-layer parameter and FLOP counts at the given input size.

    FLOPs are twice the multiply-accumulates of convolutions and attention
    matmuls, plus 8 per element for layer norms and 1 per element for the
    FFN gate and the dynamic modulation.  Wavelet transforms, softmax and
    activations are not counted.
    """
    c, r, h, w = cfg.channels, cfg.ffn_ratio, lr_h, lr_w
    ab = cfg.ablation
    rows = [_conv("head", 3, c, 3, h, w)]
    for gi in range(cfg.n_groups):
        for bi in range(cfg.n_blocks):
            p = f"groups.{gi}.blocks.{bi}"
            rows += [
                _norm(f"{p}.smt.norm1", c, h, w),
                _conv(f"{p}.smt.attn.pw", c, 3 * c, 1, h, w),
                _conv(f"{p}.smt.attn.dw", 3 * c, 3 * c, 3, h, w, groups=3 * c),
                _attention(f"{p}.smt.attn.attention", c, h * w),
                _conv(f"{p}.smt.attn.proj", c, c, 1, h, w),
                _norm(f"{p}.smt.norm2", c, h, w),
                *_ffn(f"{p}.smt.ffn", c, r, h, w),
            ]
            if ab.freq_domain == "wavelet":
                inner, fh, fw = c // 4, h // 2, w // 2
            else:
                inner, fh, fw = c // 2, h, w
            rows += [
                _norm(f"{p}.wmt.norm1", c, h, w),
                _conv(f"{p}.wmt.attn.reduce", c, inner, 1, h, w),
                _conv(f"{p}.wmt.attn.pw", c, 3 * c, 1, fh, fw),
                _conv(f"{p}.wmt.attn.dw", 3 * c, 3 * c, 3, fh, fw, groups=3 * c),
                _attention(f"{p}.wmt.attn.attention", c, fh * fw),
            ]
            if ab.dynamic:
                rows += [
                    _conv(f"{p}.wmt.attn.dyn", c, c, DYN_KERNEL, fh, fw, groups=c // 4),
                    LayerCost(f"{p}.wmt.attn.modulate", 0, c * fh * fw),
                ]
            rows += [
                _conv(f"{p}.wmt.attn.expand", inner, c, 1, h, w),
                _norm(f"{p}.wmt.norm2", c, h, w),
                *_ffn(f"{p}.wmt.ffn", c, r, h, w),
            ]
        rows.append(_conv(f"groups.{gi}.conv", c, c, 3, h, w))
    rows.append(_conv("tail", c, 3 * cfg.scale ** 2, 3, h, w, bias=False))
    return rows


def count_params(cfg: DMNetConfig) -> int:
    return sum(row.params for row in layer_table(cfg, 2, 2))


def count_flops(cfg: DMNetConfig, out_h: int, out_w: int) -> int:
    """FLOPs for producing an ``out_h x out_w`` image (input is ``out // scale``)."""
    return sum(row.flops for row in layer_table(cfg, out_h // cfg.scale, out_w // cfg.scale))


def upscale(cfg: DMNetConfig, w: DMNetWeights, img: np.ndarray) -> np.ndarray:
    """Super-resolve one (3, h, w) image of any size.

    Odd dimensions are reflect-padded to even before the forward pass and
    the padding is cropped from the output.  No clamping is applied.
    """
    h, wd = img.shape[-2:]
    ph, pw = h % 2, wd % 2
    x = np.asarray(img, dtype=np.float32)[None]
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="reflect")
    sr = super_resolve(cfg, w, Tensor(x)).data[0]
    s = cfg.scale
    return sr[:, : h * s, : wd * s]
