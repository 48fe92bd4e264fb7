"""2-D DFT, amplitude/phase views and the Fourier-domain L1 loss.

Transforms are computed with ``numpy.fft`` in float64 and cast back to the
input dtype.  A complex field is carried as two real tensors; the
``*_stacked`` variants put real and imaginary parts side by side along the
channel axis, ``[re, im]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Tensor, record

_ADJOINT_NORM = {"backward": "forward", "forward": "backward", "ortho": "ortho"}


@dataclass
class ComplexField:
    re: Tensor
    im: Tensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ValueError(f"re/im shapes differ: {self.re.shape} vs {self.im.shape}")

    @property
    def shape(self) -> tuple:
        return self.re.shape

    def to_numpy(self) -> np.ndarray:
        return self.re.data.astype(np.float64) + 1j * self.im.data.astype(np.float64)


def _real_bins(h: int, w: int):
    rows = [0] + ([h // 2] if h % 2 == 0 else [])
    cols = [0] + ([w // 2] if w % 2 == 0 else [])
    return rows, cols


def fft2_stacked(x: Tensor, norm: str = "backward") -> Tensor:
    """DFT over the last two axes of a real (n, c, h, w) tensor -> (n, 2c, h, w)."""
    if norm not in _ADJOINT_NORM:
        raise ValueError(f"unknown DFT normalization {norm!r}")
    h, w = x.shape[-2:]
    spec = np.fft.fft2(x.data.astype(np.float64), norm=norm)
    # bins that are purely real for real input; pin im to 0 so phase is exact
    rows, cols = _real_bins(h, w)
    for r in rows:
        for c in cols:
            spec[..., r, c] = spec[..., r, c].real
    out = np.concatenate([spec.real, spec.imag], axis=1).astype(x.dtype)
    c = x.shape[1]
    adj = _ADJOINT_NORM[norm]

    def vjp(g):
        gc = g[:, :c].astype(np.float64) + 1j * g[:, c:].astype(np.float64)
        return (np.fft.ifft2(gc, norm=adj).real.astype(g.dtype),)

    return record("fft2", (x,), out, vjp)


def ifft2_stacked(z: Tensor, norm: str = "backward") -> Tensor:
    """Real part of the inverse DFT of a stacked ``[re, im]`` field."""
    if norm not in _ADJOINT_NORM:
        raise ValueError(f"unknown DFT normalization {norm!r}")
    c2 = z.shape[1]
    if c2 % 2:
        raise ValueError(f"stacked complex field needs an even channel count, got {c2}")
    c = c2 // 2
    zc = z.data[:, :c].astype(np.float64) + 1j * z.data[:, c:].astype(np.float64)
    out = np.fft.ifft2(zc, norm=norm).real.astype(z.dtype)
    adj = _ADJOINT_NORM[norm]

    def vjp(g):
        gs = np.fft.fft2(g.astype(np.float64), norm=adj)
        return (np.concatenate([gs.real, gs.imag], axis=1).astype(g.dtype),)

    return record("ifft2", (z,), out, vjp)


def fft2(x: Tensor, norm: str = "backward") -> ComplexField:
    """Per-channel 2-D DFT (unnormalized by default, no fftshift)."""
    c = x.shape[1]
    re, im = ops.split(fft2_stacked(x, norm), [c, c], axis=1)
    return ComplexField(re, im)


def ifft2(f: ComplexField, norm: str = "backward") -> Tensor:
    return ifft2_stacked(ops.concat([f.re, f.im], axis=1), norm)


def amplitude(f: ComplexField) -> Tensor:
    re, im = f.re.data, f.im.data
    a = np.sqrt(re * re + im * im)
    safe = np.where(a > 0, a, 1)

    def vjp(g):
        k = np.where(a > 0, g / safe, 0)
        return k * re, k * im

    return record("amplitude", (f.re, f.im), a, vjp)


def phase(f: ComplexField) -> Tensor:
    """Angle in (-pi, pi]; 0 at the origin, where its gradient is defined as 0."""
    re, im = f.re.data, f.im.data
    p = np.arctan2(im, re)
    p = np.where(p <= -np.pi, p.dtype.type(np.pi), p)
    a2 = re * re + im * im
    safe = np.where(a2 > 0, a2, 1)

    def vjp(g):
        k = np.where(a2 > 0, g / safe, 0)
        return -k * im, k * re

    return record("phase", (f.re, f.im), p, vjp)


def amplitude_phase(f: ComplexField):
    return amplitude(f), phase(f)


def frequency_loss(sr: Tensor, hr: Tensor) -> Tensor:
    """Mean absolute difference between ``[amplitude, phase]`` of the two spectra."""
    if sr.shape != hr.shape:
        raise ValueError(f"frequency_loss: shape mismatch {sr.shape} vs {hr.shape}")
    a_sr, p_sr = amplitude_phase(fft2(sr))
    a_hr, p_hr = amplitude_phase(fft2(hr))
    d = ops.sub(ops.concat([a_sr, p_sr], axis=1), ops.concat([a_hr, p_hr], axis=1))
    return ops.mean(ops.abs(d))
