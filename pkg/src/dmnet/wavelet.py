"""Single-level orthonormal 2-D Haar transform.

Filters: low-pass ``(1, 1)/sqrt(2)`` and high-pass ``(1, -1)/sqrt(2)``.  The
first pass combines pairs of rows (the result has h/2 rows and w columns),
the second pass combines pairs of columns.  Subband names give the filter
of the first pass, then the second:

* ``ll``: low over rows, low over columns (coarse structure)
* ``lh``: low over rows, high over columns (detail across columns)
* ``hl``: high over rows, low over columns (detail across rows)
* ``hh``: high over both

For ``x = [[1, 2], [3, 4]]`` this gives ``ll = 5, lh = -1, hl = -2, hh = 0``.
When stacked along channels the order is always ``[ll, lh, hl, hh]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Tensor, record

_R = 1.0 / np.sqrt(2.0)
SUBBANDS = ("ll", "lh", "hl", "hh")


@dataclass
class SubbandQuad:
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def __post_init__(self):
        shapes = {t.shape for t in self}
        if len(shapes) != 1:
            raise ValueError(f"subband shapes differ: {[t.shape for t in self]}")

    def __iter__(self):
        return iter((self.ll, self.lh, self.hl, self.hh))

    @property
    def shape(self) -> tuple:
        return self.ll.shape

    def energy(self) -> float:
        return float(sum(np.sum(t.data.astype(np.float64) ** 2) for t in self))


def _analysis(x: np.ndarray, high_sign: float = 1.0):
    """Forward Haar on raw arrays; ``high_sign=-1`` exists for fault injection."""
    r = x.dtype.type(_R)
    hs = x.dtype.type(high_sign)
    lo = (x[..., 0::2, :] + x[..., 1::2, :]) * r
    hi = (x[..., 0::2, :] - x[..., 1::2, :]) * r * hs
    ll = (lo[..., 0::2] + lo[..., 1::2]) * r
    lh = (lo[..., 0::2] - lo[..., 1::2]) * r * hs
    hl = (hi[..., 0::2] + hi[..., 1::2]) * r
    hh = (hi[..., 0::2] - hi[..., 1::2]) * r * hs
    return ll, lh, hl, hh


def _synthesis(ll, lh, hl, hh) -> np.ndarray:
    r = ll.dtype.type(_R)
    *lead, h2, w2 = ll.shape
    lo = np.empty((*lead, h2, 2 * w2), dtype=ll.dtype)
    hi = np.empty_like(lo)
    lo[..., 0::2] = (ll + lh) * r
    lo[..., 1::2] = (ll - lh) * r
    hi[..., 0::2] = (hl + hh) * r
    hi[..., 1::2] = (hl - hh) * r
    x = np.empty((*lead, 2 * h2, 2 * w2), dtype=ll.dtype)
    x[..., 0::2, :] = (lo + hi) * r
    x[..., 1::2, :] = (lo - hi) * r
    return x


def _check_even(shape):
    h, w = shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"Haar DWT needs even spatial dims, got {h}x{w}")


def dwt_haar(x: Tensor) -> SubbandQuad:
    """Decompose ``x`` of shape (n, c, h, w) into four (n, c, h/2, w/2) subbands."""
    stacked = dwt_stacked(x)
    c = x.shape[1]
    return SubbandQuad(*ops.split(stacked, [c] * 4, axis=1))


def idwt_haar(q: SubbandQuad) -> Tensor:
    """Exact inverse of :func:`dwt_haar`."""
    return idwt_stacked(ops.concat(list(q), axis=1))


def dwt_stacked(x: Tensor) -> Tensor:
    """Haar DWT with subbands concatenated along channels: (n, 4c, h/2, w/2)."""
    _check_even(x.shape)
    out = np.concatenate(_analysis(x.data), axis=1)
    c = x.shape[1]

    def vjp(g):
        # orthonormal: the adjoint is the inverse
        return (_synthesis(*(g[:, k * c:(k + 1) * c] for k in range(4))),)

    return record("dwt_haar", (x,), out, vjp)


def idwt_stacked(x: Tensor) -> Tensor:
    """Inverse of :func:`dwt_stacked`; channel count must be divisible by 4."""
    n, c4 = x.shape[:2]
    if c4 % 4:
        raise ValueError(f"stacked subbands need a channel count divisible by 4, got {c4}")
    c = c4 // 4
    out = _synthesis(*(x.data[:, k * c:(k + 1) * c] for k in range(4)))

    def vjp(g):
        return (np.concatenate(_analysis(g), axis=1),)

    return record("idwt_haar", (x,), out, vjp)
