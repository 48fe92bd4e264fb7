"""Differentiable primitives on :class:`~dmnet.tensor.Tensor`.

Every function computes its result with numpy in the dtype of its inputs
and registers a vector-Jacobian product on the active tape.  Convolutions
have dedicated paths for 1x1 and depthwise kernels; everything else goes
through an im2col gather followed by a batched matmul.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .tensor import Tensor, record


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ----------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return record("add", (a, b), a.data + b.data,
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return record("sub", (a, b), a.data - b.data,
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    ad, bd = a.data, b.data
    return record("mul", (a, b), ad * bd,
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)
    return record("scale", (x,), x.data * c, lambda g: (g * c,))


def neg(x: Tensor) -> Tensor:
    return record("neg", (x,), -x.data, lambda g: (-g,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return record("exp", (x,), y, lambda g: (g * y,))


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    s = np.sign(x.data)
    return record("abs", (x,), np.abs(x.data), lambda g: (g * s,))


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * xd * xd) / np.sqrt(2.0 * np.pi)
    dy = (cdf + xd * pdf).astype(xd.dtype)
    return record("gelu", (x,), (xd * cdf).astype(xd.dtype), lambda g: (g * dy,))


# ----------------------------------------------------------------------------
# reductions


def sum(x: Tensor) -> Tensor:  # noqa: A001
    shape = x.shape
    return record("sum", (x,), np.asarray(x.data.sum(), dtype=x.dtype),
                  lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    inv = x.dtype.type(1.0 / n)
    return record("mean", (x,), np.asarray(x.data.mean(dtype=np.float64), dtype=x.dtype),
                  lambda g: (np.full(shape, g * inv, dtype=g.dtype),))


# ----------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return record("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(src),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record("permute", (x,), np.ascontiguousarray(x.data.transpose(axes)),
                  lambda g: (g.transpose(inv),))


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = list(xs)
    bounds = np.cumsum([0] + [t.shape[axis] for t in xs])

    def vjp(g):
        idx = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return out

    return record("concat", xs, np.concatenate([t.data for t in xs], axis=axis), vjp)


def split(x: Tensor, sizes: Sequence[int], axis: int = 1) -> list:
    """Split along ``axis`` into consecutive pieces of the given sizes."""
    if int(np.sum(sizes)) != x.shape[axis]:
        raise ValueError(f"split sizes {list(sizes)} do not cover axis {axis} of length {x.shape[axis]}")
    pieces = []
    lo = 0
    for size in sizes:
        pieces.append(take(x, axis, lo, lo + size))
        lo += size
    return pieces


def take(x: Tensor, axis: int, lo: int, hi: int) -> Tensor:
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(lo, hi)
    idx = tuple(idx)
    shape, dtype = x.shape, x.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] = g
        return (full,)

    return record("take", (x,), np.ascontiguousarray(x.data[idx]), vjp)


def pixel_shuffle(x: Tensor, s: int) -> Tensor:
    """(n, c*s*s, h, w) -> (n, c, h*s, w*s); channel c*s*s + i*s + j lands at (i, j)."""
    n, cs, h, w = x.shape
    if cs % (s * s):
        raise ValueError(f"pixel_shuffle: {cs} channels not divisible by scale^2={s * s}")
    c = cs // (s * s)
    y = x.data.reshape(n, c, s, s, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * s, w * s)

    def vjp(g):
        return (g.reshape(n, c, h, s, w, s).transpose(0, 1, 3, 5, 2, 4).reshape(n, cs, h, w),)

    return record("pixel_shuffle", (x,), np.ascontiguousarray(y), vjp)


def pixel_unshuffle(x: Tensor, s: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`."""
    n, c, hs, ws = x.shape
    if hs % s or ws % s:
        raise ValueError(f"pixel_unshuffle: spatial dims {hs}x{ws} not divisible by {s}")
    h, w = hs // s, ws // s
    y = x.data.reshape(n, c, h, s, w, s).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * s * s, h, w)

    def vjp(g):
        return (g.reshape(n, c, s, s, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, hs, ws),)

    return record("pixel_unshuffle", (x,), np.ascontiguousarray(y), vjp)


# ----------------------------------------------------------------------------
# linear algebra and attention pieces


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    ad, bd = a.data, b.data
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul: inner dims differ ({ad.shape} @ {bd.shape})")

    def vjp(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return record("matmul", (a, b), ad @ bd, vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record("softmax", (x,), y, vjp)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    y = x.data / denom
    live = norm > eps

    def vjp(g):
        radial = (g * y).sum(axis=axis, keepdims=True)
        return ((g - np.where(live, y * radial, 0)) / denom,)

    return record("l2_normalize", (x,), y, vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the channel vector (axis 1) at every spatial location."""
    c = x.shape[1]
    if c == 0:
        raise ValueError("layer_norm over zero channels")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"layer_norm: affine params must have shape ({c},), got {gamma.shape}/{beta.shape}")
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + xd.dtype.type(eps))
    xhat = xc * inv
    bshape = (1, c) + (1,) * (xd.ndim - 2)
    gd = gamma.data.reshape(bshape)
    y = xhat * gd + beta.data.reshape(bshape)
    red = (0,) + tuple(range(2, xd.ndim))

    def vjp(g):
        dxhat = g * gd
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return record("layer_norm", (x, gamma, beta), y, vjp)


# ----------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation, NCHW input and (co, ci/groups, kh, kw) weights."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, ci, h, w = x.shape
    co, cig, kh, kw = weight.shape
    if groups < 1 or ci % groups or co % groups:
        raise ValueError(f"conv2d: in_channels={ci} and out_channels={co} must be divisible by groups={groups}")
    if cig != ci // groups:
        raise ValueError(f"conv2d: weight in_channels/group={cig} but input has {ci} channels over {groups} groups")
    if padding < 0 or stride < 1:
        raise ValueError(f"conv2d: invalid padding={padding} or stride={stride}")
    if bias is not None and bias.shape != (co,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({co},)")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")

    xd, wd = x.data, weight.data
    if kh == kw == 1 and stride == 1 and padding == 0 and groups == 1:
        out, back = _conv1x1(xd, wd)
    elif groups == ci == co and cig == 1 and stride == 1:
        out, back = _conv_depthwise(xd, wd, padding, oh, ow)
    else:
        out, back = _conv_im2col(xd, wd, stride, padding, groups, oh, ow)

    if bias is not None:
        out += bias.data.reshape(1, co, 1, 1)
        inputs = (x, weight, bias)

        def vjp(g):
            gx, gw = back(g)
            return gx, gw, g.sum(axis=(0, 2, 3))
    else:
        inputs = (x, weight)
        vjp = back
    return record("conv2d", inputs, out, vjp)


def _conv1x1(xd, wd):
    n, ci, h, w = xd.shape
    co = wd.shape[0]
    w2 = wd.reshape(co, ci)
    x2 = xd.reshape(n, ci, h * w)
    out = (w2 @ x2).reshape(n, co, h, w)

    def back(g):
        g2 = g.reshape(n, co, h * w)
        gx = (w2.T @ g2).reshape(n, ci, h, w)
        gw = (g2 @ x2.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
        return gx, gw

    return out, back


def _conv_depthwise(xd, wd, p, oh, ow):
    n, c, h, w = xd.shape
    kh, kw = wd.shape[2:]
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    k = wd[:, 0]
    out = np.zeros((n, c, oh, ow), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i:i + oh, j:j + ow] * k[:, i, j][None, :, None, None]

    def back(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wd)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + oh, j:j + ow] += g * k[:, i, j][None, :, None, None]
                gw[:, 0, i, j] = (g * xp[:, :, i:i + oh, j:j + ow]).sum(axis=(0, 2, 3))
        gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        return gx, gw

    return out, back


def _conv_im2col(xd, wd, stride, p, groups, oh, ow):
    n, ci, h, w = xd.shape
    co, cig, kh, kw = wd.shape
    cog = co // groups
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (n, g, oh*ow, cig*kh*kw)
    cols = (win.reshape(n, groups, cig, oh, ow, kh, kw)
            .transpose(0, 1, 3, 4, 2, 5, 6)
            .reshape(n, groups, oh * ow, cig * kh * kw))
    wg = wd.reshape(groups, cog, cig * kh * kw)
    out = (cols @ wg.transpose(0, 2, 1))  # (n, g, oh*ow, cog)
    out = out.transpose(0, 1, 3, 2).reshape(n, co, oh, ow)

    def back(g):
        gg = g.reshape(n, groups, cog, oh * ow)
        gw = (gg @ cols).sum(axis=0).reshape(wd.shape)
        gcols = (gg.transpose(0, 1, 3, 2) @ wg).reshape(n, groups, oh, ow, cig, kh, kw)
        gcols = gcols.transpose(0, 1, 4, 2, 3, 5, 6).reshape(n, ci, oh, ow, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += gcols[..., i, j]
        gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        return gx, gw

    return np.ascontiguousarray(out), back
