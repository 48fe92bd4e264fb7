"""Y-channel PSNR/SSIM evaluation and bicubic resampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, List, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ALLOWED_FACTORS = tuple(Fraction(f) for f in ("1/2", "1/3", "1/4", "2", "3", "4"))
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _array(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x))


def rgb_to_y(img) -> np.ndarray:
    """BT.601 studio-swing luma of RGB in [0, 1] with channels on axis -3."""
    a = _array(img).astype(np.float64)
    r, g, b = a[..., 0, :, :], a[..., 1, :, :], a[..., 2, :, :]
    y = (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0
    return np.expand_dims(y, -3)


def psnr(a, b, peak: float = 1.0) -> float:
    a, b = _array(a).astype(np.float64), _array(b).astype(np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def ssim(a, b, peak: float = 1.0) -> float:
    """Single-scale SSIM, 11x11 Gaussian window, mean over valid positions."""
    a = np.squeeze(_array(a)).astype(np.float64)
    b = np.squeeze(_array(b)).astype(np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError(f"ssim expects a single-channel image, got shape {a.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim: image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    g = gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# ----------------------------------------------------------------------------
# bicubic


def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resize_matrix(in_len: int, out_len: int) -> np.ndarray:
    """(out_len, in_len) bicubic interpolation matrix with edge replication.

    On downscaling the kernel is stretched by the inverse scale
    (antialiasing); rows are normalized to sum to one.
    """
    scale = out_len / in_len
    kscale = min(scale, 1.0)
    support = 2.0 / kscale
    m = np.zeros((out_len, in_len))
    for i in range(out_len):
        center = (i + 0.5) / scale - 0.5
        taps = np.arange(math.floor(center - support) + 1, math.floor(center + support) + 1)
        wts = cubic((taps - center) * kscale)
        wts = wts / wts.sum()
        np.add.at(m[i], np.clip(taps, 0, in_len - 1), wts)
    return m


def bicubic_resize(img, factor) -> np.ndarray:
    """Resize the last two axes by ``factor`` (one of 1/2, 1/3, 1/4, 2, 3, 4)."""
    a = _array(img)
    f = Fraction(factor).limit_denominator(16)
    if f not in ALLOWED_FACTORS:
        raise ValueError(f"unsupported resize factor {factor}")
    h, w = a.shape[-2:]
    oh, ow = h * f, w * f
    if oh.denominator != 1 or ow.denominator != 1:
        raise ValueError(f"resize by {f} of {h}x{w} gives non-integer size {float(oh)}x{float(ow)}")
    mh = resize_matrix(h, int(oh))
    mw = resize_matrix(w, int(ow))
    out = mh @ a.astype(np.float64) @ mw.T
    return out.astype(a.dtype if a.dtype in (np.float32, np.float64) else np.float64)


# ----------------------------------------------------------------------------
# evaluation


@dataclass
class EvalEntry:
    image: str
    psnr: float
    ssim: float


@dataclass
class EvalReport:
    dataset: str
    scale: int
    border: int
    entries: List[EvalEntry] = field(default_factory=list)
    failures: List[Tuple[str, str]] = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([e.psnr for e in self.entries])) if self.entries else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([e.ssim for e in self.entries])) if self.entries else math.nan

    def to_keyvalue(self) -> str:
        lines = [f"{e.image} {_fmt(e.psnr, 4)} {_fmt(e.ssim, 6)}" for e in self.entries]
        lines.append(f"mean {_fmt(self.mean_psnr, 4)} {_fmt(self.mean_ssim, 6)}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        width = max([len(e.image) for e in self.entries] + [5])
        head = (f"dataset: {self.dataset}  scale: x{self.scale}  border crop: {self.border}px\n"
                f"{'image':<{width}}  {'PSNR (dB)':>10}  {'SSIM':>8}\n"
                f"{'-' * width}  {'-' * 10}  {'-' * 8}\n")
        body = "".join(f"{e.image:<{width}}  {_fmt(e.psnr, 4):>10}  {_fmt(e.ssim, 4):>8}\n"
                       for e in self.entries)
        tail = f"{'mean':<{width}}  {_fmt(self.mean_psnr, 4):>10}  {_fmt(self.mean_ssim, 4):>8}\n"
        for name, why in self.failures:
            tail += f"skipped {name}: {why}\n"
        return head + body + tail


def _fmt(v: float, digits: int) -> str:
    return "inf" if math.isinf(v) else f"{v:.{digits}f}"


def evaluate(upscale: Callable[[np.ndarray], np.ndarray], pairs: Sequence, scale: int,
             dataset: str = "dataset") -> EvalReport:
    """Upscale every ``pair.lr`` and score it against ``pair.hr`` on Y.

    ``scale`` border pixels are cropped on every side before scoring.
    Pairs whose shapes disagree are listed in ``report.failures``.
    """
    report = EvalReport(dataset, scale, scale)
    for pair in sorted(pairs, key=lambda p: p.name):
        sr = np.clip(_array(upscale(pair.lr)), 0.0, 1.0)
        if sr.shape != pair.hr.shape:
            report.failures.append((pair.name, f"SR shape {sr.shape} != HR shape {pair.hr.shape}"))
            continue
        b = scale
        ys = rgb_to_y(sr)[0, b:-b, b:-b]
        yh = rgb_to_y(pair.hr)[0, b:-b, b:-b]
        report.entries.append(EvalEntry(pair.name, psnr(ys, yh), ssim(ys, yh)))
    return report
