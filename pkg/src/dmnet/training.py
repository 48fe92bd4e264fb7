"""Losses, Adam, learning-rate schedule, patch sampling and the training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import ops
from .fourier import frequency_loss
from .model import DMNetConfig, DMNetWeights, super_resolve
from .tensor import Tape, Tensor, backward
from .wavelet import dwt_stacked

log = logging.getLogger(__name__)

LR_FLOOR_RATIO = 0.01
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 64
    patch: int = 64
    lr0: float = 5e-4
    total_iters: int = 500_000
    lam: float = 0.1
    betas: Tuple[float, float] = (0.9, 0.99)
    seed: int = 0
    log_interval: int = 100
    ckpt_interval: int = 0
    augment: bool = True

    def __post_init__(self):
        if self.patch < 2 or self.patch % 2:
            raise ValueError(f"patch must be even and >= 2, got {self.patch}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.batch < 1 or self.total_iters < 1:
            raise ValueError("batch and total_iters must be >= 1")
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")


# ----------------------------------------------------------------------------
# losses


def pixel_loss(sr: Tensor, hr: Tensor) -> Tensor:
    """Mean absolute error."""
    if sr.shape != hr.shape:
        raise ValueError(f"pixel_loss: shape mismatch {sr.shape} vs {hr.shape}")
    return ops.mean(ops.abs(ops.sub(sr, hr)))


def wavelet_loss(sr: Tensor, hr: Tensor) -> Tensor:
    """Mean absolute error between the Haar subband stacks (ablation loss)."""
    if sr.shape != hr.shape:
        raise ValueError(f"wavelet_loss: shape mismatch {sr.shape} vs {hr.shape}")
    return ops.mean(ops.abs(ops.sub(dwt_stacked(sr), dwt_stacked(hr))))


def loss_terms(sr: Tensor, hr: Tensor, lam: float, freq: str = "fourier"):
    """Return ``(total, pixel, frequency)`` loss tensors."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    lp = pixel_loss(sr, hr)
    lf = frequency_loss(sr, hr) if freq == "fourier" else wavelet_loss(sr, hr)
    return ops.add(lp, ops.scale(lf, lam)), lp, lf


def total_loss(sr: Tensor, hr: Tensor, lam: float = 0.1) -> Tensor:
    return loss_terms(sr, hr, lam)[0]


# ----------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: Sequence[Tuple[str, Tensor]], state: AdamState, lr: float,
              betas: Tuple[float, float] = (0.9, 0.99), eps: float = ADAM_EPS) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    for name, p in params:
        if p.requires_grad and p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params:
        if not p.requires_grad:
            continue
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)


def lr_schedule(it: int, tcfg: TrainConfig) -> float:
    """Cosine decay from ``lr0`` at iteration 0 towards ``lr0 / 100`` at ``total_iters``."""
    lr0 = tcfg.lr0
    lr_min = lr0 * LR_FLOOR_RATIO
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * it / tcfg.total_iters))


# ----------------------------------------------------------------------------
# data


@dataclass
class ImagePair:
    name: str
    lr: np.ndarray  # (3, h, w) float32 in [0, 1]
    hr: np.ndarray  # (3, s*h, s*w)


def augment(img: np.ndarray, hflip: bool, rot: int) -> np.ndarray:
    """Horizontal flip then ``rot`` quarter turns on a (c, h, w) array."""
    if hflip:
        img = img[:, :, ::-1]
    return np.rot90(img, rot, axes=(1, 2))


def sample_batch(dataset: Sequence[ImagePair], batch: int, patch: int, scale: int,
                 rng: np.random.Generator, augment_data: bool = True):
    """Random aligned LR/HR crops: the HR origin is ``scale`` times the LR origin."""
    lrs, hrs = [], []
    for _ in range(batch):
        pair = dataset[int(rng.integers(len(dataset)))]
        _, h, w = pair.lr.shape
        if h < patch or w < patch:
            raise ValueError(f"{pair.name}: LR image {h}x{w} is smaller than patch {patch}")
        if pair.hr.shape[1:] != (h * scale, w * scale):
            raise ValueError(f"{pair.name}: HR {pair.hr.shape[1:]} is not {scale}x LR {(h, w)}")
        y = int(rng.integers(h - patch + 1))
        x = int(rng.integers(w - patch + 1))
        lr = pair.lr[:, y:y + patch, x:x + patch]
        hr = pair.hr[:, y * scale:(y + patch) * scale, x * scale:(x + patch) * scale]
        if augment_data:
            hflip = bool(rng.integers(2))
            rot = int(rng.integers(4))
            lr, hr = augment(lr, hflip, rot), augment(hr, hflip, rot)
        lrs.append(lr)
        hrs.append(hr)
    return (np.ascontiguousarray(np.stack(lrs), dtype=np.float32),
            np.ascontiguousarray(np.stack(hrs), dtype=np.float32))


# ----------------------------------------------------------------------------
# loop


class NonFiniteLoss(RuntimeError):
    pass


@dataclass
class LogRecord:
    it: int
    lr: float
    l_pixel: float
    l_fre: float
    l_total: float

    def line(self) -> str:
        return f"{self.it} {self.lr:.9f} {self.l_pixel:.9f} {self.l_fre:.9f} {self.l_total:.9f}"


def train_loop(cfg: DMNetConfig, tcfg: TrainConfig, dataset: Sequence[ImagePair],
               weights: Optional[DMNetWeights] = None, state: Optional[AdamState] = None,
               log_path: Optional[Path] = None,
               on_checkpoint: Optional[Callable[[int, DMNetWeights, AdamState], None]] = None,
               dump_dir: Optional[Path] = None) -> Tuple[DMNetWeights, AdamState, List[LogRecord]]:
    """Train from ``state.step`` up to ``tcfg.total_iters``.

    Each record holds the interval means of the pixel and frequency losses.
    ``log_path`` receives one line per interval as it is produced.
    """
    if not dataset:
        raise ValueError("empty training set")
    weights = weights if weights is not None else DMNetWeights.init(cfg, tcfg.seed)
    state = state if state is not None else AdamState()
    params = weights.named_parameters()
    rng = np.random.default_rng(tcfg.seed)
    records: List[LogRecord] = []
    acc = np.zeros(3)
    count = 0
    logf = open(log_path, "a", encoding="utf-8") if log_path is not None else None
    try:
        for it in range(state.step, tcfg.total_iters):
            lr_np, hr_np = sample_batch(dataset, tcfg.batch, tcfg.patch, cfg.scale, rng, tcfg.augment)
            hr = Tensor(hr_np)
            with Tape() as tape:
                sr = super_resolve(cfg, weights, Tensor(lr_np))
                total, lp, lf = loss_terms(sr, hr, tcfg.lam, cfg.ablation.freq_loss)
            vals = (lp.item(), lf.item(), total.item())
            if not all(math.isfinite(v) for v in vals):
                _dump_batch(dump_dir, it, lr_np, hr_np)
                raise NonFiniteLoss(f"non-finite loss at iteration {it}: pixel={vals[0]} fre={vals[1]}")
            backward(tape, total)
            lr = lr_schedule(it, tcfg)
            adam_step(params, state, lr, tcfg.betas)
            acc += vals
            count += 1
            done = it + 1
            if done % tcfg.log_interval == 0 or done == tcfg.total_iters:
                mean = acc / count
                rec = LogRecord(done, lr, *mean)
                records.append(rec)
                if logf is not None:
                    logf.write(rec.line() + "\n")
                    logf.flush()
                log.info("iter %d lr %.3g pixel %.5f fre %.5f", done, lr, mean[0], mean[1])
                acc[:] = 0
                count = 0
            if on_checkpoint is not None and tcfg.ckpt_interval and (
                    done % tcfg.ckpt_interval == 0 or done == tcfg.total_iters):
                on_checkpoint(done, weights, state)
    finally:
        if logf is not None:
            logf.close()
    return weights, state, records


def _dump_batch(dump_dir: Optional[Path], it: int, lr: np.ndarray, hr: np.ndarray) -> None:
    if dump_dir is None:
        return
    path = Path(dump_dir) / f"nonfinite_batch_{it}.npz"
    np.savez(path, lr=lr, hr=hr)
    log.error("offending batch written to %s", path)
