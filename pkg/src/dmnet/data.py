"""PNG I/O, paired dataset loading and procedural test images."""
from __future__ import annotations

from pathlib import Path
from typing import List

import numpy as np
from PIL import Image

from .metrics import bicubic_resize
from .training import ImagePair


def read_png(path) -> np.ndarray:
    """8-bit PNG -> (3, h, w) float32 in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() != ".png":
        raise ValueError(f"{path}: only PNG images are supported")
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float32)
    return np.ascontiguousarray(rgb.transpose(2, 0, 1) / 255.0)


def quantize(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round half away from zero to uint8, (3, h, w) -> (h, w, 3)."""
    q = np.floor(np.clip(img.astype(np.float64), 0.0, 1.0) * 255.0 + 0.5)
    return q.astype(np.uint8).transpose(1, 2, 0)


def write_png(path, img: np.ndarray) -> None:
    Image.fromarray(quantize(img), mode="RGB").save(Path(path), format="PNG")


def mod_crop(img: np.ndarray, scale: int) -> np.ndarray:
    h, w = img.shape[-2:]
    return img[..., : h - h % scale, : w - w % scale]


def synthesize_pair(name: str, hr: np.ndarray, scale: int) -> ImagePair:
    """Mod-crop ``hr`` and derive its LR by antialiased bicubic downscaling."""
    hr = np.ascontiguousarray(mod_crop(hr, scale), dtype=np.float32)
    lr = np.clip(bicubic_resize(hr, f"1/{scale}"), 0.0, 1.0).astype(np.float32)
    return ImagePair(name, lr, hr)


def load_pairs(data_dir, scale: int) -> List[ImagePair]:
    """Load ``data_dir/HR`` + ``data_dir/LR`` pairs, or HR-only PNGs in ``data_dir``.

    In the HR-only layout the LR side is synthesized with
    :func:`synthesize_pair`.  Pairs are sorted by filename.
    """
    root = Path(data_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"data directory not found: {root}")
    hr_dir, lr_dir = root / "HR", root / "LR"
    pairs = []
    if hr_dir.is_dir() and lr_dir.is_dir():
        for hr_path in sorted(hr_dir.glob("*.png")):
            lr_path = lr_dir / hr_path.name
            if not lr_path.exists():
                raise FileNotFoundError(f"no LR image for {hr_path.name} in {lr_dir}")
            hr = mod_crop(read_png(hr_path), scale)
            lr = read_png(lr_path)
            if hr.shape[1:] != (lr.shape[1] * scale, lr.shape[2] * scale):
                raise ValueError(f"{hr_path.name}: HR {hr.shape[1:]} is not x{scale} of LR {lr.shape[1:]}")
            pairs.append(ImagePair(hr_path.stem, lr, np.ascontiguousarray(hr)))
    else:
        for hr_path in sorted(root.glob("*.png")):
            pairs.append(synthesize_pair(hr_path.stem, read_png(hr_path), scale))
    if not pairs:
        raise ValueError(f"no PNG images found in {root}")
    return pairs


def synthetic_image(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Deterministic natural-ish RGB test image in [0, 1], shape (3, h, w).

    Smooth colour gradient, a few soft-edged discs and bars, and one
    oriented sinusoidal texture patch.
    """
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    img = np.empty((3, h, w))
    for c in range(3):
        a, b, d = rng.uniform(-0.4, 0.4, 3)
        img[c] = 0.5 + a * (xx - 0.5) + b * (yy - 0.5) + d * (xx - 0.5) * (yy - 0.5)
    soft = 0.35 / min(h, w)
    for _ in range(int(rng.integers(3, 6))):
        cy, cx = rng.uniform(0.15, 0.85, 2)
        r = rng.uniform(0.08, 0.25)
        dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        mask = 1.0 / (1.0 + np.exp((dist - r) / soft))
        colour = rng.uniform(0, 1, 3)
        img = img * (1 - mask) + colour[:, None, None] * mask
    for _ in range(int(rng.integers(1, 3))):
        theta = rng.uniform(0, np.pi)
        off = rng.uniform(0.3, 0.7)
        width = rng.uniform(0.03, 0.08)
        dist = np.abs((xx - 0.5) * np.cos(theta) + (yy - 0.5) * np.sin(theta) + 0.5 - off)
        mask = 1.0 / (1.0 + np.exp((dist - width) / soft))
        colour = rng.uniform(0, 1, 3)
        img = img * (1 - mask) + colour[:, None, None] * mask
    cy, cx = rng.uniform(0.3, 0.7, 2)
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(0.12, 0.22) * np.pi * min(h, w)
    wave = 0.5 + 0.5 * np.sin(freq * ((xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)))
    env = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 0.12 ** 2))
    img = img + 0.25 * (wave - 0.5) * env
    return np.clip(img, 0, 1).astype(np.float32)


def synthetic_dataset(n: int, size: int, scale: int, seed: int = 0) -> List[ImagePair]:
    rng = np.random.default_rng(seed)
    return [synthesize_pair(f"img{i:03d}", synthetic_image(rng, size, size), scale) for i in range(n)]
