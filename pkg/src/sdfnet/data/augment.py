"""Training-time augmentation: flip, pad-and-crop, random erasing."""

from __future__ import annotations

import math

import numpy as np


def hflip(image: np.ndarray) -> np.ndarray:
    return image[..., ::-1].copy()


def pad_crop(image: np.ndarray, pad: int, top: int, left: int) -> np.ndarray:
    c, h, w = image.shape
    padded = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=image.dtype)
    padded[:, pad:pad + h, pad:pad + w] = image
    return padded[:, top:top + h, left:left + w].copy()


def erase_box(h: int, w: int, rng, area=(0.02, 0.33), ratio=(0.3, 3.3), attempts: int = 100):
    """Pick an erasing rectangle ``(top, left, eh, ew)`` or ``None`` if no draw fits."""
    for _ in range(attempts):
        target = rng.uniform(*area) * h * w
        aspect = math.exp(rng.uniform(math.log(ratio[0]), math.log(ratio[1])))
        eh = int(round(math.sqrt(target * aspect)))
        ew = int(round(math.sqrt(target / aspect)))
        if 0 < eh < h and 0 < ew < w:
            return int(rng.integers(0, h - eh + 1)), int(rng.integers(0, w - ew + 1)), eh, ew
    return None


def augment(image: np.ndarray, rng, flip_p: float = 0.5, pad: int = 4, erase_p: float = 0.2) -> np.ndarray:
    """Augment one ``C x H x W`` image in [0, 1]."""
    out = image
    if rng.random() < flip_p:
        out = hflip(out)
    if pad:
        top, left = rng.integers(0, 2 * pad + 1, size=2)
        out = pad_crop(out, pad, int(top), int(left))
    if rng.random() < erase_p:
        c, h, w = out.shape
        box = erase_box(h, w, rng)
        if box is not None:
            t, l, eh, ew = box
            out = out.copy()
            out[:, t:t + eh, l:l + ew] = rng.random((c, eh, ew)).astype(out.dtype)
    return out
