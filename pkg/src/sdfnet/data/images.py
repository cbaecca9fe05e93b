"""Image files on disk and pixel normalisation."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from ..exceptions import ValidationError
from .manifest import Manifest

PIXEL_MEAN = 0.5
PIXEL_STD = 0.5


def write_gray(path: str | Path, img: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="L").save(str(path), format="PPM")


def read_image(path: str | Path, size: tuple[int, int] | None = None) -> np.ndarray:
    """Load a grayscale or RGB image as float32 ``3 x H x W`` in [0, 1].

    ``size`` is ``(H, W)``; images of another size are resized bilinearly.
    """
    with Image.open(path) as im:
        im = im.convert("RGB") if im.mode not in ("L", "RGB") else im
        if size is not None and (im.height, im.width) != tuple(size):
            im = im.resize((size[1], size[0]), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = np.repeat(arr[None], 3, axis=0)
    else:
        arr = arr.transpose(2, 0, 1)
    return np.ascontiguousarray(arr)


def to_chw(images: np.ndarray) -> np.ndarray:
    """Accept ``N x H x W`` (gray, uint8 or float) or ``N x 3 x H x W``; return float32 [0,1] ``N x 3 x H x W``."""
    arr = np.asarray(images)
    scale = 255.0 if arr.dtype == np.uint8 else 1.0
    arr = arr.astype(np.float32) / np.float32(scale)
    if arr.ndim == 3:
        arr = np.repeat(arr[:, None], 3, axis=1)
    elif arr.ndim == 4 and arr.shape[1] == 1:
        arr = np.repeat(arr, 3, axis=1)
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise ValidationError(f"expected N x H x W or N x 3 x H x W images, got shape {np.shape(images)}")
    return arr


def normalize(images: np.ndarray) -> np.ndarray:
    return (images - np.float32(PIXEL_MEAN)) / np.float32(PIXEL_STD)


def load_images(manifest: Manifest, size: tuple[int, int] | None = None) -> np.ndarray:
    out = []
    for rec in manifest:
        path = manifest.resolve(rec)
        if not path.exists():
            raise FileNotFoundError(f"image for record {rec.image_ref!r} not found at {path}")
        out.append(read_image(path, size))
    return np.stack(out) if out else np.zeros((0, 3) + tuple(size or (0, 0)), dtype=np.float32)


def save_dataset(out_dir: str | Path, images: np.ndarray, manifest: Manifest) -> list[Path]:
    """Write ``images/*.pgm`` and ``manifest.jsonl``; returns every written path."""
    out_dir = Path(out_dir)
    written = []
    for img, rec in zip(images, manifest):
        p = out_dir / rec.image_ref
        write_gray(p, img)
        written.append(p)
    mpath = out_dir / "manifest.jsonl"
    manifest.save(mpath)
    written.append(mpath)
    return written
