"""Structural consistency between optical and SAR feature grids.

A feature grid ``F`` (``B x C x H' x W'``) is summarised per channel by the
mean absolute central difference along each spatial axis. The resulting
descriptor is standardised over channels per sample, averaged into one
prototype per (identity, modality) and optical/SAR prototypes of the same
identity are pulled together.

Central differences are undefined on the border, so everything is computed on
the interior ``[1, H'-2] x [1, W'-2]`` and the mean divides by the interior
cell count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError
from .tensor import Tensor, as_tensor, stack

DEFAULT_EPS = 1e-5


@dataclass
class StructDescriptor:
    e_x: Tensor
    e_y: Tensor
    f_struct: Tensor
    f_hat: Tensor


@dataclass
class PrototypePair:
    identity: int
    c_opt: Tensor | None
    c_sar: Tensor | None


def spatial_gradients(grid: Tensor) -> tuple[Tensor, Tensor]:
    grid = as_tensor(grid)
    if grid.ndim != 4:
        raise DimensionError(f"expected B x C x H x W grid, got shape {grid.shape}")
    h, w = grid.shape[2:]
    if h < 3 or w < 3:
        raise DimensionError(f"grid {h}x{w} has no interior; need at least 3x3")
    gx = grid[:, :, 1:-1, 2:] - grid[:, :, 1:-1, :-2]
    gy = grid[:, :, 2:, 1:-1] - grid[:, :, :-2, 1:-1]
    return gx, gy


def gradient_energy(gx: Tensor, gy: Tensor) -> tuple[Tensor, Tensor]:
    return gx.abs().mean(axis=(2, 3)), gy.abs().mean(axis=(2, 3))


def instance_normalize(f: Tensor, eps: float = DEFAULT_EPS) -> Tensor:
    """Standardise each row over the channel axis (population variance)."""
    f = as_tensor(f)
    if f.shape[-1] < 2:
        raise DimensionError("instance normalisation needs at least 2 channels")
    mu = f.mean(axis=-1, keepdims=True)
    fc = f - mu
    var = (fc * fc).mean(axis=-1, keepdims=True)
    return fc / (var + eps).sqrt()


def describe(grid: Tensor, eps: float = DEFAULT_EPS) -> StructDescriptor:
    gx, gy = spatial_gradients(grid)
    e_x, e_y = gradient_energy(gx, gy)
    f = e_x + e_y
    return StructDescriptor(e_x, e_y, f, instance_normalize(f, eps))


def build_prototypes(f_hat: Tensor, labels, modalities) -> list[PrototypePair]:
    labels = np.asarray(labels).reshape(-1)
    modalities = np.asarray(modalities).reshape(-1)
    if f_hat.shape[0] == 0:
        raise DimensionError("cannot build prototypes from an empty batch")
    if labels.shape[0] != f_hat.shape[0] or modalities.shape[0] != f_hat.shape[0]:
        raise DimensionError("labels/modalities must align with descriptor rows")
    pairs = []
    for ident in np.unique(labels):
        protos = []
        for m in (0, 1):
            idx = np.flatnonzero((labels == ident) & (modalities == m))
            protos.append(f_hat[idx].mean(axis=0) if idx.size else None)
        pairs.append(PrototypePair(int(ident), protos[0], protos[1]))
    return pairs


def struct_loss(pairs: list[PrototypePair]) -> Tensor:
    """Mean squared distance between co-present optical/SAR prototypes; 0 if none."""
    both = [p for p in pairs if p.c_opt is not None and p.c_sar is not None]
    if not both:
        return Tensor(np.zeros(()))
    diffs = stack([p.c_opt - p.c_sar for p in both], axis=0)
    return (diffs * diffs).sum(axis=1).mean()


def energy_map(grid: np.ndarray) -> np.ndarray:
    """Per-sample interior map of sum_c (|G_x| + |G_y|), shape ``B x (H'-2) x (W'-2)``."""
    g = np.asarray(grid.data if isinstance(grid, Tensor) else grid, dtype=np.float64)
    if g.ndim != 4 or g.shape[2] < 3 or g.shape[3] < 3:
        raise DimensionError(f"expected B x C x H x W grid with H, W >= 3, got {g.shape}")
    gx = g[:, :, 1:-1, 2:] - g[:, :, 1:-1, :-2]
    gy = g[:, :, 2:, 1:-1] - g[:, :, :-2, 1:-1]
    return (np.abs(gx) + np.abs(gy)).sum(axis=1)


def write_heatmap(path, emap: np.ndarray) -> None:
    """Write one 2-D energy map as an 8-bit portable graymap (min-max scaled)."""
    from PIL import Image

    m = np.asarray(emap, dtype=np.float64)
    lo, hi = m.min(), m.max()
    scaled = np.zeros_like(m) if hi - lo <= 1e-12 * max(1.0, abs(hi)) else (m - lo) / (hi - lo)
    Image.fromarray(np.round(scaled * 255).astype(np.uint8), mode="L").save(str(path), format="PPM")
