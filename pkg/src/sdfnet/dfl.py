"""Shared/specific decomposition of the terminal feature and its fusion."""

from __future__ import annotations

import numpy as np

from .exceptions import DimensionError
from .nn import Linear, Module
from .tensor import Tensor, as_tensor, concat, l2_normalize

NORM_FLOOR = 1e-12
FUSION_MODES = ("additive", "concat", "shared_only", "specific_only")


class DecoupleHeads(Module):
    """Two activation-free linear heads ``d -> d``.

    The shared head starts near identity and the specific head near zero, so
    early training behaves like the plain backbone feature.
    """

    def __init__(self, dim: int, rng, dtype=np.float32, noise: float = 0.02):
        super().__init__()
        w_sh = np.eye(dim) + noise * rng.standard_normal((dim, dim))
        w_sp = noise * rng.standard_normal((dim, dim))
        self.shared = self.add_child("shared", Linear(dim, dim, rng, dtype, init=w_sh))
        self.specific = self.add_child("specific", Linear(dim, dim, rng, dtype, init=w_sp))

    def __call__(self, feat: Tensor) -> tuple[Tensor, Tensor]:
        return self.shared(feat), self.specific(feat)


def decouple(heads: DecoupleHeads, feat: Tensor) -> tuple[Tensor, Tensor]:
    return heads(feat)


def orth_loss(f_sh: Tensor, f_sp: Tensor, floor: float = NORM_FLOOR) -> Tensor:
    """Batch mean of |cos| between shared and specific rows."""
    if f_sh.shape != f_sp.shape:
        raise DimensionError(f"shape mismatch {f_sh.shape} vs {f_sp.shape}")
    a = l2_normalize(as_tensor(f_sh), axis=-1, floor=floor)
    b = l2_normalize(as_tensor(f_sp), axis=-1, floor=floor)
    return (a * b).sum(axis=-1).abs().mean()


def fuse(f_sh: Tensor, f_sp: Tensor, mode: str = "additive") -> Tensor:
    f_sh, f_sp = as_tensor(f_sh), as_tensor(f_sp)
    if f_sh.shape != f_sp.shape:
        raise DimensionError(f"cannot fuse {f_sh.shape} with {f_sp.shape}")
    if mode == "additive":
        return f_sh + f_sp
    if mode == "concat":
        return concat([f_sh, f_sp], axis=-1)
    if mode == "shared_only":
        return f_sh
    if mode == "specific_only":
        return f_sp
    raise ValueError(f"unknown fusion mode {mode!r}; expected one of {FUSION_MODES}")
