"""Identity losses and the weighted joint objective."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ConfigError, UsageError
from .tensor import Tensor, as_tensor, log_softmax, safe_sqrt, softmax, softplus


@dataclass
class LossWeights:
    lambda_orth: float = 10.0
    lambda_struct: float = 1.0
    label_smoothing: float = 0.1

    def __post_init__(self):
        if self.lambda_orth < 0 or self.lambda_struct < 0:
            raise ConfigError("loss weights must be non-negative")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must lie in [0, 1)")


@dataclass
class LossBreakdown:
    l_id: float
    l_ce: float
    l_tri: float
    l_orth: float
    l_struct: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)


def smoothed_cross_entropy(logits: Tensor, labels, eps_ls: float = 0.1) -> Tensor:
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    b, k = logits.shape
    if labels.shape[0] != b:
        raise UsageError("one label per logit row is required")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise UsageError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    q = np.full((b, k), eps_ls / k, dtype=logits.dtype)
    q[np.arange(b), labels] += 1.0 - eps_ls
    return -(log_softmax(logits, axis=1) * q).sum(axis=1).mean()


def pairwise_euclidean(x: Tensor) -> Tensor:
    diff = x.reshape(x.shape[0], 1, x.shape[1]) - x.reshape(1, x.shape[0], x.shape[1])
    return safe_sqrt((diff * diff).sum(axis=-1))


def weighted_triplet(features: Tensor, labels) -> Tensor:
    """Soft-margin triplet with softmax-weighted positives and negatives.

    For anchor i, positives (same label, excluding i itself) are weighted by
    softmax of their distances and negatives by softmax of negated distances;
    the per-anchor loss is ``softplus(d_pos - d_neg)``. Anchors lacking a
    positive or a negative are skipped.
    """
    features = as_tensor(features)
    labels = np.asarray(labels).reshape(-1)
    n = features.shape[0]
    same = labels[:, None] == labels[None, :]
    pos = same & ~np.eye(n, dtype=bool)
    neg = ~same
    valid = pos.any(axis=1) & neg.any(axis=1)
    if not valid.any():
        return Tensor(np.zeros((), dtype=features.dtype))
    rows = np.flatnonzero(valid)

    dist = pairwise_euclidean(features)[rows]
    pos, neg = pos[rows], neg[rows]
    big = np.asarray(1e30, dtype=dist.dtype)
    zero = np.zeros((), dtype=dist.dtype)
    # masked softmax: push excluded entries to -inf-ish before normalising
    w_pos = softmax(dist + np.where(pos, zero, -big), axis=1)
    w_neg = softmax(-dist + np.where(neg, zero, -big), axis=1)
    d_pos = (dist * w_pos).sum(axis=1)
    d_neg = (dist * w_neg).sum(axis=1)
    return softplus(d_pos - d_neg).mean()


def joint_loss(l_ce, l_tri, l_orth, l_struct, weights: LossWeights) -> tuple[Tensor, LossBreakdown]:
    """Combine components into the training objective.

    Components may be Tensors or plain floats; the returned total is a Tensor
    whenever any component is.
    """
    parts = {"l_ce": l_ce, "l_tri": l_tri, "l_orth": l_orth, "l_struct": l_struct}
    for name, v in parts.items():
        val = v.item() if isinstance(v, Tensor) else float(v)
        if not math.isfinite(val):
            raise FloatingPointError(f"non-finite loss component {name} = {val}")
    total = l_ce + l_tri
    if weights.lambda_orth:
        total = total + l_orth * weights.lambda_orth
    if weights.lambda_struct:
        total = total + l_struct * weights.lambda_struct
    val = lambda v: v.item() if isinstance(v, Tensor) else float(v)
    breakdown = LossBreakdown(
        l_id=val(l_ce) + val(l_tri), l_ce=val(l_ce), l_tri=val(l_tri),
        l_orth=val(l_orth), l_struct=val(l_struct), total=val(total))
    return total, breakdown
