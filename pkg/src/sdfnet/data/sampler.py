"""Strict cross-modal P x K batch planning.

Every batch holds P distinct identities, each contributing K/2 optical and
K/2 SAR samples.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class BatchPlan:
    batches: list[np.ndarray]
    P: int
    K: int

    def __len__(self) -> int:
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)


def qualifying_identities(labels, modalities, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Split identities into (qualifying, excluded) by the K/2-per-modality rule."""
    labels = np.asarray(labels)
    modalities = np.asarray(modalities)
    half = K // 2
    ok, bad = [], []
    for ident in np.unique(labels):
        n_opt = np.count_nonzero((labels == ident) & (modalities == 0))
        n_sar = np.count_nonzero((labels == ident) & (modalities == 1))
        (ok if n_opt >= half and n_sar >= half else bad).append(ident)
    return np.array(ok, dtype=labels.dtype), np.array(bad, dtype=labels.dtype)


def check_batch(batch: np.ndarray, labels, modalities, P: int, K: int) -> None:
    labels = np.asarray(labels)[batch]
    modalities = np.asarray(modalities)[batch]
    ids = np.unique(labels)
    if batch.size != P * K or ids.size != P:
        raise AssertionError(f"batch has {batch.size} samples over {ids.size} identities, expected {P}x{K}")
    for ident in ids:
        m = modalities[labels == ident]
        if m.size != K or np.count_nonzero(m == 0) != K // 2:
            raise AssertionError(f"identity {ident}: {np.count_nonzero(m == 0)} optical / "
                                 f"{np.count_nonzero(m == 1)} SAR, expected {K // 2} each")


def _draw(pool: np.ndarray, count: int, rng) -> np.ndarray:
    """``count`` items from ``pool``: a permutation first, then with replacement."""
    perm = rng.permutation(pool)
    if count <= perm.size:
        return perm[:count]
    return np.concatenate([perm, rng.choice(pool, size=count - perm.size, replace=True)])


def plan_batches(labels, modalities, P: int, K: int, rng) -> BatchPlan:
    """One epoch of batches, as index arrays into ``labels``/``modalities``.

    Each identity is cut into ``max(n_opt, n_sar) // (K/2)`` chunks of K/2
    optical + K/2 SAR samples (without replacement while the smaller modality
    lasts, with replacement after). Batches draw P identities that still have
    chunks; a trailing group that would leave identities unseen this epoch is
    topped up with extra chunks of other identities.
    """
    if K < 2 or K % 2:
        raise ConfigError(f"K must be even and >= 2, got {K}")
    if P < 1:
        raise ConfigError(f"P must be positive, got {P}")
    labels = np.asarray(labels)
    modalities = np.asarray(modalities)
    half = K // 2
    ids, excluded = qualifying_identities(labels, modalities, K)
    if excluded.size:
        warnings.warn(f"excluding {excluded.size} identities with fewer than {half} images in a modality: "
                      f"{excluded.tolist()}", stacklevel=2)
    if ids.size == 0:
        raise ConfigError(f"no identity has >= {half} optical and >= {half} SAR training images")
    if ids.size < P:
        raise ConfigError(f"only {ids.size} qualifying identities, cannot fill P={P}")

    pools = {}
    chunks: dict = {}
    for ident in ids:
        opt = np.flatnonzero((labels == ident) & (modalities == 0))
        sar = np.flatnonzero((labels == ident) & (modalities == 1))
        pools[ident] = (opt, sar)
        n = max(opt.size, sar.size) // half
        o, s = _draw(opt, n * half, rng), _draw(sar, n * half, rng)
        chunks[ident] = [np.concatenate([o[i * half:(i + 1) * half], s[i * half:(i + 1) * half]])
                         for i in range(n)]

    def extra_chunk(ident):
        opt, sar = pools[ident]
        return np.concatenate([_draw(opt, half, rng), _draw(sar, half, rng)])

    batches, seen = [], set()
    while True:
        avail = np.array([i for i in ids if chunks[i]], dtype=ids.dtype)
        if avail.size >= P:
            pick = rng.choice(avail, size=P, replace=False)
            batch = [chunks[i].pop() for i in pick]
        elif avail.size and any(i not in seen for i in avail):
            fill = rng.choice(np.setdiff1d(ids, avail), size=P - avail.size, replace=False)
            pick = np.concatenate([avail, fill])
            batch = [chunks[i].pop() for i in avail] + [extra_chunk(i) for i in fill]
        else:
            break
        seen.update(pick.tolist())
        b = np.concatenate(batch)
        check_batch(b, labels, modalities, P, K)
        batches.append(b)
    return BatchPlan(batches, P, K)


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])
