import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdfnet.exceptions import ConfigError, UsageError
from sdfnet.losses import LossWeights, joint_loss, smoothed_cross_entropy, weighted_triplet
from sdfnet.tensor import Tensor

from conftest import check_grads, leaf


def T(x):
    return Tensor(np.asarray(x, dtype=np.float64), dtype=np.float64)


def test_ce_examples():
    assert smoothed_cross_entropy(T(np.zeros((3, 4))), [0, 1, 3], 0.0).item() == pytest.approx(math.log(4))
    assert smoothed_cross_entropy(T([[0.0, 0.0]]), [1], 0.1).item() == pytest.approx(math.log(2))
    margins = [smoothed_cross_entropy(T([[m, 0.0, 0.0]]), [0], 0.0).item() for m in (1, 10, 40)]
    assert margins[0] > margins[1] > margins[2] and margins[2] < 1e-15


def test_ce_label_range():
    with pytest.raises(UsageError):
        smoothed_cross_entropy(T(np.zeros((2, 3))), [0, 3])


def test_ce_smoothing_formula(rng):
    z = rng.standard_normal((5, 6))
    y = rng.integers(0, 6, 5)
    logp = z - np.log(np.exp(z).sum(1, keepdims=True))
    q = np.full((5, 6), 0.1 / 6)
    q[np.arange(5), y] += 0.9
    assert smoothed_cross_entropy(T(z), y, 0.1).item() == pytest.approx(-(q * logp).sum(1).mean(), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(-50, 50))
def test_ce_shift_invariance(seed, c):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((4, 5))
    y = rng.integers(0, 5, 4)
    assert abs(smoothed_cross_entropy(T(z + c), y).item() - smoothed_cross_entropy(T(z), y).item()) < 1e-6


def brute_triplet(x, labels):
    # loops over every anchor/pair, no vectorisation
    n = len(labels)
    d = [[math.dist(x[i], x[j]) for j in range(n)] for i in range(n)]
    losses = []
    for i in range(n):
        P = [j for j in range(n) if labels[j] == labels[i] and j != i]
        N = [j for j in range(n) if labels[j] != labels[i]]
        if not P or not N:
            continue
        zp = sum(math.exp(d[i][j]) for j in P)
        zn = sum(math.exp(-d[i][j]) for j in N)
        dp = sum(d[i][j] * math.exp(d[i][j]) / zp for j in P)
        dn = sum(d[i][j] * math.exp(-d[i][j]) / zn for j in N)
        losses.append(math.log1p(math.exp(dp - dn)))
    return sum(losses) / len(losses) if losses else 0.0


def test_triplet_identical_features():
    assert weighted_triplet(T(np.ones((4, 3))), [0, 0, 1, 1]).item() == pytest.approx(math.log(2))


def test_triplet_far_negatives():
    x = np.array([[0.0, 0], [0, 0], [100, 0], [100, 0]])
    assert weighted_triplet(T(x), [0, 0, 1, 1]).item() < 1e-40


def test_triplet_hand_instance():
    x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 1.0]])
    assert weighted_triplet(T(x), [0, 0, 1, 1]).item() == pytest.approx(brute_triplet(x, [0, 0, 1, 1]), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 4), st.integers(1, 3))
def test_triplet_matches_brute_force(seed, ids, per):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(ids), per)
    x = rng.standard_normal((labels.size, 3)) * 2
    ref = brute_triplet(x.tolist(), labels.tolist())
    assert weighted_triplet(T(x), labels).item() == pytest.approx(ref, rel=1e-10, abs=1e-12)


def test_triplet_without_valid_anchor():
    assert weighted_triplet(T(np.eye(3)), [0, 1, 2]).item() == 0.0
    assert weighted_triplet(T(np.eye(3)), [4, 4, 4]).item() == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_triplet_translation_invariant(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((6, 4))
    shift = rng.standard_normal(4) * 10
    labels = [0, 0, 1, 1, 2, 2]
    a, b = weighted_triplet(T(x), labels).item(), weighted_triplet(T(x + shift), labels).item()
    assert a >= 0 and b == pytest.approx(a, rel=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_loss_grads(seed):
    rng = np.random.default_rng(seed)
    z, f = leaf(rng, 6, 4), leaf(rng, 6, 3)
    y = rng.integers(0, 4, 6)
    labels = [0, 0, 1, 1, 2, 2]
    assert check_grads(lambda: smoothed_cross_entropy(z, y), [z]) < 1e-4
    assert check_grads(lambda: weighted_triplet(f, labels), [f]) < 1e-4


def test_joint_loss_arithmetic():
    total, bd = joint_loss(1.0, 0.5, 0.02, 0.3, LossWeights(10.0, 1.0))
    assert total == pytest.approx(2.0) and bd.total == pytest.approx(2.0)
    assert bd.l_id == 1.5
    total, bd = joint_loss(T(1.0), T(0.5), T(0.7), T(0.9), LossWeights(0.0, 0.0))
    assert bd.total == bd.l_id == 1.5


def test_joint_loss_nonfinite_names_component():
    with pytest.raises(FloatingPointError, match="l_orth"):
        joint_loss(1.0, 0.5, float("nan"), 0.3, LossWeights())


def test_loss_weight_defaults_and_validation():
    w = LossWeights()
    assert (w.lambda_orth, w.lambda_struct, w.label_smoothing) == (10.0, 1.0, 0.1)
    with pytest.raises(ConfigError):
        LossWeights(lambda_orth=-1)
    with pytest.raises(ConfigError):
        LossWeights(label_smoothing=1.0)
