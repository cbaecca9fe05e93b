import numpy as np
import pytest

from sdfnet.tensor import Tensor, no_grad


def numeric_grad(fn, arr: np.ndarray, h: float = 1e-5, coords=None) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. ``arr`` (perturbed in place)."""
    out = np.zeros_like(arr, dtype=np.float64)
    it = coords if coords is not None else list(np.ndindex(arr.shape))
    for ix in it:
        old = arr[ix]
        arr[ix] = old + h
        with no_grad():
            fp = float(fn().data)
        arr[ix] = old - h
        with no_grad():
            fm = float(fn().data)
        arr[ix] = old
        out[ix] = (fp - fm) / (2 * h)
    return out


def rel_err(a, b, scale=None) -> float:
    """Elementwise relative error; entries far below ``scale`` are judged against ``1e-6 * scale``
    so exact zeros (e.g. border cells) do not turn finite-difference roundoff into large ratios."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    if scale is None:
        scale = max(np.abs(a).max(), np.abs(b).max())
    floor = max(1e-6 * scale, 1e-12)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def check_grads(fn, leaves, h=1e-5, coords=None):
    """Max relative error between autograd and central differences over ``leaves``."""
    for t in leaves:
        t.grad = None
    fn().backward()
    worst = 0.0
    for t in leaves:
        cs = None if coords is None else coords(t)
        num = numeric_grad(fn, t.data, h, cs)
        ana = np.zeros_like(t.data) if t.grad is None else t.grad
        if cs is not None:
            idx = tuple(np.array(c) for c in zip(*cs))
            worst = max(worst, rel_err(ana[idx], num[idx], scale=max(np.abs(ana).max(), 1e-300)))
        else:
            worst = max(worst, rel_err(ana, num))
    return worst


def leaf(rng, *shape, scale=1.0):
    return Tensor(scale * rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth_small():
    from sdfnet.data import SynthConfig, generate_synthetic

    return generate_synthetic(SynthConfig(num_identities=6, images_per_identity_per_modality=6,
                                          test_per_modality=3, seed=3))


@pytest.fixture(scope="session")
def desk_run():
    """Default desk configuration trained for the full 30 epochs on the default synthetic set."""
    from sdfnet.data import Manifest, SynthConfig, generate_synthetic, to_chw
    from sdfnet.trainer import TrainConfig, TrainSet, run_training

    images, man, meta = generate_synthetic(SynthConfig(), with_meta=True)
    X = to_chw(images)
    log: list = []
    model, ckpt, _ = run_training(TrainConfig(), TrainSet.from_manifest(man, X), log=log)
    return {"images": X, "manifest": man, "meta": meta, "model": model, "checkpoint": ckpt, "log": log}
