"""Acceptance suite: one test per headline criterion."""

import json
import time

import numpy as np
import pytest

from sdfnet import cli, dfl, scl
from sdfnet.backbone import ModelConfig
from sdfnet.data import Manifest, SampleRecord, SynthConfig, check_batch, epoch_rng, generate_synthetic, plan_batches, to_chw
from sdfnet.evaluation import PROTOCOLS, average_precision, evaluate, evaluate_protocol, protocol_counts
from sdfnet.exceptions import ProtocolError
from sdfnet.losses import smoothed_cross_entropy, weighted_triplet
from sdfnet.model import SDFNet
from sdfnet.tensor import Tensor, no_grad
from sdfnet.trainer import Checkpoint, TrainConfig, TrainSet, compute_losses, embed_all, run_training

from conftest import check_grads, leaf
from test_evaluation import brute_force, hoss_stub, random_instance

TOL_GRAD = 1e-3


# 1 ------------------------------------------------------------------ gradients
def _sampled(rng, per_tensor=3):
    def coords(t):
        flat = rng.choice(t.data.size, size=min(per_tensor, t.data.size), replace=False)
        return [np.unravel_index(int(i), t.data.shape) for i in flat]
    return coords


def _component_errors(rng):
    labels = np.array([0, 0, 1, 1, 2, 2, 0, 1])
    mods = np.array([0, 1, 0, 1, 0, 1, 1, 0])
    grid = leaf(rng, 8, 4, 5, 5)
    errs = {"struct": check_grads(
        lambda: scl.struct_loss(scl.build_prototypes(scl.describe(grid).f_hat, labels, mods)), [grid])}
    a, b = leaf(rng, 6, 5), leaf(rng, 6, 5)
    errs["orth"] = check_grads(lambda: dfl.orth_loss(a, b), [a, b])
    logits = leaf(rng, 8, 5, scale=3.0)
    errs["ce"] = check_grads(lambda: smoothed_cross_entropy(logits, labels % 5, 0.1), [logits])
    feats = leaf(rng, 8, 6)
    errs["triplet"] = check_grads(lambda: weighted_triplet(feats, labels), [feats])
    return errs


def _central(fn, arr, ix, h):
    old = arr[ix]
    arr[ix] = old + h
    with no_grad():
        fp = float(fn().data)
    arr[ix] = old - h
    with no_grad():
        fm = float(fn().data)
    arr[ix] = old
    return (fp - fm) / (2 * h)


def _joint_error(seed, rng, h=1e-5):
    """Worst relative error over sampled coordinates of every parameter.

    Errors are scaled by the largest gradient in the model; coordinates whose
    central difference moves between h and h/2 straddle an |.| kink and are skipped.
    """
    cfg = TrainConfig(dtype="float64", seed=seed,
                      model=ModelConfig(layers=2, struct_layer=1, num_identities=3))
    model = SDFNet(cfg.model, True, "additive", seed=seed, dtype=np.float64)
    images = rng.uniform(0, 1, (8, 3, cfg.model.image_h, cfg.model.image_w))
    labels = np.array([0, 0, 1, 1, 2, 2, 0, 1])
    mods = np.array([0, 1, 0, 1, 0, 1, 1, 0])
    fn = lambda: compute_losses(model, images, labels, mods, cfg)[0]
    model.zero_grad()
    fn().backward()
    params = [p for _, p in model.named_parameters()]
    scale = max(float(np.abs(p.grad).max()) for p in params)
    floor = 1e-6 * scale
    coords = _sampled(rng)
    worst, checked, skipped = 0.0, 0, 0
    for p in params:
        for ix in coords(p):
            d1 = _central(fn, p.data, ix, h)
            d2 = _central(fn, p.data, ix, h / 2)
            if abs(d1 - d2) > 1e-4 * max(abs(d1), abs(d2), floor):
                skipped += 1
                continue
            a = float(p.grad[ix])
            worst = max(worst, abs(a - d1) / max(abs(a), abs(d1), floor))
            checked += 1
    return worst, checked, skipped


def test_gradient_suite():
    t0 = time.perf_counter()
    worst: dict = {}
    checked = skipped = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        errs = _component_errors(rng)
        errs["joint"], n, k = _joint_error(seed, rng)
        checked += n
        skipped += k
        for k, v in errs.items():
            worst[k] = max(worst.get(k, 0.0), v)
    elapsed = time.perf_counter() - t0
    print(f"max rel err {worst}; joint coords checked {checked}, skipped at kinks {skipped}; {elapsed:.1f}s")
    assert skipped <= 0.02 * (checked + skipped)
    assert all(v < TOL_GRAD for v in worst.values()), worst
    assert elapsed < 300


# 2 ------------------------------------------------------------- SCL invariance
def test_scl_invariance_suite():
    rng = np.random.default_rng(2024)
    eps = scl.DEFAULT_EPS
    failures = {"shift": 0, "in_stats": 0, "affine": 0, "struct_zero": 0}
    worst_affine = 0.0
    for _ in range(1000):
        c = int(rng.integers(2, 17))
        h, w = int(rng.integers(3, 9)), int(rng.integers(3, 9))
        # (a) dyadic grid plus an integer shift is exact in floating point
        F = rng.integers(-512, 512, size=(2, c, h, w)) / 64.0
        k = float(rng.integers(-1000, 1000))
        g0, g1 = scl.spatial_gradients(Tensor(F)), scl.spatial_gradients(Tensor(F + k))
        if not all(np.array_equal(x.data, y.data) for x, y in zip(g0, g1)):
            failures["shift"] += 1

        # (b) normalised statistics when input variance >= 1e-2
        f = rng.standard_normal((1, c))
        f = (f - f.mean()) / f.std() * np.sqrt(10 ** rng.uniform(-2, 4)) + rng.uniform(-50, 50)
        z = scl.instance_normalize(Tensor(f)).data
        if abs(z.mean()) >= 1e-5 or not 0.95 <= z.var() <= 1.05:
            failures["in_stats"] += 1

        # (c) descriptor-level positive affine invariance, var(f_struct) >= 1e-2
        G = rng.standard_normal((1, c, h, w))
        v = scl.describe(Tensor(G)).f_struct.data.var()
        G *= np.sqrt(10 ** rng.uniform(-2, 4) / v)
        ref = scl.describe(Tensor(G)).f_hat.data
        for a in (0.1, 1.0, 10.0, 100.0):
            got = scl.describe(Tensor(a * G + rng.uniform(-10, 10))).f_hat.data
            d = float(np.abs(got - ref).max())
            worst_affine = max(worst_affine, d)
            if d >= 1e-3:
                failures["affine"] += 1
                break

        # (d) identical prototypes across modalities give exactly zero
        proto = Tensor(rng.standard_normal(c))
        pairs = [scl.PrototypePair(i, proto, proto) for i in range(int(rng.integers(1, 5)))]
        if float(scl.struct_loss(pairs).data) != 0.0:
            failures["struct_zero"] += 1
    print(f"failures per 1000 trials {failures}; worst affine deviation {worst_affine:.3g} (eps={eps})")
    assert failures == {"shift": 0, "in_stats": 0, "affine": 0, "struct_zero": 0}, failures


# 3 ---------------------------------------------------------------- metric oracle
def test_metric_oracle():
    assert average_precision([1, 0, 1], 2) == pytest.approx(0.83333, abs=1e-5)
    checked = 0
    for seed in range(100):
        rng = np.random.default_rng(10_000 + seed)
        man, emb = random_instance(rng)
        labels, mods, roles = man.labels.tolist(), man.modalities.tolist(), [r.role for r in man]
        for spec in PROTOCOLS.values():
            try:
                rep = evaluate_protocol(emb, man, spec)
            except ProtocolError:
                continue
            ref = brute_force(emb, labels, mods, roles, spec.query_modalities, spec.gallery_modalities)
            assert np.max(np.abs(np.array([rep.map, rep.rank1, rep.rank5, rep.rank10]) - ref)) < 1e-9
            # mAP is the plain mean of per-query AP
            assert abs(rep.map - float(np.mean(rep.aps))) < 1e-12
            checked += 1
    assert checked >= 100


# 4 ------------------------------------------------------------ protocol fidelity
def test_protocol_fidelity():
    man = hoss_stub()
    got = [(protocol_counts(man, PROTOCOLS[p])["num_query"], protocol_counts(man, PROTOCOLS[p])["num_gallery"])
           for p in ("all", "opt2sar", "sar2opt")]
    assert got == [(176, 593), (65, 190), (67, 403)]


# 5 ------------------------------------------------------------------- sampler
def test_sampler_property():
    _, man = generate_synthetic(SynthConfig())
    idx = man.indices(split="train")
    labels, mods = man.labels[idx], man.modalities[idx]
    cfg = TrainConfig()
    violations = batches = 0
    for epoch in range(50):
        for b in plan_batches(labels, mods, cfg.P, cfg.K, epoch_rng(7, epoch)):
            batches += 1
            try:
                check_batch(b, labels, mods, cfg.P, cfg.K)
            except AssertionError:
                violations += 1
    assert batches > 0 and violations == 0


# 6 ---------------------------------------------------------- synthetic efficacy
def _cross_modal_map(model, images, test):
    reps = evaluate(embed_all(model, images, test.modalities), test, ("opt2sar", "sar2opt"))
    return 0.5 * (reps["opt2sar"].map + reps["sar2opt"].map)


@pytest.mark.slow
def test_synthetic_efficacy():
    images, man = generate_synthetic(SynthConfig())
    X = to_chw(images)
    train = TrainSet.from_manifest(man, X)
    idx = man.indices(split="test")
    test = Manifest([man[int(i)] for i in idx])
    arms = {"baseline": dict(scl_on=False, dfl_on=False), "full": dict(), "shared_only": dict(fusion_mode="shared_only")}
    t0 = time.perf_counter()
    res = {k: [] for k in arms}
    for seed in range(3):
        for name, over in arms.items():
            cfg = TrainConfig(seed=seed, **over)
            model, _, _ = run_training(cfg, train)
            res[name].append(_cross_modal_map(model, X[idx], test))
    elapsed = time.perf_counter() - t0
    print("cross-modal mAP per seed", {k: [round(v, 4) for v in vs] for k, vs in res.items()}, f"{elapsed:.0f}s")
    gain_wins = sum(f - b >= 0.02 for f, b in zip(res["full"], res["baseline"]))
    fusion_wins = sum(f >= s for f, s in zip(res["full"], res["shared_only"]))
    assert elapsed < 45 * 60
    assert gain_wins >= 2, f"full beats baseline by 2 points in {gain_wins}/3 seeds"
    assert fusion_wins >= 2, f"additive >= shared_only in {fusion_wins}/3 seeds"


# 7 --------------------------------------------------------------- determinism
def test_determinism(tmp_path):
    assert cli.main(["synth", "--out", str(tmp_path / "data")]) == 0
    outs = []
    for run in ("a", "b"):
        assert cli.main(["train", "--data", str(tmp_path / "data"), "--out", str(tmp_path / run), "--epochs", "2"]) == 0
        ck = tmp_path / run / "checkpoints" / "final.ckpt"
        assert cli.main(["eval", "--checkpoint", str(ck), "--data", str(tmp_path / "data"),
                         "--out", str(tmp_path / f"eval_{run}")]) == 0
        outs.append((ck.read_bytes(), (tmp_path / f"eval_{run}" / "metrics.json").read_bytes(),
                     (tmp_path / run / "train_log.jsonl").read_bytes()))
    assert outs[0] == outs[1]


# 8 ------------------------------------------------------------------ plumbing
def test_plumbing(tmp_path):
    cfg = SynthConfig(num_identities=4, images_per_identity_per_modality=6, test_per_modality=2)
    images, man = generate_synthetic(cfg)
    X = to_chw(images)
    tcfg = TrainConfig(epochs=1, model=ModelConfig(layers=2, dim=16, heads=2, struct_layer=1))
    _, ck, _ = run_training(tcfg, TrainSet.from_manifest(man, X))

    # byte-identical save/load/save
    ck.save(tmp_path / "a.ckpt")
    Checkpoint.load(tmp_path / "a.ckpt").save(tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    # CLI metrics against the library path
    from sdfnet.data.images import save_dataset

    save_dataset(tmp_path / "data", images, man)
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "a.ckpt"), "--data", str(tmp_path / "data"),
                     "--out", str(tmp_path / "ev")]) == 0
    doc = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    idx = man.indices(split="test")
    test = Manifest([man[int(i)] for i in idx])
    reps = evaluate(embed_all(Checkpoint.load(tmp_path / "a.ckpt").build_model(), X[idx], test.modalities), test)
    diffs = [abs(doc[p][k] - v) for p, r in reps.items() for k, v in r.summary().items()]
    assert max(diffs) <= 1e-12

    # fusion costs exactly the two projection heads
    mc = ModelConfig()
    base = SDFNet(mc, dfl_on=False).num_parameters()
    heads = SDFNet(mc).heads.num_parameters()
    for mode in ("additive", "shared_only", "specific_only"):
        assert SDFNet(mc, True, mode).num_parameters() - base == heads == 2 * (mc.dim ** 2 + mc.dim)
