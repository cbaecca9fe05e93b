import hashlib
import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from sdfnet.data import (Manifest, SampleRecord, SynthConfig, augment, check_batch, convert_hoss_tree,
                         generate_synthetic, hflip, load_images, load_manifest, plan_batches,
                         qualifying_identities, read_image, save_dataset, to_chw)
from sdfnet.data.augment import pad_crop
from sdfnet.data.synthetic import hull_mask, random_geometry, random_pose, render_sar, sar_reflectivity
from sdfnet.exceptions import ConfigError, ValidationError


# ---------------------------------------------------------------- manifest
def write_lines(path, objs):
    path.write_text("".join((o if isinstance(o, str) else json.dumps(o)) + "\n" for o in objs))
    return path


def rec(ref, ident=0, mod=0, split="train", role="none"):
    return {"image_ref": ref, "identity": ident, "modality": mod, "split": split, "role": role}


def test_manifest_round_trip(tmp_path):
    m = Manifest([SampleRecord("a.pgm", 1, 0), SampleRecord("b.pgm", 1, 1, "test", "query")])
    m.save(tmp_path / "m.jsonl")
    back = load_manifest(tmp_path / "m.jsonl")
    assert back.records == m.records and back.root == tmp_path
    assert back.counts()[("test", "query", "sar")] == 1


def test_manifest_errors_list_lines(tmp_path):
    p = write_lines(tmp_path / "m.jsonl", [rec("a"), rec("b", mod=2), rec("a"), rec("c", role="query")])
    with pytest.raises(ValidationError) as err:
        load_manifest(p)
    text = str(err.value)
    assert "line 2" in text and "modality" in text
    assert "line 3" in text and "duplicate" in text
    assert "line 4" in text and len(err.value.problems) == 3


def test_manifest_empty_and_missing(tmp_path):
    (tmp_path / "e.jsonl").write_text("\n")
    with pytest.raises(ValidationError, match="empty"):
        load_manifest(tmp_path / "e.jsonl")
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "nope.jsonl")
    p = write_lines(tmp_path / "x.jsonl", ["{not json", {"image_ref": "a"}])
    with pytest.raises(ValidationError) as err:
        load_manifest(p)
    assert len(err.value.problems) == 2


def test_hoss_converter(tmp_path):
    for split, mod, name in [("train", "optical", "0001_a.png"), ("train", "sar", "0001_b.png"),
                             ("query", "sar", "0002_q.png"), ("gallery", "optical", "0002_g.png")]:
        d = tmp_path / split / mod
        d.mkdir(parents=True, exist_ok=True)
        (d / name).write_bytes(b"")
    m = convert_hoss_tree(tmp_path)
    assert len(m) == 4
    assert m.counts()[("test", "query", "sar")] == 1
    assert m.counts()[("train", "none", "optical")] == 1


# --------------------------------------------------------------- synthetic
def test_synthetic_counts_and_split(synth_small):
    images, man = synth_small
    assert images.shape == (6 * 6 * 2, 64, 32) and images.dtype == np.uint8
    c = man.counts()
    assert c[("train", "none", "optical")] == 6 * 3
    assert c[("test", "query", "sar")] == 6 and c[("test", "gallery", "optical")] == 12
    man.validate()


def test_default_dataset_size():
    images, man = generate_synthetic(SynthConfig())
    assert len(man) == images.shape[0] == 320


def test_synthetic_deterministic():
    a = generate_synthetic(SynthConfig(num_identities=3, seed=7))
    b = generate_synthetic(SynthConfig(num_identities=3, seed=7))
    assert a[0].tobytes() == b[0].tobytes() and a[1].to_jsonl() == b[1].to_jsonl()
    c = generate_synthetic(SynthConfig(num_identities=3, seed=8))
    assert a[0].tobytes() != c[0].tobytes()


def test_synth_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig(num_identities=0)
    with pytest.raises(ConfigError, match="colour"):
        SynthConfig.from_dict({"colour": 1})


def _silhouette(img, pose):
    # median filter, threshold halfway between sea (border) and ship levels,
    # then move back to the canonical frame: undo the shift, then the 180-degree turn
    x = ndimage.median_filter(img.astype(np.float64), 3)
    edge = np.ones_like(x, dtype=bool)
    edge[2:-2, 2:-2] = False
    sea = np.median(x[edge])
    ship = np.median(x[x > x[edge].max()])
    m = ndimage.shift((x > (sea + ship) / 2).astype(np.float64), (-pose.dy, -pose.dx), order=1) > 0.5
    return m[::-1, ::-1] if pose.flipped else m


def test_cross_modal_silhouette_iou():
    images, man, meta = generate_synthetic(SynthConfig(num_identities=10, images_per_identity_per_modality=4,
                                                       test_per_modality=2, seed=11), with_meta=True)
    labels, mods = man.labels, man.modalities
    for ident in range(10):
        o = np.flatnonzero((labels == ident) & (mods == 0))
        s = np.flatnonzero((labels == ident) & (mods == 1))
        for i, j in zip(o, s):
            a, b = _silhouette(images[i], meta[i][1]), _silhouette(images[j], meta[j][1])
            assert meta[i][0] is meta[j][0]
            iou = (a & b).sum() / (a | b).sum()
            assert iou > 0.8, (ident, iou)


def test_speckle_vanishes_with_many_looks():
    g = random_geometry(np.random.default_rng(0))
    pose = random_pose(np.random.default_rng(1))
    hull = hull_mask(g, pose, 64, 32)
    clean = np.sqrt(sar_reflectivity(g, pose, 64, 32, np.random.default_rng(2), 4))
    resid = []
    for looks in (1, 10, 100, 10_000):
        img = render_sar(g, pose, 64, 32, np.random.default_rng(2), looks, 4)
        resid.append(np.var((img - np.clip(clean, 0, 1))[hull]))
    assert all(a > b for a, b in zip(resid, resid[1:]))
    assert resid[-1] < 1e-4


# ------------------------------------------------------------------ images
def test_dataset_on_disk(tmp_path, synth_small):
    images, man = synth_small
    written = save_dataset(tmp_path, images, man)
    assert len(written) == len(man) + 1
    back = load_manifest(tmp_path / "manifest.jsonl")
    loaded = load_images(back)
    np.testing.assert_array_equal(loaded, to_chw(images))
    assert read_image(tmp_path / man[0].image_ref, size=(32, 16)).shape == (3, 32, 16)
    (tmp_path / man[1].image_ref).unlink()
    with pytest.raises(FileNotFoundError, match=man[1].image_ref):
        load_images(back)


def test_to_chw_rejects_bad_shape():
    with pytest.raises(ValidationError):
        to_chw(np.zeros((2, 2, 5, 5)))


# ----------------------------------------------------------------- augment
def _all_miss_seed(pad=4):
    for seed in range(10_000):
        r = np.random.default_rng(seed)
        if r.random() >= 0.5 and (r.integers(0, 2 * pad + 1, size=2) == pad).all() and r.random() >= 0.2:
            return seed
    raise RuntimeError("no seed found")


def test_augment_identity_when_every_draw_misses(rng):
    img = rng.random((3, 16, 8)).astype(np.float32)
    out = augment(img, np.random.default_rng(_all_miss_seed()))
    np.testing.assert_array_equal(out, img)


def test_flip_is_involution(rng):
    img = rng.random((3, 16, 8))
    once = augment(img, np.random.default_rng(0), flip_p=1.0, pad=0, erase_p=0.0)
    np.testing.assert_array_equal(once, hflip(img))
    np.testing.assert_array_equal(hflip(once), img)


@pytest.mark.parametrize("seed", range(20))
def test_erase_changes_one_rectangle(seed):
    img = np.full((3, 32, 16), 2.0)  # noise fill lies in [0, 1), so every erased pixel differs
    out = augment(img, np.random.default_rng(seed), flip_p=0.0, pad=0, erase_p=1.0)
    diff = (out != img).any(axis=0)
    ys, xs = np.nonzero(diff)
    assert ys.size > 0
    box = np.zeros_like(diff)
    box[ys.min():ys.max() + 1, xs.min():xs.max() + 1] = True
    np.testing.assert_array_equal(diff, box)
    assert 0.02 * 512 - 16 <= box.sum() <= 0.33 * 512 + 16


def test_pad_crop_shift():
    img = np.arange(12.0).reshape(1, 3, 4)
    out = pad_crop(img, 1, 0, 0)
    np.testing.assert_array_equal(out[0, 1:, 1:], img[0, :2, :3])
    assert out[0, 0].sum() == 0
