"""Synthetic optical/SAR ship pairs.

Every identity owns one rigid geometry (hull outline plus superstructure
blocks). Optical views render it as a shaded silhouette over a sinusoidal
sea with illumination jitter and additive noise; SAR views render the same
geometry as backscatter with point scatterers, dark clutter and L-look gamma
speckle. Pose varies per image: 0/180 degree rotation and sub-pixel shift.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..exceptions import ConfigError
from .manifest import Manifest, SampleRecord

MODALITY_TAGS = {0: "opt", 1: "sar"}
_SUPERSAMPLE = 3


@dataclass
class SynthConfig:
    num_identities: int = 20
    images_per_identity_per_modality: int = 8
    test_per_modality: int = 4
    queries_per_modality: int = 1
    canvas_h: int = 64
    canvas_w: int = 32
    speckle_looks: int = 3
    scatterer_count: int = 4
    sea_texture_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for f in ("num_identities", "images_per_identity_per_modality", "canvas_h", "canvas_w", "speckle_looks"):
            if getattr(self, f) <= 0:
                raise ConfigError(f"{f} must be positive")
        if self.scatterer_count < 0 or self.sea_texture_scale < 0:
            raise ConfigError("scatterer_count and sea_texture_scale must be non-negative")
        if not 0 <= self.test_per_modality < self.images_per_identity_per_modality:
            raise ConfigError("test_per_modality must leave at least one training image per modality")
        if self.test_per_modality and not 1 <= self.queries_per_modality < self.test_per_modality:
            raise ConfigError("queries_per_modality must leave at least one gallery image")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown synth config key(s): {', '.join(unknown)}")
        return cls(**d)


@dataclass
class ShipGeometry:
    length: float          # fraction of canvas height
    beam: float            # fraction of canvas width
    bow: float             # fraction of the length taken by the tapered bow
    stern: float           # stern half-width relative to full beam
    blocks: np.ndarray     # rows of (centre, length, width, height); centre/length along hull in [0,1]
    paint: float           # optical hull reflectance
    deck: float            # optical superstructure reflectance


@dataclass
class Pose:
    flipped: bool
    dy: float
    dx: float


def random_geometry(rng: np.random.Generator) -> ShipGeometry:
    n_blocks = int(rng.integers(1, 4))
    centres = np.sort(rng.uniform(0.15, 0.75, n_blocks))
    blocks = np.column_stack([
        centres,
        rng.uniform(0.08, 0.22, n_blocks),
        rng.uniform(0.35, 0.8, n_blocks),
        rng.uniform(0.4, 1.0, n_blocks),
    ])
    return ShipGeometry(
        length=float(rng.uniform(0.55, 0.9)),
        beam=float(rng.uniform(0.3, 0.7)),
        bow=float(rng.uniform(0.12, 0.35)),
        stern=float(rng.uniform(0.55, 1.0)),
        blocks=blocks,
        paint=float(rng.uniform(0.55, 0.8)),
        deck=float(rng.uniform(0.8, 0.95)),
    )


def _hull_halfwidth(g: ShipGeometry, t: np.ndarray) -> np.ndarray:
    # t=0 stern, t=1 bow; returns half-width as a fraction of full beam
    hw = np.minimum(1.0, g.stern + (1.0 - g.stern) * t / 0.2) * 0.5
    bow_start = 1.0 - g.bow
    taper = np.sqrt(np.clip((1.0 - t) / g.bow, 0.0, 1.0))
    hw = np.where(t > bow_start, hw * taper, hw)
    return np.where((t >= 0) & (t <= 1), hw, 0.0)


def render_layers(g: ShipGeometry, pose: Pose, h: int, w: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Anti-aliased coverage maps: hull, superstructure height, and lateral coordinate."""
    s = _SUPERSAMPLE
    off = (np.arange(s) + 0.5) / s
    ys = (np.arange(h)[:, None] + off[None, :]).reshape(-1)
    xs = (np.arange(w)[:, None] + off[None, :]).reshape(-1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    cy, cx = h / 2.0 + pose.dy, w / 2.0 + pose.dx
    length_px, beam_px = g.length * h, g.beam * w
    t = (yy - cy) / length_px + 0.5
    v = (xx - cx) / beam_px
    if pose.flipped:
        t, v = 1.0 - t, -v
    hull = np.abs(v) <= _hull_halfwidth(g, t)
    sup = np.zeros_like(yy)
    for centre, blen, bwid, bh in g.blocks:
        inside = (np.abs(t - centre) <= blen / 2) & (np.abs(v) <= bwid * _hull_halfwidth(g, centre))
        sup = np.where(inside & hull, np.maximum(sup, bh), sup)

    def down(a):
        return a.reshape(h, s, w, s).mean(axis=(1, 3))

    return down(hull.astype(np.float64)), down(sup), down(np.where(hull, v, 0.0))


def hull_mask(g: ShipGeometry, pose: Pose, h: int, w: int) -> np.ndarray:
    return render_layers(g, pose, h, w)[0] >= 0.5


def render_optical(g: ShipGeometry, pose: Pose, h: int, w: int, rng, sea_scale: float = 1.0) -> np.ndarray:
    hull, sup, lateral = render_layers(g, pose, h, w)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    k = rng.uniform(0.4, 1.2)
    theta = rng.uniform(0, np.pi)
    sea = 0.25 + 0.05 * sea_scale * np.sin(k * (np.cos(theta) * yy + np.sin(theta) * xx) + rng.uniform(0, 2 * np.pi))
    light = rng.uniform(-1.0, 1.0)
    body = g.paint * (1.0 + 0.35 * light * lateral)
    img = sea * (1.0 - hull) + body * hull
    img = img * (1.0 - (sup > 0)) + (sup > 0) * (g.deck * (0.7 + 0.3 * sup) * (1.0 + 0.2 * light * lateral))
    img = img * rng.uniform(0.8, 1.2) + rng.uniform(-0.05, 0.05)
    img = img + rng.normal(0.0, 0.02, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def sar_reflectivity(g: ShipGeometry, pose: Pose, h: int, w: int, rng, scatterers: int) -> np.ndarray:
    hull, sup, _ = render_layers(g, pose, h, w)
    refl = 0.04 + 0.3 * hull + 0.45 * sup
    if scatterers:
        ys, xs = np.nonzero(hull > 0.5)
        if ys.size:
            pick = rng.choice(ys.size, size=min(scatterers, ys.size), replace=False)
            refl[ys[pick], xs[pick]] = 1.0
    return refl


def render_sar(g: ShipGeometry, pose: Pose, h: int, w: int, rng, looks: float, scatterers: int) -> np.ndarray:
    refl = sar_reflectivity(g, pose, h, w, rng, scatterers)
    speckle = rng.gamma(shape=looks, scale=1.0 / looks, size=refl.shape)
    # amplitude display, compressed like a typical detected SAR product
    return np.clip(np.sqrt(refl * speckle), 0.0, 1.0)


def random_pose(rng) -> Pose:
    return Pose(bool(rng.random() < 0.5), float(rng.uniform(-1.5, 1.5)), float(rng.uniform(-1.0, 1.0)))


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)


def image_name(identity: int, modality: int, idx: int) -> str:
    return f"images/{identity:04d}_{MODALITY_TAGS[modality]}_{idx:02d}.pgm"


def generate_synthetic(cfg: SynthConfig, with_meta: bool = False):
    """Render the dataset; returns ``(images uint8 N x H x W, Manifest)``.

    With ``with_meta`` a third element lists, per image, its geometry and pose.
    """
    root = np.random.SeedSequence(cfg.seed)
    id_seqs = root.spawn(cfg.num_identities)
    h, w = cfg.canvas_h, cfg.canvas_w
    n = cfg.images_per_identity_per_modality
    n_train = n - cfg.test_per_modality
    images, records, meta = [], [], []
    for ident, seq in enumerate(id_seqs):
        geo_seq, *img_seqs = seq.spawn(1 + 2 * n)
        geom = random_geometry(np.random.default_rng(geo_seq))
        for modality in (0, 1):
            for idx in range(n):
                rng = np.random.default_rng(img_seqs[modality * n + idx])
                pose = random_pose(rng)
                if modality == 0:
                    img = render_optical(geom, pose, h, w, rng, cfg.sea_texture_scale)
                else:
                    img = render_sar(geom, pose, h, w, rng, cfg.speckle_looks, cfg.scatterer_count)
                if idx < n_train:
                    split, role = "train", "none"
                else:
                    split = "test"
                    role = "query" if idx - n_train < cfg.queries_per_modality else "gallery"
                images.append(to_uint8(img))
                records.append(SampleRecord(image_name(ident, modality, idx), ident, modality, split, role))
                meta.append((geom, pose))
    out = (np.stack(images), Manifest(records))
    return out + (meta,) if with_meta else out
