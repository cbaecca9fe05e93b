"""Training loop: P x K batches, joint loss, plain SGD with decoupled parameter groups."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import dfl, scl
from .backbone import ModelConfig
from .data.augment import augment
from .data.images import normalize
from .data.manifest import Manifest
from .data.sampler import epoch_rng, plan_batches
from .exceptions import ConfigError, UsageError
from .losses import LossBreakdown, LossWeights, joint_loss, smoothed_cross_entropy, weighted_triplet
from .model import SDFNet
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr_base: float = 0.05
    weight_decay: float = 1e-4
    momentum: float = 0.0
    epochs: int = 30
    warmup_epochs: int | None = None
    P: int = 4
    K: int = 4
    scl_on: bool = True
    dfl_on: bool = True
    fusion_mode: str = "additive"
    augment: bool = True
    seed: int = 0
    dtype: str = "float32"
    checkpoint_every: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if isinstance(self.loss, dict):
            self.loss = LossWeights(**self.loss)
        if self.warmup_epochs is None:
            self.warmup_epochs = int(0.1 * self.epochs)
        self.validate()

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.epochs and not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(f"warmup_epochs={self.warmup_epochs} must be < epochs={self.epochs}")
        if self.fusion_mode not in dfl.FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {dfl.FUSION_MODES}")
        if self.K < 2 or self.K % 2:
            raise ConfigError("K must be even")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.lr_base < 0 or self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ConfigError("lr_base, weight_decay must be >= 0 and momentum in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["loss"] = asdict(self.loss)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown train config key(s): {', '.join(unknown)}")
        d = dict(d)
        if "loss" in d and isinstance(d["loss"], dict):
            bad = sorted(set(d["loss"]) - {f.name for f in fields(LossWeights)})
            if bad:
                raise ConfigError(f"unknown loss config key(s): {', '.join(bad)}")
        return cls(**d)

    @property
    def effective_weights(self) -> LossWeights:
        return replace(self.loss,
                       lambda_struct=self.loss.lambda_struct if self.scl_on else 0.0,
                       lambda_orth=self.loss.lambda_orth if self.dfl_on else 0.0)


# --------------------------------------------------------------------- data
@dataclass
class TrainSet:
    images: np.ndarray         # float32 N x 3 x H x W in [0, 1]
    labels: np.ndarray         # contiguous class indices
    modalities: np.ndarray
    identities: np.ndarray     # class index -> original identity

    @classmethod
    def from_arrays(cls, images, identities, modalities) -> "TrainSet":
        ids, labels = np.unique(np.asarray(identities), return_inverse=True)
        return cls(np.asarray(images, dtype=np.float32), labels.astype(np.int64),
                   np.asarray(modalities, dtype=np.int64), ids)

    @classmethod
    def from_manifest(cls, manifest: Manifest, images: np.ndarray) -> "TrainSet":
        idx = manifest.indices(split="train")
        return cls.from_arrays(images[idx], manifest.labels[idx], manifest.modalities[idx])

    @property
    def num_identities(self) -> int:
        return int(self.identities.size)


# ---------------------------------------------------------------- schedule
def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Linear warmup from lr/100 to lr, then cosine decay to lr/100 at the last epoch."""
    base, low = cfg.lr_base, cfg.lr_base / 100.0
    w, last = cfg.warmup_epochs, cfg.epochs - 1
    if not 0 <= epoch < max(cfg.epochs, 1):
        raise UsageError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch < w:
        return low + (base - low) * epoch / w
    if last <= w:
        return base
    progress = (epoch - w) / (last - w)
    return low + (base - low) * 0.5 * (1.0 + math.cos(math.pi * progress))


# --------------------------------------------------------------- optimiser
def decays(name: str, p) -> bool:
    """Weight decay applies to weight matrices only (not biases, norms, tokens)."""
    return name.endswith(".weight") and p.ndim >= 2


def decay_groups(model: SDFNet) -> tuple[list[str], list[str]]:
    yes, no = [], []
    for name, p in model.named_parameters():
        (yes if decays(name, p) else no).append(name)
    return yes, no


class SGD:
    def __init__(self, model: SDFNet, weight_decay: float = 0.0, momentum: float = 0.0):
        self.model = model
        self.weight_decay = weight_decay
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, lr: float) -> None:
        for name, p in self.model.named_parameters():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay and decays(name, p):
                g = g + p.data.dtype.type(self.weight_decay) * p.data
            if self.momentum:
                v = self.velocity.get(name)
                v = g if v is None else p.data.dtype.type(self.momentum) * v + g
                self.velocity[name] = v
                g = v
            p.data = p.data - p.data.dtype.type(lr) * g


# -------------------------------------------------------------------- step
def compute_losses(model: SDFNet, images, labels, modalities, cfg: TrainConfig):
    """Forward pass plus every loss term; returns ``(total, breakdown, output)``."""
    weights = cfg.effective_weights
    out = model(images, modalities)
    zero = Tensor(np.zeros((), dtype=model.dtype))
    l_struct = zero
    if cfg.scl_on:
        desc = scl.describe(out.grid)
        l_struct = scl.struct_loss(scl.build_prototypes(desc.f_hat, labels, modalities))
    l_orth = dfl.orth_loss(out.f_sh, out.f_sp) if model.dfl_on else zero
    l_ce = smoothed_cross_entropy(out.logits, labels, weights.label_smoothing)
    l_tri = weighted_triplet(out.feature, labels)
    total, breakdown = joint_loss(l_ce, l_tri, l_orth, l_struct, weights)
    return total, breakdown, out


def train_step(model: SDFNet, optimizer: SGD, images, labels, modalities, cfg: TrainConfig,
               lr: float) -> LossBreakdown:
    model.zero_grad()
    total, breakdown, _ = compute_losses(model, images, labels, modalities, cfg)
    total.backward()
    optimizer.step(lr)
    return breakdown


# ---------------------------------------------------------------- training
@dataclass
class Checkpoint:
    tensors: "OrderedDict[str, np.ndarray]"
    meta: dict

    def to_bytes(self) -> bytes:
        return ckpt_io.dumps(self.tensors, self.meta)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls(*ckpt_io.load(path))

    @property
    def config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.meta["config"])

    def build_model(self) -> SDFNet:
        cfg = self.config
        model = SDFNet(cfg.model, cfg.dfl_on, cfg.fusion_mode, seed=cfg.seed, dtype=np.dtype(cfg.dtype))
        model.load_state_dict(self.tensors)
        return model


def make_checkpoint(model: SDFNet, cfg: TrainConfig, epoch: int, rng, identities) -> Checkpoint:
    meta = {"config": cfg.to_dict(), "epoch": epoch, "rng_state": rng.bit_generator.state,
            "identities": [int(i) for i in identities]}
    return Checkpoint(OrderedDict((n, p.data.copy()) for n, p in model.named_parameters()), meta)


def warm_start(model: SDFNet, state: dict) -> list[str]:
    """Copy every tensor of ``state`` whose name and shape match; returns the names copied."""
    copied = []
    for name, p in model.named_parameters():
        arr = state.get(name)
        if arr is not None and np.shape(arr) == p.shape:
            p.data = np.array(arr, dtype=p.dtype)
            copied.append(name)
    return copied


def run_training(cfg: TrainConfig, data: TrainSet, out_dir=None, log: list | None = None,
                 init_state: dict | None = None):
    """Train; returns ``(model, final Checkpoint, log records)``.

    ``init_state`` warm-starts every parameter it names (matching shapes only);
    the rest keep their seeded initialisation. With ``out_dir`` the log is
    written to ``train_log.jsonl`` and checkpoints to ``checkpoints/``.
    """
    if cfg.model.num_identities != data.num_identities:
        cfg = replace(cfg, model=replace(cfg.model, num_identities=data.num_identities))
    dtype = np.dtype(cfg.dtype)
    model = SDFNet(cfg.model, cfg.dfl_on, cfg.fusion_mode, seed=cfg.seed, dtype=dtype)
    if init_state is not None:
        warm_start(model, init_state)
    opt = SGD(model, cfg.weight_decay, cfg.momentum)
    aug_rng = np.random.default_rng([cfg.seed, 1])
    records = [] if log is None else log
    out_dir = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_dir is not None:
        (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "train_log.jsonl", "w", encoding="utf-8")

    def emit(rec):
        records.append(rec)
        if log_fh:
            log_fh.write(json.dumps(rec, sort_keys=True) + "\n")

    step = 0
    try:
        for epoch in range(cfg.epochs):
            lr = lr_schedule(epoch, cfg)
            plan = plan_batches(data.labels, data.modalities, cfg.P, cfg.K, epoch_rng(cfg.seed, epoch))
            totals = []
            for batch in plan:
                imgs = data.images[batch]
                if cfg.augment:
                    imgs = np.stack([augment(im, aug_rng) for im in imgs])
                x = normalize(imgs).astype(dtype, copy=False)
                try:
                    bd = train_step(model, opt, x, data.labels[batch], data.modalities[batch], cfg, lr)
                except FloatingPointError as exc:
                    raise FloatingPointError(f"epoch {epoch} step {step}: {exc}") from exc
                emit({"kind": "step", "epoch": epoch, "step": step, "lr": lr, **bd.to_dict()})
                totals.append(bd.total)
                step += 1
            emit({"kind": "epoch", "epoch": epoch, "lr": lr, "steps": len(totals),
                  "mean_total": float(np.mean(totals)) if totals else 0.0})
            logger.info("epoch %d lr %.3g mean loss %.4f", epoch, lr, np.mean(totals) if totals else 0.0)
            if out_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                make_checkpoint(model, cfg, epoch + 1, aug_rng, data.identities).save(
                    out_dir / "checkpoints" / f"epoch_{epoch + 1:03d}.ckpt")
    finally:
        if log_fh:
            log_fh.close()
    final = make_checkpoint(model, cfg, cfg.epochs, aug_rng, data.identities)
    if out_dir is not None:
        final.save(out_dir / "checkpoints" / "final.ckpt")
    return model, final, records


# --------------------------------------------------------------- inference
def embed_all(model: SDFNet, images: np.ndarray, modalities, batch_size: int = 64) -> np.ndarray:
    """L2-normalised retrieval features, one row per image (images in [0, 1])."""
    images = np.asarray(images)
    modalities = np.asarray(modalities)
    rows = []
    with no_grad():
        for start in range(0, images.shape[0], batch_size):
            x = normalize(images[start:start + batch_size]).astype(model.dtype, copy=False)
            f = model(x, modalities[start:start + batch_size], with_logits=False).feature.data
            rows.append(f.astype(np.float64))
    if not rows:
        return np.zeros((0, model.feature_dim))
    feats = np.concatenate(rows)
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    return feats / np.maximum(norms, 1e-12)


# ---------------------------------------------------------------- ablation
ABLATION_AXES = ("scl_on", "dfl_on", "fusion_mode", "struct_layer")


def expand_grid(grid: dict) -> list[dict]:
    unknown = sorted(set(grid) - set(ABLATION_AXES))
    if unknown:
        raise ConfigError(f"unknown ablation axes: {unknown}")
    if not grid:
        raise ConfigError("ablation grid is empty")
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def apply_cell(cfg: TrainConfig, cell: dict, seed: int) -> TrainConfig:
    kw = {k: v for k, v in cell.items() if k != "struct_layer"}
    model = cfg.model
    if "struct_layer" in cell:
        model = replace(model, struct_layer=int(cell["struct_layer"]))
    return replace(cfg, model=model, seed=seed, **kw)


def run_ablation(grid: dict, cfg: TrainConfig, train: TrainSet, test_images: np.ndarray,
                 test_manifest: Manifest, seeds=(0,), protocols=("all", "opt2sar", "sar2opt"),
                 csv_path=None) -> list[dict]:
    """Train and evaluate every grid cell for every seed; failures are recorded per row."""
    from .evaluation import evaluate

    rows = []
    for cell in expand_grid(grid):
        for seed in seeds:
            row = {**cell, "seed": seed}
            try:
                run_cfg = apply_cell(cfg, cell, seed)
                model, _, _ = run_training(run_cfg, train)
                emb = embed_all(model, test_images, test_manifest.modalities)
                for name, rep in evaluate(emb, test_manifest, protocols).items():
                    row[f"{name}_mAP"] = rep.map
                    row[f"{name}_R1"] = rep.rank1
                row["error"] = ""
            except Exception as exc:  # keep the remaining cells running
                logger.exception("ablation cell %s seed %s failed", cell, seed)
                row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
    if csv_path is not None:
        write_ablation_csv(csv_path, rows, protocols)
    return rows


def write_ablation_csv(path, rows: list[dict], protocols=("all", "opt2sar", "sar2opt")) -> None:
    axes = [a for a in ABLATION_AXES if any(a in r for r in rows)]
    metrics = [f"{p}_{m}" for p in protocols for m in ("mAP", "R1")]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=axes + ["seed"] + metrics + ["error"], extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)
