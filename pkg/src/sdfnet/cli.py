"""``sdfnet`` command line: synth, train, eval, ablate, inspect.

Exit codes: 0 success, 1 usage, 2 invalid data or config, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as kv
from .data.images import load_images, normalize, read_image, save_dataset
from .data.manifest import Manifest, load_manifest
from .data.synthetic import SynthConfig, generate_synthetic
from .evaluation import PROTOCOLS, evaluate, write_ap_csv, write_metrics_json
from .exceptions import ConfigError, DimensionError, ProtocolError, UsageError, ValidationError
from .scl import energy_map, write_heatmap
from .tensor import no_grad
from .trainer import Checkpoint, TrainConfig, TrainSet, embed_all, run_ablation, run_training

logger = logging.getLogger("sdfnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
RUN_MANIFEST = "run_manifest.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class OutputDir:
    """Output directory that records every file written into it."""

    def __init__(self, path, force: bool = False, command: str = ""):
        self.path = Path(path)
        if self.path.exists() and any(self.path.iterdir()) and not force:
            raise UsageError(f"{self.path} is not empty; pass --force to overwrite")
        self.path.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.files: list[Path] = []

    def __truediv__(self, name) -> Path:
        return self.path / name

    def add(self, *paths) -> None:
        self.files.extend(Path(p) for p in paths)

    def finish(self, argv) -> Path:
        entries = []
        for p in sorted(set(self.files)):
            entries.append({"path": p.relative_to(self.path).as_posix(),
                            "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})
        doc = {"command": self.command, "argv": list(argv), "files": entries}
        out = self.path / RUN_MANIFEST
        out.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        return out


def _load_config(path, section_cls):
    d = kv.read_kv(path) if path else {}
    return section_cls.from_dict(d)


def _dataset(data_dir):
    data_dir = Path(data_dir)
    man = load_manifest(data_dir / "manifest.jsonl")
    return man, load_images(man)


def _train_config(args) -> TrainConfig:
    cfg = _load_config(args.config, TrainConfig)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.epochs is not None:
        over["epochs"] = args.epochs
        if not args.config or "warmup_epochs" not in kv.read_kv(args.config):
            over["warmup_epochs"] = None
    return replace(cfg, **over) if over else cfg


def cmd_synth(args) -> int:
    cfg = _load_config(args.config, SynthConfig)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = OutputDir(args.out, args.force, "synth")
    images, man = generate_synthetic(cfg)
    out.add(*save_dataset(out.path, images, man))
    prov = out / "provenance.json"
    prov.write_text(json.dumps({"generator": "synthetic", "seed": cfg.seed, "config": cfg.to_dict()},
                               indent=2, sort_keys=True) + "\n", encoding="utf-8")
    out.add(prov)
    out.finish(args.argv)
    print(f"wrote {len(man)} images to {out.path}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _train_config(args)
    man, images = _dataset(args.data)
    data = TrainSet.from_manifest(man, images)
    out = OutputDir(args.out, args.force, "train")
    kv.write_kv(out / "config.txt", cfg.to_dict())
    out.add(out / "config.txt")
    _, final, records = run_training(cfg, data, out_dir=out.path)
    out.add(out / "train_log.jsonl", *sorted((out / "checkpoints").glob("*.ckpt")))
    out.finish(args.argv)
    last = [r for r in records if r["kind"] == "epoch"]
    tail = f", final epoch mean loss {last[-1]['mean_total']:.4f}" if last else ""
    print(f"trained {cfg.epochs} epochs{tail}; checkpoint at {out / 'checkpoints' / 'final.ckpt'}")
    return EXIT_OK


def _check_compatible(ckpt: Checkpoint, images: np.ndarray) -> None:
    m = ckpt.config.model
    if images.shape[2:] != (m.image_h, m.image_w):
        raise DimensionError(f"checkpoint expects {m.image_h}x{m.image_w} images, "
                             f"dataset has {images.shape[2]}x{images.shape[3]}")


def evaluate_checkpoint(ckpt: Checkpoint, manifest: Manifest, images: np.ndarray, protocols):
    """Embed the test split with the checkpoint's model and score every protocol."""
    _check_compatible(ckpt, images)
    model = ckpt.build_model()
    idx = manifest.indices(split="test")
    test = Manifest([manifest[int(i)] for i in idx], manifest.root)
    emb = embed_all(model, images[idx], test.modalities)
    return evaluate(emb, test, protocols), test


def _protocols(arg) -> tuple[str, ...]:
    names = tuple(p for chunk in arg for p in chunk.split(",") if p) if arg else tuple(PROTOCOLS)
    bad = [p for p in names if p not in PROTOCOLS]
    if bad:
        raise UsageError(f"unknown protocol(s) {bad}; choose from {sorted(PROTOCOLS)}")
    return names


def cmd_eval(args) -> int:
    protocols = _protocols(args.protocol)
    ckpt = Checkpoint.load(args.checkpoint)
    man, images = _dataset(args.data)
    reports, test = evaluate_checkpoint(ckpt, man, images, protocols)
    out = OutputDir(args.out, args.force, "eval")
    write_metrics_json(out / "metrics.json", reports)
    write_ap_csv(out / "per_query_ap.csv", reports, test)
    out.add(out / "metrics.json", out / "per_query_ap.csv")
    out.finish(args.argv)
    for name, rep in reports.items():
        print(f"{name:8s} mAP {rep.map:.4f}  R1 {rep.rank1:.4f}  R5 {rep.rank5:.4f}  R10 {rep.rank10:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _train_config(args)
    grid = kv.read_kv(args.grid)
    grid = {k: v if isinstance(v, list) else [v] for k, v in grid.items()}
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    man, images = _dataset(args.data)
    idx = man.indices(split="test")
    test = Manifest([man[int(i)] for i in idx], man.root)
    out = OutputDir(args.out, args.force, "ablate")
    rows = run_ablation(grid, cfg, TrainSet.from_manifest(man, images), images[idx], test,
                        seeds=seeds, protocols=_protocols(args.protocol), csv_path=out / "ablation.csv")
    out.add(out / "ablation.csv")
    out.finish(args.argv)
    failed = sum(1 for r in rows if r["error"])
    print(f"{len(rows)} ablation rows written ({failed} failed)")
    return EXIT_OK


def layer_grids(model, image: np.ndarray, modality: int, layers) -> dict[int, np.ndarray]:
    """Feature grid after each requested block; layer 0 is the input image itself."""
    bb = model.backbone
    x = normalize(image[None]).astype(model.dtype, copy=False)
    grids = {}
    if 0 in layers:
        grids[0] = x.astype(np.float64)
    with no_grad():
        tokens = bb.tokenize(x, np.array([modality]))
        for i in range(1, max(layers, default=0) + 1):
            tokens = bb.forward_blocks(tokens, i, i)
            if i in layers:
                grids[i] = bb.tokens_to_grid(tokens).data.astype(np.float64)
    return grids


def cmd_inspect(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    model = ckpt.build_model()
    L = model.cfg.layers
    layers = sorted({int(s) for s in args.layers.split(",")}) if args.layers else list(range(2, L + 1, 2))
    if any(l < 0 or l > L for l in layers):
        raise UsageError(f"layers must lie in [0, {L}]")
    image = read_image(args.image)
    _check_compatible(ckpt, image[None])
    out = OutputDir(args.out, args.force, "inspect")
    for layer, grid in layer_grids(model, image, args.modality, layers).items():
        path = out / f"energy_layer{layer:02d}.pgm"
        write_heatmap(path, energy_map(grid)[0])
        out.add(path)
    out.finish(args.argv)
    print(f"wrote {len(layers)} heatmaps to {out.path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sdfnet", description="Cross-modal optical/SAR ship re-identification.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")

    s = sub.add_parser("synth", help="generate the synthetic optical/SAR dataset")
    common(s)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model on a dataset directory")
    common(t)
    t.add_argument("--data", required=True, help="dataset directory holding manifest.jsonl")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on the test split")
    common(e, config=False)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--protocol", action="append", help="all, opt2sar, sar2opt (repeatable or comma separated)")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and evaluate every cell of an ablation grid")
    common(a)
    a.add_argument("--data", required=True)
    a.add_argument("--grid", required=True, help="key = [values] file over scl_on, dfl_on, fusion_mode, struct_layer")
    a.add_argument("--seeds", help="comma separated seed list")
    a.add_argument("--seed", type=int)
    a.add_argument("--epochs", type=int)
    a.add_argument("--protocol", action="append")
    a.set_defaults(func=cmd_ablate)

    i = sub.add_parser("inspect", help="write structural-energy heatmaps per layer")
    common(i, config=False)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--modality", type=int, choices=(0, 1), default=0)
    i.add_argument("--layers", help="comma separated block indices (default 2,4,...,L; 0 = input)")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, ConfigError, DimensionError, ProtocolError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
