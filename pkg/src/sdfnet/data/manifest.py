"""JSON-lines manifests of (image, identity, modality, split, role) records."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..exceptions import ValidationError

logger = logging.getLogger(__name__)

SPLITS = ("train", "test")
ROLES = ("query", "gallery", "none")
FIELDS = ("image_ref", "identity", "modality", "split", "role")
MODALITY_NAMES = {0: "optical", 1: "sar"}


@dataclass(frozen=True)
class SampleRecord:
    image_ref: str
    identity: int
    modality: int
    split: str = "train"
    role: str = "none"

    def problems(self) -> list[str]:
        out = []
        if self.modality not in (0, 1):
            out.append(f"modality must be 0 or 1, got {self.modality!r}")
        if self.split not in SPLITS:
            out.append(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.role not in ROLES:
            out.append(f"role must be one of {ROLES}, got {self.role!r}")
        elif self.split == "train" and self.role != "none":
            out.append(f"train records must have role 'none', got {self.role!r}")
        elif self.split == "test" and self.role == "none":
            out.append("test records need role 'query' or 'gallery'")
        if isinstance(self.identity, bool) or not isinstance(self.identity, (int, np.integer)) or self.identity < 0:
            out.append(f"identity must be a non-negative integer, got {self.identity!r}")
        return out


class Manifest:
    """Ordered collection of :class:`SampleRecord` plus the directory image refs resolve against."""

    def __init__(self, records, root: str | Path | None = None):
        self.records: list[SampleRecord] = list(records)
        self.root = Path(root) if root is not None else None

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Manifest(self.records[i], self.root)
        return self.records[i]

    def subset(self, split: str | None = None, role: str | None = None, modality: int | None = None) -> "Manifest":
        recs = [r for r in self.records
                if (split is None or r.split == split)
                and (role is None or r.role == role)
                and (modality is None or r.modality == modality)]
        return Manifest(recs, self.root)

    def indices(self, split: str | None = None, role: str | None = None, modality: int | None = None) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.records)
                         if (split is None or r.split == split)
                         and (role is None or r.role == role)
                         and (modality is None or r.modality == modality)], dtype=np.int64)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.identity for r in self.records], dtype=np.int64)

    @property
    def modalities(self) -> np.ndarray:
        return np.array([r.modality for r in self.records], dtype=np.int64)

    def counts(self) -> dict[tuple[str, str, str], int]:
        """Record counts keyed by (split, role, modality name)."""
        c = Counter((r.split, r.role, MODALITY_NAMES.get(r.modality, str(r.modality))) for r in self.records)
        return dict(sorted(c.items()))

    def resolve(self, record: SampleRecord) -> Path:
        p = Path(record.image_ref)
        return p if p.is_absolute() or self.root is None else self.root / p

    def validate(self) -> None:
        problems = _problems(enumerate(self.records, start=1))
        if problems:
            raise ValidationError("invalid manifest", problems)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r), sort_keys=False) + "\n" for r in self.records)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


def _problems(numbered) -> list[str]:
    problems = []
    seen: dict[str, int] = {}
    for lineno, r in numbered:
        problems.extend(f"line {lineno}: {p}" for p in r.problems())
        if r.image_ref in seen:
            problems.append(f"line {lineno}: duplicate image_ref {r.image_ref!r} (first on line {seen[r.image_ref]})")
        else:
            seen[r.image_ref] = lineno
    return problems


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    records, problems = [], []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            problems.append(f"line {lineno}: not valid JSON ({exc.msg})")
            continue
        if not isinstance(obj, dict):
            problems.append(f"line {lineno}: expected a JSON object")
            continue
        missing = [f for f in FIELDS if f not in obj]
        extra = sorted(set(obj) - set(FIELDS))
        if missing or extra:
            problems.append(f"line {lineno}: missing fields {missing} / unknown fields {extra}")
            continue
        records.append((lineno, SampleRecord(**obj)))
    if problems:
        raise ValidationError(f"cannot parse {path}", problems)
    if not records:
        raise ValidationError(f"empty manifest: {path}")

    problems = _problems(records)
    if problems:
        raise ValidationError(f"invalid manifest {path}", problems)
    manifest = Manifest([r for _, r in records], root=path.parent)
    for key, n in manifest.counts().items():
        logger.info("%s/%s/%s: %d", *key, n)
    return manifest


_HOSS_MODALITY_DIRS = {"optical": 0, "opt": 0, "sar": 1}
_HOSS_SPLIT_DIRS = {"train": ("train", "none"), "query": ("test", "query"), "gallery": ("test", "gallery")}
_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".pgm", ".ppm"}


def convert_hoss_tree(root: str | Path) -> Manifest:
    """Map a HOSS-style directory tree to a manifest.

    Assumed layout: ``<root>/{train,query,gallery}/{optical,sar}/<identity>_<anything>.<ext>``
    where ``<identity>`` is an integer. Image refs are stored relative to ``root``.
    """
    root = Path(root)
    records = []
    for split_dir, (split, role) in _HOSS_SPLIT_DIRS.items():
        for mod_dir, modality in _HOSS_MODALITY_DIRS.items():
            d = root / split_dir / mod_dir
            if not d.is_dir():
                continue
            for f in sorted(d.iterdir()):
                if f.suffix.lower() not in _IMAGE_SUFFIXES:
                    continue
                ident = f.stem.split("_")[0]
                if not ident.isdigit():
                    raise ValidationError(f"cannot parse identity from file name {f.name!r}")
                records.append(SampleRecord(str(f.relative_to(root)), int(ident), modality, split, role))
    if not records:
        raise ValidationError(f"no images found under {root}")
    m = Manifest(records, root)
    m.validate()
    return m
