"""Cross-modal retrieval evaluation: ranking, AP/mAP and CMC per protocol."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data.manifest import Manifest
from .exceptions import ProtocolError

logger = logging.getLogger(__name__)

RANKS = (1, 5, 10)


@dataclass(frozen=True)
class ProtocolSpec:
    name: str
    query_modalities: tuple[int, ...]
    gallery_modalities: tuple[int, ...]


PROTOCOLS = {
    "all": ProtocolSpec("all", (0, 1), (0, 1)),
    "opt2sar": ProtocolSpec("opt2sar", (0,), (1,)),
    "sar2opt": ProtocolSpec("sar2opt", (1,), (0,)),
}


@dataclass
class ProtocolReport:
    protocol: str
    map: float
    rank1: float
    rank5: float
    rank10: float
    num_query: int
    num_gallery: int
    aps: np.ndarray = field(repr=False)
    query_indices: np.ndarray = field(repr=False)
    skipped: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        return {"mAP": self.map, "rank1": self.rank1, "rank5": self.rank5, "rank10": self.rank10,
                "num_query": self.num_query, "num_gallery": self.num_gallery}


def rank_gallery(query: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """Gallery indices by descending cosine similarity; ties go to the lower index."""
    gallery = np.asarray(gallery, dtype=np.float64)
    if gallery.shape[0] == 0:
        raise ProtocolError("empty gallery")
    sims = gallery @ np.asarray(query, dtype=np.float64)
    return np.lexsort((np.arange(sims.size), -sims))


def average_precision(relevance, G: int) -> float:
    rel = np.asarray(relevance, dtype=np.float64).reshape(-1)
    if G < 1:
        raise ProtocolError("AP undefined without ground-truth matches")
    if rel.sum() > G:
        raise ValueError("more hits in the ranking than ground-truth matches")
    hits = np.cumsum(rel)
    precision = hits / np.arange(1, rel.size + 1)
    return float((precision * rel).sum() / G)


def cmc(first_hit_ranks, ks=RANKS) -> dict[int, float]:
    r = np.asarray(first_hit_ranks)
    if r.size == 0:
        return {k: 0.0 for k in ks}
    if (r < 1).any():
        raise ValueError("ranks are 1-based")
    return {k: float(np.mean(r <= k)) for k in ks}


def protocol_members(manifest: Manifest, spec: ProtocolSpec) -> tuple[np.ndarray, np.ndarray]:
    """Query and gallery record indices of a protocol, before dropping match-less queries."""
    q = np.array([i for i, r in enumerate(manifest) if r.split == "test" and r.role == "query"
                  and r.modality in spec.query_modalities], dtype=np.int64)
    g = np.array([i for i, r in enumerate(manifest) if r.split == "test" and r.role == "gallery"
                  and r.modality in spec.gallery_modalities], dtype=np.int64)
    return q, g


def protocol_counts(manifest: Manifest, spec: ProtocolSpec) -> dict:
    """Query/gallery counts, by modality, for queries that have at least one match."""
    q, g = protocol_members(manifest, spec)
    labels, mods = manifest.labels, manifest.modalities
    gallery_ids = set(labels[g].tolist())
    valid = np.array([i for i in q if labels[i] in gallery_ids], dtype=np.int64)
    return {
        "num_query": int(valid.size),
        "num_gallery": int(g.size),
        "query_by_modality": {m: int(np.count_nonzero(mods[valid] == m)) for m in (0, 1)},
        "gallery_by_modality": {m: int(np.count_nonzero(mods[g] == m)) for m in (0, 1)},
    }


def evaluate_protocol(embeddings: np.ndarray, manifest: Manifest, spec: ProtocolSpec | str) -> ProtocolReport:
    if isinstance(spec, str):
        spec = PROTOCOLS[spec]
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.shape[0] != len(manifest):
        raise ProtocolError(f"{emb.shape[0]} embeddings for {len(manifest)} records")
    q_idx, g_idx = protocol_members(manifest, spec)
    if q_idx.size == 0 or g_idx.size == 0:
        raise ProtocolError(f"protocol {spec.name!r} has {q_idx.size} queries and {g_idx.size} gallery records")
    labels = manifest.labels
    g_labels = labels[g_idx]
    gallery = emb[g_idx]

    aps, first_hits, used, skipped = [], [], [], []
    for qi in q_idx:
        keep = g_idx != qi  # a record is never its own candidate
        matches = (g_labels == labels[qi]) & keep
        G = int(matches.sum())
        if G == 0:
            skipped.append(int(qi))
            continue
        order = rank_gallery(emb[qi], gallery[keep])
        rel = matches[keep][order]
        aps.append(average_precision(rel, G))
        first_hits.append(int(np.argmax(rel)) + 1)
        used.append(int(qi))
    if skipped:
        logger.info("protocol %s: skipped %d queries without gallery matches", spec.name, len(skipped))
    if not aps:
        raise ProtocolError(f"protocol {spec.name!r}: no query has a gallery match")
    ranks = cmc(first_hits)
    return ProtocolReport(spec.name, float(np.mean(aps)), ranks[1], ranks[5], ranks[10],
                          len(aps), int(g_idx.size), np.array(aps), np.array(used), skipped)


def evaluate(embeddings, manifest: Manifest, protocols=("all", "opt2sar", "sar2opt")) -> dict[str, ProtocolReport]:
    return {p: evaluate_protocol(embeddings, manifest, PROTOCOLS[p]) for p in protocols}


def write_metrics_json(path, reports: dict[str, ProtocolReport]) -> None:
    doc = {name: rep.summary() for name, rep in reports.items()}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_ap_csv(path, reports: dict[str, ProtocolReport], manifest: Manifest) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["protocol", "image_ref", "identity", "modality", "ap"])
        for name, rep in reports.items():
            for qi, ap in zip(rep.query_indices, rep.aps):
                r = manifest[int(qi)]
                w.writerow([name, r.image_ref, r.identity, r.modality, repr(float(ap))])
