"""Semantic relevancy between caption/clip class pairs.

Relevancy between a query and a gallery item is the mean of the verb-class
IoU and the noun-class IoU, a value in [0, 1]. Thresholding at 1.0 yields
the exact-class-match relation used by the conventional Recall/mAP metrics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Clip, Manifest, save_features

# A class pair is (verb ids, noun ids).
ClassPair = tuple[frozenset[int], frozenset[int]]


@dataclass
class RelevancyMatrix:
    """Query x gallery relevancy values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def n_queries(self) -> int:
        return self.values.shape[0]

    @property
    def n_gallery(self) -> int:
        return self.values.shape[1]

    def transpose(self) -> "RelevancyMatrix":
        return RelevancyMatrix(self.values.T.copy())


def iou(a, b) -> float:
    a, b = set(a), set(b)
    if not a or not b:
        raise ValueError("IoU of an empty class set is undefined")
    return len(a & b) / len(a | b)


def relevancy(q: ClassPair, x: ClassPair) -> float:
    """Mean of verb IoU and noun IoU between two (verbs, nouns) class pairs."""
    q_verbs, q_nouns = q
    x_verbs, x_nouns = x
    return 0.5 * (iou(q_verbs, x_verbs) + iou(q_nouns, x_nouns))


def clip_classes(clip: Clip) -> ClassPair:
    return (clip.verb_classes, clip.noun_classes)


def manifest_classes(manifest: Manifest) -> list[ClassPair]:
    return [clip_classes(c) for c in manifest.clips]


def relevancy_matrix(queries: Sequence[ClassPair], gallery: Sequence[ClassPair]) -> RelevancyMatrix:
    """All-pairs relevancy. relevancy_matrix(A, B) equals the transpose of relevancy_matrix(B, A)."""
    if not queries or not gallery:
        raise ValueError("queries and gallery must be non-empty")
    values = np.empty((len(queries), len(gallery)), dtype=np.float64)
    for i, q in enumerate(queries):
        for j, x in enumerate(gallery):
            values[i, j] = relevancy(q, x)
    return RelevancyMatrix(values)


def save_relevancy(rel: RelevancyMatrix, query_ids: Sequence[str], gallery_ids: Sequence[str], path) -> None:
    """Export as an FVB1 file (float32) plus a JSON sidecar listing the ids in order."""
    if rel.n_queries != len(query_ids) or rel.n_gallery != len(gallery_ids):
        raise ValueError("id lists must match the matrix shape")
    path = Path(path)
    save_features(rel.values, path)
    sidecar = {"queries": list(query_ids), "gallery": list(gallery_ids)}
    path.with_suffix(path.suffix + ".ids.json").write_text(
        json.dumps(sidecar, indent=2) + "\n", encoding="utf-8"
    )
