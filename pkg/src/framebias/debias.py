"""Naive pruning debiasers: per-class shortest/longest deletion and a random control.

The per-class loop deletes clips from the training split until the
train/test average frame length gap drops below delta in the processed
direction, or at most alpha clips remain in the class. A clip belonging
to several classes is removed at most once; classes processed later see
the training set left by earlier removals.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import Clip, Manifest

DEFAULT_DELTA = 10.0
DEFAULT_ALPHA = 60


@dataclass
class ClassRemoval:
    class_key: tuple[int, int]
    direction: str  # "shortest" or "longest"
    removed: list[str]
    train_avg_before: float
    train_avg_after: float | None
    test_avg: float


@dataclass
class RemovalLog:
    entries: list[ClassRemoval] = field(default_factory=list)
    removed_ids: list[str] = field(default_factory=list)

    @property
    def total_removed(self) -> int:
        return len(self.removed_ids)

    @property
    def classes_touched(self) -> int:
        return len(self.entries)

    def to_dict(self) -> dict:
        return {
            "total_removed": self.total_removed,
            "classes_touched": self.classes_touched,
            "removed_ids": list(self.removed_ids),
            "classes": [asdict(e) for e in self.entries],
        }


def _avg(clips: list[Clip]) -> float:
    return float(np.mean([c.frame_length for c in clips]))


def _class_clips(manifest: Manifest, key: tuple[int, int], alive: set[str]) -> list[Clip]:
    v, n = key
    return [
        c
        for c in manifest.clips
        if c.clip_id in alive and v in c.verb_classes and n in c.noun_classes
    ]


def _test_averages(test: Manifest) -> dict[tuple[int, int], float]:
    lens: dict[tuple[int, int], list[int]] = {}
    for c in test.clips:
        for key in c.class_pairs():
            lens.setdefault(key, []).append(c.frame_length)
    return {k: float(np.mean(v)) for k, v in lens.items()}


def _prune_class(
    key: tuple[int, int], members: list[Clip], test_avg: float, delta: float, alpha: int
) -> ClassRemoval | None:
    """One class's deletion loop. Returns None when the gap never triggers."""
    train_avg = _avg(members)
    if test_avg >= train_avg + delta:
        direction = "shortest"
        ordered = sorted(members, key=lambda c: (c.frame_length, c.clip_id))
        gap = lambda x: test_avg >= x + delta
    elif train_avg >= test_avg + delta:
        direction = "longest"
        ordered = sorted(members, key=lambda c: (-c.frame_length, c.clip_id))
        gap = lambda x: x >= test_avg + delta
    else:
        return None
    removed: list[str] = []
    while ordered and gap(_avg(ordered)):
        removed.append(ordered.pop(0).clip_id)
        if len(ordered) <= alpha:
            break
    return ClassRemoval(
        class_key=key,
        direction=direction,
        removed=removed,
        train_avg_before=train_avg,
        train_avg_after=_avg(ordered) if ordered else None,
        test_avg=test_avg,
    )


def rmv_one(
    train: Manifest,
    test: Manifest,
    class_key: tuple[int, int],
    delta: float = DEFAULT_DELTA,
    alpha: int = DEFAULT_ALPHA,
) -> tuple[Manifest, RemovalLog]:
    """Apply the deletion loop to a single class of the common class set."""
    alive = set(train.clip_ids())
    members = _class_clips(train, class_key, alive)
    test_avgs = _test_averages(test)
    if not members or class_key not in test_avgs:
        raise ValueError(f"class {class_key} absent from train or test split")
    log = RemovalLog()
    entry = _prune_class(class_key, members, test_avgs[class_key], delta, alpha)
    if entry is not None and entry.removed:
        log.entries.append(entry)
        log.removed_ids.extend(entry.removed)
    pruned = train.subset(alive - set(log.removed_ids))
    return pruned, log


def rmv_all(
    train: Manifest,
    test: Manifest,
    delta: float = DEFAULT_DELTA,
    alpha: int = DEFAULT_ALPHA,
) -> tuple[Manifest, RemovalLog]:
    """Run the per-class loop over every common class in ascending key order.

    A clip is removed at most once; averages of later classes are computed
    over the clips remaining at their processing time.
    """
    alive = set(train.clip_ids())
    test_avgs = _test_averages(test)
    train_keys = {key for c in train.clips for key in c.class_pairs()}
    log = RemovalLog()
    for key in sorted(train_keys & test_avgs.keys()):
        members = _class_clips(train, key, alive)
        if not members:
            continue  # emptied by earlier classes, no longer common
        entry = _prune_class(key, members, test_avgs[key], delta, alpha)
        if entry is None or not entry.removed:
            continue
        log.entries.append(entry)
        log.removed_ids.extend(entry.removed)
        alive -= set(entry.removed)
    return train.subset(alive), log


def rmv_rand(train: Manifest, n: int, seed: int) -> tuple[Manifest, RemovalLog]:
    """Remove n clips uniformly without replacement, deterministic per seed."""
    ids = train.clip_ids()
    if n > len(ids):
        raise ValueError(f"cannot remove {n} clips from a {len(ids)}-clip manifest")
    rng = np.random.default_rng(seed)
    removed = [ids[i] for i in rng.choice(len(ids), size=n, replace=False)]
    log = RemovalLog(removed_ids=list(removed))
    return train.subset(set(ids) - set(removed)), log


def write_removal_log(log: RemovalLog, path) -> None:
    Path(path).write_text(json.dumps(log.to_dict(), indent=2) + "\n", encoding="utf-8")
