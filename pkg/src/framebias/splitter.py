"""Frame-length partitioning of a training set.

All methods sort clips ascending by frame length (ties by clip id) and cut
the sorted sequence into contiguous parts, so every plan is a disjoint,
covering, length-ordered partition. `adjusted_splits` repeatedly peels off
the first half of the remainder and finishes by cutting the last remainder
at floor(th * len); with M = 2 that single cut is the whole plan.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Clip, Manifest

# Absorbs float dust when th encodes an exact clip count (th = k / n).
_CUT_EPS = 1e-9


@dataclass
class SplitPlan:
    method: str
    parts: list[list[str]]
    sizes: list[int]
    boundaries: list[float]

    @property
    def m(self) -> int:
        return len(self.parts)

    def to_dict(self) -> dict:
        return {"method": self.method, "sizes": self.sizes, "boundaries": self.boundaries, "parts": self.parts}


def _sorted_clips(train: Manifest) -> list[Clip]:
    return sorted(train.clips, key=lambda c: (c.frame_length, c.clip_id))


def _plan_from_chunks(method: str, chunks: list[list[Clip]]) -> SplitPlan:
    return SplitPlan(
        method=method,
        parts=[[c.clip_id for c in chunk] for chunk in chunks],
        sizes=[len(chunk) for chunk in chunks],
        boundaries=[float(chunk[-1].frame_length) for chunk in chunks[:-1]],
    )


def equal_splits(train: Manifest, m: int) -> SplitPlan:
    """M near-equal contiguous chunks; the first N mod M chunks get the extra clip."""
    n = len(train.clips)
    if not 1 <= m <= n:
        raise ValueError(f"M must be in [1, {n}], got {m}")
    ordered = _sorted_clips(train)
    base, extra = divmod(n, m)
    chunks = []
    start = 0
    for k in range(m):
        size = base + (1 if k < extra else 0)
        chunks.append(ordered[start : start + size])
        start += size
    return _plan_from_chunks("equal", chunks)


def adjusted_splits(train: Manifest, m: int, th: float) -> SplitPlan:
    """Halve the remainder until two parts are left, then cut at floor(th * len)."""
    if m < 2:
        raise ValueError("adjusted splits need M >= 2")
    if not 0.0 < th < 1.0:
        raise ValueError(f"th must be in (0, 1), got {th}")
    remaining = _sorted_clips(train)
    chunks = []
    while m > 2:
        half = len(remaining) // 2
        if half == 0:
            raise ValueError("halving would create an empty part")
        chunks.append(remaining[:half])
        remaining = remaining[half:]
        m -= 1
    cut = int(math.floor(th * len(remaining) + _CUT_EPS))
    if cut == 0 or cut == len(remaining):
        raise ValueError(f"th={th} would create an empty part")
    chunks.append(remaining[:cut])
    chunks.append(remaining[cut:])
    return _plan_from_chunks("adjusted", chunks)


def threshold_split(train: Manifest, cut: float) -> SplitPlan:
    """Two parts: clips with frame_length <= cut, then the rest."""
    ordered = _sorted_clips(train)
    short = [c for c in ordered if c.frame_length <= cut]
    if not short or len(short) == len(ordered):
        raise ValueError(f"cut={cut} lies outside the data range and leaves a part empty")
    plan = _plan_from_chunks("threshold", [short, ordered[len(short) :]])
    plan.boundaries = [float(cut)]
    return plan


def fraction_below(train: Manifest, cut: float) -> float:
    """Fraction of train clips with frame_length <= cut (the test-mean th rule)."""
    n = len(train.clips)
    if n == 0:
        raise ValueError("empty manifest")
    return sum(1 for c in train.clips if c.frame_length <= cut) / n


def test_mean_th(train: Manifest, test: Manifest) -> float:
    """th for adjusted M=2 splits so the cut falls at the mean test frame length."""
    return fraction_below(train, float(np.mean(test.frame_lengths())))


def materialize(train: Manifest, plan: SplitPlan) -> list[Manifest]:
    """One manifest per part, each preserving the parent manifest's clip order."""
    return [train.subset(ids) for ids in plan.parts]


def save_plan(plan: SplitPlan, path) -> None:
    Path(path).write_text(json.dumps(plan.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_plan(path) -> SplitPlan:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return SplitPlan(
        method=obj["method"],
        parts=[list(p) for p in obj["parts"]],
        sizes=[int(s) for s in obj["sizes"]],
        boundaries=[float(b) for b in obj["boundaries"]],
    )
