"""Frame-length bias auditing between a train and a test manifest.

A class is a (verb id, noun id) pair; a clip with several verb or noun ids
belongs to every pair in the cross product. The discrepancy of a class is
the test-set average frame length minus the train-set average, and the
common class set is the subset of classes present in both splits.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import Manifest

DEFAULT_THRESHOLDS = (60.0, 200.0)


@dataclass(frozen=True)
class ClassStats:
    class_key: tuple[int, int]
    train_count: int
    test_count: int
    train_avg_len: float | None
    test_avg_len: float | None
    discrepancy: float | None

    @property
    def is_common(self) -> bool:
        return self.train_count >= 1 and self.test_count >= 1


@dataclass
class DiscrepancySeries:
    values: list[float]
    exceed_counts: dict[float, int]


@dataclass
class DistributionSummary:
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float
    outlier_ids: list[str]


def _lengths_by_class(manifest: Manifest) -> dict[tuple[int, int], list[float]]:
    out: dict[tuple[int, int], list[float]] = {}
    for clip in manifest.clips:
        for key in clip.class_pairs():
            out.setdefault(key, []).append(float(clip.frame_length))
    return out


def class_frame_stats(train: Manifest, test: Manifest) -> list[ClassStats]:
    """Per-class counts, average frame lengths and discrepancy, sorted by class key."""
    train_lens = _lengths_by_class(train)
    test_lens = _lengths_by_class(test)
    stats = []
    for key in sorted(train_lens.keys() | test_lens.keys()):
        tr = train_lens.get(key, [])
        te = test_lens.get(key, [])
        tr_avg = float(np.mean(tr)) if tr else None
        te_avg = float(np.mean(te)) if te else None
        disc = te_avg - tr_avg if tr and te else None
        stats.append(
            ClassStats(
                class_key=key,
                train_count=len(tr),
                test_count=len(te),
                train_avg_len=tr_avg,
                test_avg_len=te_avg,
                discrepancy=disc,
            )
        )
    return stats


def common_stats(stats: Sequence[ClassStats]) -> list[ClassStats]:
    return [s for s in stats if s.is_common]


def discrepancy_series(stats: Sequence[ClassStats], thresholds=DEFAULT_THRESHOLDS) -> DiscrepancySeries:
    """Absolute discrepancies of common classes, descending, plus threshold exceed counts."""
    values = sorted((abs(s.discrepancy) for s in common_stats(stats)), reverse=True)
    exceed = {float(t): sum(1 for v in values if v >= t) for t in thresholds}
    return DiscrepancySeries(values=values, exceed_counts=exceed)


def _half_median(sorted_vals: np.ndarray) -> float:
    n = len(sorted_vals)
    mid = n // 2
    if n % 2:
        return float(sorted_vals[mid])
    return float(0.5 * (sorted_vals[mid - 1] + sorted_vals[mid]))


def distribution_summary(manifest: Manifest) -> DistributionSummary:
    """Five-number summary of clip frame lengths plus 1.5*IQR outliers.

    Quartiles follow the median-of-halves rule: for odd counts the overall
    median is excluded from both halves.
    """
    if not manifest.clips:
        raise ValueError("empty manifest")
    lengths = np.sort(manifest.frame_lengths())
    n = len(lengths)
    median = _half_median(lengths)
    lower = lengths[: n // 2]
    upper = lengths[(n + 1) // 2 :]
    if n == 1:
        q1 = q3 = median
    else:
        q1 = _half_median(lower)
        q3 = _half_median(upper)
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    outliers = [c.clip_id for c in manifest.clips if not lo <= c.frame_length <= hi]
    return DistributionSummary(
        min=float(lengths[0]),
        q1=q1,
        median=median,
        q3=q3,
        max=float(lengths[-1]),
        mean=float(lengths.mean()),
        outlier_ids=outliers,
    )


def topk_avg_lengths(matrix, gallery: Manifest, k: int = 20) -> np.ndarray:
    """Average frame length of each query's top-k gallery items (ties by gallery order)."""
    values = np.asarray(getattr(matrix, "values", matrix), dtype=np.float64)
    if values.shape[1] != len(gallery.clips):
        raise ValueError("matrix width and gallery size differ")
    k = min(k, values.shape[1])
    lengths = gallery.frame_lengths()
    out = np.empty(values.shape[0])
    for q in range(values.shape[0]):
        top = np.argsort(-values[q], kind="stable")[:k]
        out[q] = lengths[top].mean()
    return out


def _marginal_counts(stats: Sequence[ClassStats]) -> tuple[dict[int, int], dict[int, int]]:
    verbs: dict[int, int] = {}
    nouns: dict[int, int] = {}
    for s in stats:
        v, n = s.class_key
        verbs[v] = verbs.get(v, 0) + s.train_count
        nouns[n] = nouns.get(n, 0) + s.train_count
    return verbs, nouns


def suspected_bias_cases(
    queries: Manifest,
    ranks: Mapping[str, int],
    topk_avg_len: Mapping[str, float],
    stats: Sequence[ClassStats],
    tail_threshold: int = 10,
    min_disc: float = 60.0,
) -> list[str]:
    """Query ids whose retrieval failure is plausibly caused by frame-length bias.

    A query is kept only if all four hold: its ground truth ranks beyond 10;
    none of its verb or noun classes is tail (training instance count below
    tail_threshold); its class discrepancy reaches min_disc in magnitude;
    and the average length of its top retrieved items sits closer to the
    class's training average than to its test average. Multi-class queries
    are judged on their common pair with the largest absolute discrepancy.
    """
    by_key = {s.class_key: s for s in stats}
    verb_counts, noun_counts = _marginal_counts(stats)
    kept = []
    for clip in queries.clips:
        qid = clip.clip_id
        candidates = [by_key[k] for k in clip.class_pairs() if k in by_key and by_key[k].is_common]
        if not candidates:
            raise ValueError(f"query '{qid}': class missing from stats")
        if ranks[qid] <= 10:
            continue
        if any(verb_counts.get(v, 0) < tail_threshold for v in clip.verb_classes):
            continue
        if any(noun_counts.get(n, 0) < tail_threshold for n in clip.noun_classes):
            continue
        best = max(candidates, key=lambda s: abs(s.discrepancy))
        if abs(best.discrepancy) < min_disc:
            continue
        top_avg = topk_avg_len[qid]
        if abs(top_avg - best.train_avg_len) >= abs(top_avg - best.test_avg_len):
            continue
        kept.append(qid)
    return kept


def write_audit_report(train: Manifest, test: Manifest, out_dir, thresholds=DEFAULT_THRESHOLDS) -> dict:
    """Emit report.json (stats, summaries, counts) and series.csv (rank, |discrepancy|)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stats = class_frame_stats(train, test)
    series = discrepancy_series(stats, thresholds)
    report = {
        "n_classes": len(stats),
        "n_common_classes": len(common_stats(stats)),
        "exceed_counts": {str(int(t)): c for t, c in series.exceed_counts.items()},
        "train_summary": asdict(distribution_summary(train)),
        "test_summary": asdict(distribution_summary(test)),
        "classes": [
            {
                "verb": s.class_key[0],
                "noun": s.class_key[1],
                "train_count": s.train_count,
                "test_count": s.test_count,
                "train_avg_len": s.train_avg_len,
                "test_avg_len": s.test_avg_len,
                "discrepancy": s.discrepancy,
            }
            for s in stats
        ],
    }
    (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    with open(out_dir / "series.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["rank", "abs_discrepancy"])
        for i, v in enumerate(series.values, start=1):
            writer.writerow([i, f"{v:.6f}"])
    return report
