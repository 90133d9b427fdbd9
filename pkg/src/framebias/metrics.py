"""Ranking metrics: semantic nDCG, mAP, Recall@k, MedR, MnR, Rsum.

All metrics are rank functions of the similarity scores only; ties are
broken by gallery index everywhere. nDCG uses graded relevancy, mAP and
the Recall family use the binary exact-class-match relation (relevancy
greater or equal a threshold, default 1.0).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .relevance import RelevancyMatrix


def _scores(matrix) -> np.ndarray:
    values = getattr(matrix, "values", matrix)
    return np.asarray(values, dtype=np.float64)


def ranked_order(row: np.ndarray) -> np.ndarray:
    """Gallery indices sorted by descending score, ties by ascending index."""
    return np.argsort(-row, kind="stable")


def gt_ranks(matrix, gt: np.ndarray) -> np.ndarray:
    """1-based rank of each query's ground-truth gallery item."""
    s = _scores(matrix)
    gt = np.asarray(gt, dtype=np.int64)
    if gt.shape != (s.shape[0],):
        raise ValueError("need one ground-truth index per query")
    if gt.min() < 0 or gt.max() >= s.shape[1]:
        raise ValueError("ground-truth index out of range")
    ranks = np.empty(s.shape[0], dtype=np.int64)
    for q in range(s.shape[0]):
        order = ranked_order(s[q])
        ranks[q] = int(np.nonzero(order == gt[q])[0][0]) + 1
    return ranks


@dataclass
class RankStats:
    r1: float
    r5: float
    r10: float
    med_rank: int
    mean_rank: float
    rsum: float


def rank_stats(matrix, gt: np.ndarray) -> RankStats:
    """Recall@{1,5,10} (percent), median rank (lower median), mean rank, Rsum."""
    ranks = gt_ranks(matrix, gt)
    n = len(ranks)
    r1 = 100.0 * np.count_nonzero(ranks <= 1) / n
    r5 = 100.0 * np.count_nonzero(ranks <= 5) / n
    r10 = 100.0 * np.count_nonzero(ranks <= 10) / n
    med = int(np.sort(ranks)[(n - 1) // 2])
    return RankStats(r1=r1, r5=r5, r10=r10, med_rank=med, mean_rank=float(ranks.mean()), rsum=r1 + r5 + r10)


def average_precision(scores: np.ndarray, relevant) -> float:
    """AP of one ranked list: mean of precision@r over the relevant items' ranks."""
    relevant = set(relevant)
    if not relevant:
        raise ValueError("relevant set must be non-empty")
    order = ranked_order(np.asarray(scores, dtype=np.float64))
    hits = 0
    total = 0.0
    for r, j in enumerate(order, start=1):
        if j in relevant:
            hits += 1
            total += hits / r
    return total / len(relevant)


def mean_average_precision(matrix, rel: RelevancyMatrix, threshold: float = 1.0) -> float:
    """mAP with relevant = gallery items whose relevancy reaches the threshold."""
    s = _scores(matrix)
    r = rel.values
    if s.shape != r.shape:
        raise ValueError("similarity and relevancy shapes differ")
    aps = []
    for q in range(s.shape[0]):
        relevant = set(np.nonzero(r[q] >= threshold)[0].tolist())
        aps.append(average_precision(s[q], relevant))
    return float(np.mean(aps))


def ndcg(matrix, rel: RelevancyMatrix, n_r: int | None = None) -> float:
    """Mean nDCG over queries with graded relevancy gains.

    Per query, DCG sums relevancy of the item at rank j discounted by
    log2(j+1) over the first n_r ranks (default: the whole gallery); IDCG
    is the same sum with the gallery sorted by descending relevancy.
    Queries with IDCG = 0 count as 1 so that they cannot depress the mean.
    """
    s = _scores(matrix)
    r = rel.values
    if s.shape != r.shape:
        raise ValueError("similarity and relevancy shapes differ")
    n_gallery = s.shape[1]
    if n_r is None:
        n_r = n_gallery
    if not 1 <= n_r <= n_gallery:
        raise ValueError("n_r must be in [1, n_gallery]")
    discounts = 1.0 / np.log2(np.arange(2, n_r + 2))
    vals = []
    for q in range(s.shape[0]):
        gains = r[q, ranked_order(s[q])[:n_r]]
        ideal = r[q, ranked_order(r[q])[:n_r]]
        idcg = float(ideal @ discounts)
        vals.append(float(gains @ discounts) / idcg if idcg > 0 else 1.0)
    return float(np.mean(vals))


@dataclass
class DirectionMetrics:
    ndcg: float
    map: float
    r1: float
    r5: float
    r10: float
    med_rank: int
    mean_rank: float
    rsum: float


@dataclass
class MetricsReport:
    t2v: DirectionMetrics
    v2t: DirectionMetrics
    ndcg_avg: float
    map_avg: float

    def to_dict(self) -> dict:
        return {"t2v": asdict(self.t2v), "v2t": asdict(self.v2t), "ndcg_avg": self.ndcg_avg, "map_avg": self.map_avg}


def _direction(s: np.ndarray, rel: RelevancyMatrix, n_r, map_threshold) -> DirectionMetrics:
    gt = np.arange(s.shape[0])
    rs = rank_stats(s, gt)
    return DirectionMetrics(
        ndcg=ndcg(s, rel, n_r),
        map=mean_average_precision(s, rel, map_threshold),
        r1=rs.r1,
        r5=rs.r5,
        r10=rs.r10,
        med_rank=rs.med_rank,
        mean_rank=rs.mean_rank,
        rsum=rs.rsum,
    )


def evaluate(t2v_matrix, rel: RelevancyMatrix, n_r: int | None = None, map_threshold: float = 1.0) -> MetricsReport:
    """Both-direction report for a square same-corpus T2V similarity matrix.

    Queries and gallery index the same clip list, so the ground truth is the
    diagonal and the V2T direction is the transpose.
    """
    s = _scores(t2v_matrix)
    if s.shape[0] != s.shape[1]:
        raise ValueError("evaluate() expects a square same-corpus matrix")
    t2v = _direction(s, rel, n_r, map_threshold)
    v2t = _direction(s.T.copy(), rel.transpose(), n_r, map_threshold)
    return MetricsReport(
        t2v=t2v,
        v2t=v2t,
        ndcg_avg=0.5 * (t2v.ndcg + v2t.ndcg),
        map_avg=0.5 * (t2v.map + v2t.map),
    )
