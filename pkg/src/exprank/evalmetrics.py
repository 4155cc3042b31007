"""Retrieval-quality and compression metrics.

Average precision and MAP grade how well a ranking surfaces relevant
experiments; Spearman correlation grades agreement with a reference
ranking; storage fraction measures how many posterior samples survive
weighting; the combined metric trades retrieval quality against storage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DataError, RankingResult


@dataclass(frozen=True)
class EvalReport:
    """Evaluation summary for one retrieval method on one split."""

    method: str
    per_query_ap: dict
    map_score: float | None
    storage_fraction: float
    combined: float
    spearman: float | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for qid, ap in self.per_query_ap.items():
            if not 0.0 <= ap <= 1.0:
                raise ValueError(f"AP for query {qid!r} outside [0, 1]: {ap}")
        if self.map_score is not None and not 0.0 <= self.map_score <= 1.0:
            raise ValueError(f"MAP outside [0, 1]: {self.map_score}")
        if not 0.0 <= self.storage_fraction <= 1.0:
            raise ValueError(f"storage fraction outside [0, 1]: {self.storage_fraction}")
        if self.spearman is not None and not -1.0 <= self.spearman <= 1.0 + 1e-12:
            raise ValueError(f"Spearman outside [-1, 1]: {self.spearman}")


def average_precision(ranking: RankingResult, relevant) -> float:
    """AP of a ranking: mean of precision-at-r over the relevant ranks."""
    relevant = set(relevant)
    if not relevant:
        raise DataError("relevant set is empty")
    ids = ranking.ids()
    missing = relevant - set(ids)
    if missing:
        raise DataError(f"relevant ids not present in ranking: {sorted(missing)}")
    hits = 0
    total = 0.0
    for rank, rid in enumerate(ids, start=1):
        if rid in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def mean_average_precision(rankings, labels: dict) -> float:
    """Mean AP over queries; an item is relevant iff it shares the query's label.

    Every query and every ranked id must carry a label. Queries whose
    candidate list contains no same-label item make AP undefined and
    raise; callers that want to skip such queries filter beforehand.
    """
    rankings = list(rankings)
    if not rankings:
        raise DataError("no rankings to average")
    aps = []
    for ranking in rankings:
        qid = ranking.query_id
        if qid not in labels or labels[qid] is None:
            raise DataError(f"query {qid!r} lacks a label")
        for rid in ranking.ids():
            if rid not in labels or labels[rid] is None:
                raise DataError(f"ranked experiment {rid!r} lacks a label")
        relevant = {rid for rid in ranking.ids() if labels[rid] == labels[qid]}
        aps.append(average_precision(ranking, relevant))
    return float(np.mean(aps))


def per_query_average_precision(rankings, labels: dict) -> dict:
    """AP per query under the same-label relevance rule."""
    out = {}
    for ranking in rankings:
        qid = ranking.query_id
        relevant = {rid for rid in ranking.ids() if labels.get(rid) == labels.get(qid)}
        out[qid] = average_precision(ranking, relevant)
    return out


def spearman_rho(rank_a: RankingResult, rank_b: RankingResult) -> float:
    """Spearman correlation of two rankings over the same id set.

    Computed as the Pearson correlation of rank positions. Rankings
    produced here are tie-free (deterministic id tie-break), so the
    position vectors are permutations of each other.
    """
    ids_a = rank_a.ids()
    ids_b = rank_b.ids()
    if set(ids_a) != set(ids_b):
        raise DataError("rankings cover different id sets")
    if len(ids_a) < 2:
        raise DataError("need at least two items for a correlation")
    pos_b = {rid: i for i, rid in enumerate(ids_b)}
    a = np.arange(len(ids_a), dtype=np.float64)
    b = np.array([pos_b[rid] for rid in ids_a], dtype=np.float64)
    a -= a.mean()
    b -= b.mean()
    denom = np.sqrt((a @ a) * (b @ b))
    return float((a @ b) / denom)


def storage_fraction(weights: dict) -> float:
    """Fraction of posterior samples kept: nonzero weights over total samples."""
    if not weights:
        raise DataError("no weight vectors given")
    kept = sum(wv.nonzero_count for wv in weights.values())
    total = sum(wv.m for wv in weights.values())
    return kept / total


def combined_metric(performance: float, fraction: float, sparsity_reading: str = "stored") -> float:
    """Storage and retrieval trade-off: (1 - stored fraction) x performance.

    ``performance`` is MAP in [0, 1] or Spearman in [-1, 1]; negative
    values contribute 0 to the product. The default reads the stored
    fraction itself as the penalized quantity, so pruning more samples
    scores higher; ``sparsity_reading="pruned"`` inverts that and
    rewards keeping samples instead.
    """
    if not -1.0 <= performance <= 1.0:
        raise DataError(f"performance outside [-1, 1]: {performance}")
    if not 0.0 <= fraction <= 1.0:
        raise DataError(f"storage fraction outside [0, 1]: {fraction}")
    if sparsity_reading == "stored":
        factor = 1.0 - fraction
    elif sparsity_reading == "pruned":
        factor = fraction
    else:
        raise ValueError(f"unknown sparsity reading {sparsity_reading!r}")
    return factor * max(performance, 0.0)
