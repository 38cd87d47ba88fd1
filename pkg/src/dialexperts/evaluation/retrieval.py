"""Rank-based retrieval metrics over candidate lists: R@k, MRR and NDCG."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

RECALL_AT = (1, 5, 10)


@dataclass
class RankedCandidates:
    order: np.ndarray  # candidate indices, best first
    scores: np.ndarray  # score per original candidate index
    gt_index: int
    relevance: np.ndarray | None = None

    def __post_init__(self):
        self.order = np.asarray(self.order, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        n = len(self.scores)
        if sorted(self.order.tolist()) != list(range(n)):
            raise ValueError("order must be a permutation of the candidate indices")
        if not 0 <= self.gt_index < n:
            raise ValueError(f"gt_index {self.gt_index} out of range for {n} candidates")
        if self.relevance is not None:
            self.relevance = np.asarray(self.relevance, dtype=np.float64)
            if len(self.relevance) != n:
                raise ValueError("relevance length differs from the candidate count")

    @property
    def gt_rank(self) -> int:
        """1-based rank of the ground-truth answer."""
        return int(np.flatnonzero(self.order == self.gt_index)[0]) + 1


def order_by_scores(scores) -> np.ndarray:
    """Indices by descending score; ties keep the lower index first."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def ndcg(order: Sequence[int], relevance: Sequence[float]) -> float:
    """NDCG over the full list with linear gain and log2(rank + 1) discount."""
    rel = np.asarray(relevance, dtype=np.float64)
    discounts = 1.0 / np.log2(np.arange(2, len(rel) + 2))
    ideal = float(np.sort(rel)[::-1] @ discounts)
    if ideal == 0:
        return 0.0
    return float(rel[np.asarray(order)] @ discounts) / ideal


def retrieval_metrics(ranked: RankedCandidates | Sequence[RankedCandidates], want_ndcg: bool | None = None) -> dict:
    """Mean R@{1,5,10}, MRR and (when relevance is present or requested) NDCG."""
    items = [ranked] if isinstance(ranked, RankedCandidates) else list(ranked)
    if not items:
        raise ValueError("no ranked lists")
    have_rel = all(r.relevance is not None for r in items)
    if want_ndcg and not have_rel:
        raise ValueError("NDCG requested but relevance scores are missing")
    ranks = np.array([r.gt_rank for r in items], dtype=np.float64)
    out = {f"R@{k}": float(np.mean(ranks <= k)) for k in RECALL_AT}
    out["MRR"] = float(np.mean(1.0 / ranks))
    out["mean_rank"] = float(np.mean(ranks))
    if have_rel and want_ndcg is not False:
        out["NDCG"] = float(np.mean([ndcg(r.order, r.relevance) for r in items]))
    return out
