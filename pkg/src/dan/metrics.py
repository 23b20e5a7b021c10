"""Ranking metrics (MAP, MRR, NDCG), accuracy and cross-seed aggregation.

Candidates are ranked by a stable descending sort on score, so tied scores
keep their input order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autodiff import ContractError


def _ranked_relevance(scores, relevance) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    rel = np.asarray(relevance)
    if scores.shape != rel.shape or scores.ndim != 1:
        raise ContractError(f"scores {scores.shape} and relevance {rel.shape} must be equal 1-D")
    if not rel.any():
        raise ContractError("ranking metrics need at least one relevant candidate")
    order = np.argsort(-scores, kind="stable")
    return rel[order] > 0


def average_precision(scores, relevance) -> float:
    hits = _ranked_relevance(scores, relevance)
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


def reciprocal_rank(scores, relevance) -> float:
    hits = _ranked_relevance(scores, relevance)
    return 1.0 / (int(np.argmax(hits)) + 1)


def ndcg(scores, relevance) -> float:
    """Binary-gain NDCG over the full list with a ``log2(rank + 1)`` discount."""
    hits = _ranked_relevance(scores, relevance)
    discounts = 1.0 / np.log2(np.arange(2, len(hits) + 2))
    dcg = float(discounts[hits].sum())
    idcg = float(discounts[:int(hits.sum())].sum())
    return dcg / idcg


@dataclass
class RankedResult:
    scores: Sequence[float]
    relevance: Sequence[int]


def _mean_over(results: Iterable, fn) -> float:
    vals = [fn(r.scores, r.relevance) for r in results]
    if not vals:
        raise ContractError("no questions to evaluate")
    return float(np.mean(vals))


def mean_average_precision(results: Iterable[RankedResult]) -> float:
    return _mean_over(results, average_precision)


def mrr(results: Iterable[RankedResult]) -> float:
    return _mean_over(results, reciprocal_rank)


def mean_ndcg(results: Iterable[RankedResult]) -> float:
    return _mean_over(results, ndcg)


def ranking_report(results: Sequence[RankedResult]) -> dict[str, float]:
    return {"map": mean_average_precision(results), "mrr": mrr(results),
            "ndcg": mean_ndcg(results)}


def accuracy(predictions, labels) -> float:
    p, y = np.asarray(predictions), np.asarray(labels)
    if p.shape != y.shape:
        raise ContractError(f"predictions {p.shape} and labels {y.shape} differ")
    if p.size == 0:
        raise ContractError("accuracy of an empty prediction list")
    return float(np.mean(p == y))


@dataclass
class RunAggregate:
    samples: list = field(default_factory=list)

    def __post_init__(self):
        if not self.samples:
            raise ContractError("aggregate needs at least one sample")
        self.samples = [float(s) for s in self.samples]

    @property
    def mean(self) -> float:
        return math.fsum(self.samples) / len(self.samples)

    @property
    def std(self) -> float:
        """Sample standard deviation (ddof=1); 0.0 for a single sample."""
        n = len(self.samples)
        if n < 2:
            return 0.0
        m = self.mean
        return math.sqrt(math.fsum((s - m) ** 2 for s in self.samples) / (n - 1))

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "samples": list(self.samples)}


def aggregate_runs(samples: Sequence[float]) -> RunAggregate:
    return RunAggregate(list(samples))


def metric_report(per_metric: dict[str, Sequence[float]]) -> dict:
    """``{metric: {mean, std, samples}}`` as written to report JSON files."""
    return {name: aggregate_runs(vals).to_dict() for name, vals in per_metric.items()}
