import math

import numpy as np
import pytest

from dan.autodiff import ContractError
from dan.metrics import (RankedResult, RunAggregate, accuracy, aggregate_runs, average_precision,
                         mean_average_precision, mean_ndcg, metric_report, mrr, ndcg,
                         ranking_report, reciprocal_rank)

from oracles import brute_ap, brute_ndcg, brute_rr, random_lists


class TestExamples:
    def test_single_relevant_first(self):
        assert average_precision([0.9, 0.1, 0.2], [1, 0, 0]) == 1.0

    def test_ap_example(self):
        assert average_precision([3, 2, 1], [1, 0, 1]) == pytest.approx((1 + 2 / 3) / 2, abs=1e-12)

    def test_all_relevant(self):
        assert average_precision([0.1, 0.7, 0.3], [1, 1, 1]) == 1.0

    def test_rr(self):
        assert reciprocal_rank([0.9, 0.8], [0, 1]) == 0.5
        assert mrr([RankedResult([1, 0], [1, 0]), RankedResult([5, 1, 0], [1, 0, 0])]) == 1.0

    def test_ndcg(self):
        assert ndcg([0.9, 0.5, 0.1], [1, 1, 0]) == 1.0
        assert ndcg([0.9, 0.1], [0, 1]) == pytest.approx(1 / math.log2(3), abs=1e-12)
        assert ndcg([0.1, 0.2, 0.3], [1, 0, 0]) < 1.0

    def test_ties_keep_input_order(self):
        assert average_precision([0.5, 0.5], [0, 1]) == 0.5
        assert average_precision([0.5, 0.5], [1, 0]) == 1.0

    def test_accuracy(self):
        assert accuracy([1, 0, 2], [1, 0, 2]) == 1.0
        assert accuracy([1, 1, 0, 0], [1, 0, 0, 1]) == 0.5

    def test_report(self):
        rep = ranking_report([RankedResult([0.2, 0.9], [1, 0])])
        assert rep == {"map": 0.5, "mrr": 0.5, "ndcg": pytest.approx(1 / math.log2(3))}


class TestOracles:
    def test_ranking_metrics_match_brute_force(self):
        for scores, rel in random_lists():
            assert abs(average_precision(scores, rel) - brute_ap(scores, rel)) <= 1e-9
            assert abs(reciprocal_rank(scores, rel) - brute_rr(scores, rel)) <= 1e-9
            assert abs(ndcg(scores, rel) - brute_ndcg(scores, rel)) <= 1e-9

    def test_accuracy_matches_count(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(1, 30))
            p, y = rng.integers(0, 3, n), rng.integers(0, 3, n)
            assert abs(accuracy(p, y) - sum(int(a == b) for a, b in zip(p, y)) / n) <= 1e-9

    def test_monotone_transform_invariance(self):
        for scores, rel in random_lists(2):
            for f in (lambda s: np.exp(2 * s), lambda s: s ** 3 - 7, lambda s: np.tanh(s / 10)):
                t = f(scores)
                assert average_precision(t, rel) == average_precision(scores, rel)
                assert reciprocal_rank(t, rel) == reciprocal_rank(scores, rel)
                assert ndcg(t, rel) == ndcg(scores, rel)

    def test_question_order_invariance(self):
        results = [RankedResult(s, r) for s, r in random_lists(3, 50)]
        perm = [results[i] for i in np.random.default_rng(0).permutation(50)]
        for fn in (mean_average_precision, mrr, mean_ndcg):
            assert fn(perm) == pytest.approx(fn(results), abs=1e-12)

    def test_bounds(self):
        for scores, rel in random_lists(4):
            assert 0.0 <= average_precision(scores, rel) <= 1.0
            assert 0.0 < reciprocal_rank(scores, rel) <= 1.0
            assert 0.0 <= ndcg(scores, rel) <= 1.0


class TestAggregate:
    def test_constant(self):
        a = aggregate_runs([0.6, 0.6, 0.6])
        assert a.mean == pytest.approx(0.6, abs=1e-15) and a.std == 0.0

    def test_two_pass(self):
        x = list(np.random.default_rng(5).uniform(0.4, 0.9, 10))
        mean = sum(x) / len(x)
        std = math.sqrt(sum((v - mean) ** 2 for v in x) / (len(x) - 1))
        a = aggregate_runs(x)
        assert abs(a.mean - mean) < 1e-12 and abs(a.std - std) < 1e-12

    def test_single_sample(self):
        assert RunAggregate([0.5]).std == 0.0

    def test_report_schema(self):
        rep = metric_report({"map": [0.5, 0.7]})
        assert set(rep["map"]) == {"mean", "std", "samples"}
        assert rep["map"]["samples"] == [0.5, 0.7]


class TestErrors:
    def test_no_relevant(self):
        with pytest.raises(ContractError):
            average_precision([0.1, 0.2], [0, 0])

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            ndcg([0.1, 0.2], [1])
        with pytest.raises(ContractError):
            accuracy([1, 0], [1])

    def test_empty(self):
        with pytest.raises(ContractError):
            accuracy([], [])
        with pytest.raises(ContractError):
            aggregate_runs([])
        with pytest.raises(ContractError):
            mean_average_precision([])
