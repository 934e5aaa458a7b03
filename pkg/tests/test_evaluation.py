"""Ranking vs a naive full-sort oracle, metric aggregation identities and
gate-profile export."""

import csv
import math

import numpy as np
import pytest

from moekgc.errors import MoekgcError
from moekgc.evaluator import (GateProfile, RankResult, aggregate_metrics,
                              gate_profile, profile_cluster_similarity,
                              rank_candidates, rank_from_scores,
                              write_gate_profiles)


def oracle_rank(scored, true_tail):
    """Sort ascending by score; among equal scores the true tail goes last."""
    order = sorted(scored, key=lambda cs: (cs[1], cs[0] == true_tail))
    for pos, (cand, _) in enumerate(order, start=1):
        if cand == true_tail:
            return pos
    raise AssertionError("true tail missing")


class TestRankCandidates:
    def test_best_score_wins(self):
        r = rank_candidates([("t", 0.2), ("a", 0.5), ("b", 0.9)], "t")
        assert r.rank == 1 and r.candidate_count == 3

    def test_pessimistic_tie(self):
        r = rank_candidates([("a", 0.1), ("t", 0.1)], "t")
        assert r.rank == 2

    def test_true_tail_absent_errors(self):
        with pytest.raises(MoekgcError):
            rank_candidates([("a", 0.1)], "t")

    def test_matches_naive_sort_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(300):
            n = int(rng.integers(1, 60))
            scores = np.round(rng.uniform(0, 1, size=n), 2)  # force ties
            cands = list(range(n))
            true_tail = int(rng.integers(n))
            scored = list(zip(cands, scores))
            r = rank_candidates(scored, true_tail)
            assert r.rank == oracle_rank(scored, true_tail)
            fast = rank_from_scores(np.array(cands), scores, true_tail)
            assert fast.rank == r.rank

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        scores = rng.uniform(size=20)
        scored = list(zip(range(20), scores))
        base = rank_candidates(scored, 7).rank
        for _ in range(10):
            perm = rng.permutation(20)
            shuffled = [scored[i] for i in perm]
            assert rank_candidates(shuffled, 7).rank == base

    def test_monotone_transform_invariant(self):
        rng = np.random.default_rng(2)
        scores = rng.uniform(size=30)
        scored = list(zip(range(30), scores))
        base = rank_candidates(scored, 11).rank
        warped = [(c, math.exp(3 * s) + 1) for c, s in scored]
        assert rank_candidates(warped, 11).rank == base


class TestAggregateMetrics:
    def res(self, ranks, relation_id=0):
        return [RankResult(relation_id, i, r, 100) for i, r in enumerate(ranks)]

    def test_hand_arithmetic(self):
        table = aggregate_metrics(self.res([1, 2, 4]))
        assert table.overall.mrr == pytest.approx((1 + 0.5 + 0.25) / 3, abs=1e-15)
        assert table.overall.hits[1] == pytest.approx(1 / 3)
        assert table.overall.hits[5] == 1.0

    def test_all_rank_one(self):
        table = aggregate_metrics(self.res([1, 1, 1]))
        assert table.overall.mrr == 1.0
        assert all(v == 1.0 for v in table.overall.hits.values())

    def test_hits_monotone(self):
        rng = np.random.default_rng(3)
        table = aggregate_metrics(self.res(list(rng.integers(1, 50, size=500))))
        h = table.overall.hits
        assert h[1] <= h[5] <= h[10] <= 1.0
        assert 0.0 < table.overall.mrr <= 1.0

    def test_matches_streaming_recompute(self):
        rng = np.random.default_rng(4)
        ranks = list(rng.integers(1, 200, size=1000))
        table = aggregate_metrics(self.res(ranks))
        acc = 0.0
        for r in ranks:
            acc += 1.0 / r
        assert table.overall.mrr == pytest.approx(acc / len(ranks), rel=1e-13)

    def test_category_recombination_identity(self):
        rng = np.random.default_rng(5)
        results = []
        categories = {}
        for rel in range(6):
            categories[rel] = ("1-N", "N-1", "N-N")[rel % 3]
            for i in range(int(rng.integers(5, 40))):
                results.append(RankResult(rel, i, int(rng.integers(1, 30)), 50))
        table = aggregate_metrics(results, categories)
        weighted = sum(b.mrr * b.count for b in table.per_category.values())
        assert weighted / len(results) == pytest.approx(table.overall.mrr, abs=1e-12)
        assert sum(b.count for b in table.per_category.values()) == len(results)

    def test_empty_rejected(self):
        with pytest.raises(MoekgcError):
            aggregate_metrics([])


class FakeMeta:
    def __init__(self, gate_rows):
        self.gate_rows = np.asarray(gate_rows, dtype=np.float64)


class TestGateProfiles:
    def test_single_row_is_identity(self):
        meta = FakeMeta([[0.0, 0.4, 0.0, 0.6]])
        p = gate_profile("r", meta)
        assert np.array_equal(p.weights, [0.0, 0.4, 0.0, 0.6])

    def test_mean_over_support_rows(self):
        meta = FakeMeta([[1.0, 0.0], [0.0, 1.0]])
        assert np.array_equal(gate_profile("r", meta).weights, [0.5, 0.5])

    def test_csv_header_arithmetic(self, tmp_path):
        profiles = [GateProfile("rel_a", np.linspace(0, 1, 32))]
        path = tmp_path / "gates.csv"
        write_gate_profiles(path, profiles, 32)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows[0]) == 33  # relation + 32 expert columns
        assert rows[0][0] == "relation" and rows[0][1] == "expert_0"
        assert float(rows[1][5]) == pytest.approx(profiles[0].weights[4])

    def test_cluster_similarity_direction(self):
        profiles = [
            GateProfile("a0", np.array([1.0, 0.0, 0.0, 0.1])),
            GateProfile("a1", np.array([0.9, 0.1, 0.0, 0.0])),
            GateProfile("b0", np.array([0.0, 0.1, 1.0, 0.0])),
            GateProfile("b1", np.array([0.0, 0.0, 0.9, 0.2])),
        ]
        cluster_of = {"a0": 0, "a1": 0, "b0": 1, "b1": 1}
        intra, inter = profile_cluster_similarity(profiles, cluster_of)
        assert intra > inter
