"""Candidate ranking, MRR / Hits@k aggregation, per-cardinality breakdowns
and gate-weight profiles."""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import MoekgcError

HITS_KS = (1, 5, 10)


@dataclass
class RankResult:
    relation_id: int
    query_index: int
    rank: int  # 1-based
    candidate_count: int


def rank_candidates(scored, true_tail, relation_id=-1, query_index=-1):
    """Pessimistic rank of the true tail: 1 + number of other candidates with
    score <= the true score (ties count as ranked ahead). Lower scores are
    more plausible.

    scored: iterable of (candidate_id, score).
    """
    true_score = None
    ahead = 0
    count = 0
    for cand, score in scored:
        count += 1
        if cand == true_tail and true_score is None:
            true_score = score
    if true_score is None:
        raise MoekgcError(f"true tail {true_tail} is not among the candidates")
    for cand, score in scored:
        if cand != true_tail and score <= true_score:
            ahead += 1
    return RankResult(relation_id, query_index, 1 + ahead, count)


def rank_from_scores(cand_ids, scores, true_tail, relation_id=-1, query_index=-1):
    """Array fast path with the same tie semantics as rank_candidates."""
    cand_ids = np.asarray(cand_ids)
    mask = cand_ids == true_tail
    if not mask.any():
        raise MoekgcError(f"true tail {true_tail} is not among the candidates")
    true_score = scores[np.argmax(mask)]
    ahead = int(np.count_nonzero((scores <= true_score) & ~mask))
    return RankResult(relation_id, query_index, 1 + ahead, len(cand_ids))


@dataclass
class MetricBlock:
    mrr: float
    hits: dict  # k -> fraction
    count: int

    def to_dict(self):
        out = {"mrr": self.mrr, "count": self.count}
        for k, v in self.hits.items():
            out[f"hits@{k}"] = v
        return out


@dataclass
class MetricsTable:
    overall: MetricBlock
    per_category: dict  # category -> MetricBlock

    def to_dict(self):
        return {
            "overall": self.overall.to_dict(),
            "per_category": {c: b.to_dict() for c, b in sorted(self.per_category.items())},
        }


def _block(results):
    n = len(results)
    mrr = math.fsum(1.0 / r.rank for r in results) / n
    hits = {k: math.fsum(1.0 for r in results if r.rank <= k) / n for k in HITS_KS}
    return MetricBlock(mrr, hits, n)


def aggregate_metrics(results, categories=None):
    """MRR and Hits@{1,5,10}, overall and per relation category.

    categories: optional dict relation_id -> category label.
    """
    if not results:
        raise MoekgcError("no rank results to aggregate")
    per_category = {}
    if categories is not None:
        buckets = {}
        for r in results:
            buckets.setdefault(categories.get(r.relation_id, "other"), []).append(r)
        per_category = {cat: _block(rs) for cat, rs in buckets.items()}
    return MetricsTable(_block(results), per_category)


@dataclass
class GateProfile:
    relation_name: str
    weights: np.ndarray  # length M, mean over the task's support gate rows


def gate_profile(relation_name, meta):
    return GateProfile(relation_name, meta.gate_rows.mean(axis=0))


def write_gate_profiles(path, profiles, num_experts):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["relation"] + [f"expert_{i}" for i in range(num_experts)])
        for p in profiles:
            writer.writerow([p.relation_name] + [repr(float(w)) for w in p.weights])


def profile_cluster_similarity(profiles, cluster_of):
    """Mean pairwise cosine similarity of gate profiles within vs across
    clusters. Returns (intra, inter); either may be nan when a side has no
    pairs."""
    intra, inter = [], []
    for i in range(len(profiles)):
        for j in range(i + 1, len(profiles)):
            a, b = profiles[i], profiles[j]
            na, nb = np.linalg.norm(a.weights), np.linalg.norm(b.weights)
            if na == 0.0 or nb == 0.0:
                continue
            cos = float(a.weights @ b.weights / (na * nb))
            same = cluster_of[a.relation_name] == cluster_of[b.relation_name]
            (intra if same else inter).append(cos)
    mean = lambda xs: float(np.mean(xs)) if xs else float("nan")
    return mean(intra), mean(inter)
