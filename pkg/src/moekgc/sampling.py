"""Samplers: capped neighbor lists, task episodes and corrupted tails.

All randomness flows through numpy Generators derived from explicit
SeedSequence entropy, so every sample is a pure function of (seed, tags) and
independent of call order. Worker threads derive their own streams the same
way.
"""

import numpy as np

from .errors import SamplingError
from .graph import Task

# Stream tags; fixed literals so streams stay disjoint and reproducible.
TAG_NEIGHBOR = 11
TAG_TASK = 22
TAG_NEGATIVE = 33
TAG_INIT = 44
TAG_EVAL = 55

_REJECTION_TRIES = 128


def derive_rng(*entropy):
    return np.random.default_rng(np.random.SeedSequence(list(entropy)))


class NeighborSampler:
    """Per-run neighbor views: full list under the cap, otherwise a uniform
    sample without replacement drawn once per (seed, entity) and cached."""

    def __init__(self, graph, cap, seed):
        if cap < 1:
            raise ValueError("neighbor cap must be >= 1")
        self.graph = graph
        self.cap = cap
        self.seed = seed
        self._cache = {}

    def neighbors(self, entity_id):
        cached = self._cache.get(entity_id)
        if cached is not None:
            return cached
        rows = self.graph.neighbor_index[entity_id]
        if rows.shape[0] > self.cap:
            rng = derive_rng(self.seed, TAG_NEIGHBOR, entity_id)
            keep = np.sort(rng.choice(rows.shape[0], size=self.cap, replace=False))
            rows = rows[keep]
        self._cache[entity_id] = rows
        return rows


def eligible_relations(partition, k):
    """Relations with at least K+1 triplets, in id order."""
    return [rel_id for rel_id in sorted(partition) if len(partition[rel_id].pairs) >= k + 1]


def sample_task(partition, k, query_batch, rng):
    """Uniformly pick an eligible relation, then disjoint support/query pairs."""
    pool = eligible_relations(partition, k)
    if not pool:
        raise SamplingError(
            f"no relation in the partition has at least {k + 1} triplets"
        )
    rel_id = pool[rng.integers(len(pool))]
    data = partition[rel_id]
    order = rng.permutation(len(data.pairs))
    support = [data.pairs[i] for i in order[:k]]
    query = [data.pairs[i] for i in order[k:k + query_batch]]
    return Task(rel_id, support, query, [data.candidates] * len(query))


def eval_task(data, k, query_cap=None):
    """Deterministic evaluation episode: first K file-order triplets as
    support, the remainder as queries. None if the relation is too small."""
    if len(data.pairs) < k + 1:
        return None
    query = data.pairs[k:]
    if query_cap is not None:
        query = query[:query_cap]
    return Task(data.relation_id, list(data.pairs[:k]), list(query),
                [data.candidates] * len(query))


def sample_negative(graph, head, relation_id, rng):
    """Uniform corrupted tail t' with (head, relation, t') outside the graph."""
    n = graph.num_entities
    triplets = graph.triplet_set
    for _ in range(_REJECTION_TRIES):
        t = int(rng.integers(n))
        if (head, relation_id, t) not in triplets:
            return t
    # Dense relation for this head: enumerate the complement (still uniform).
    valid = [t for t in range(n) if (head, relation_id, t) not in triplets]
    if not valid:
        raise SamplingError(
            f"cannot corrupt tail: every entity forms a true triplet with "
            f"(head={head}, relation={relation_id})"
        )
    return valid[rng.integers(len(valid))]


def sample_negatives(graph, pairs, relation_id, rng):
    """One corrupted tail per positive pair."""
    return [sample_negative(graph, h, relation_id, rng) for h, _ in pairs]
