"""Desk-scale synthetic knowledge graphs with planted relational structure.

Entities live at fixed points in a latent space. Relations are grouped into
clusters; every relation in a cluster shares the cluster's latent translation
vector plus small per-relation noise, and triplets connect heads to the
entities nearest head + offset. That gives the expert mixture something real
to specialize on (one translation direction per cluster) and gives local
adaptation a per-relation residual to absorb. Datasets are written in the
exact layout the loader consumes.
"""

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .graph import build_dataset
from .sampling import derive_rng

_CARDINALITIES = ("1-N", "N-1", "N-N", "1-1")


@dataclass
class SynthConfig:
    entities: int = 200
    clusters: int = 2
    relations_per_cluster: int = 4
    train_relations: int = 4
    dev_relations: int = 2
    test_relations: int = 2
    triplets_per_relation: int = 40
    background_relations: int = 6
    background_triplets_per_relation: int = 120
    latent_dim: int = 8
    offset_scale: float = 2.5
    relation_noise: float = 0.4
    embedding_obs_noise: float = 0.25  # noise on the *emitted* embeddings only
    cardinality_mix: list = field(default_factory=lambda: ["1-N", "N-1", "N-N", "1-1"])
    fanout: int = 2  # repeated-side multiplicity for 1-N / N-1 / N-N planting
    extra_candidates: int = 30
    near_candidate_fraction: float = 0.5
    emit_embeddings: bool = True

    def validate(self):
        if self.entities < 10:
            raise ConfigError("synthetic config: need at least 10 entities")
        if self.clusters < 1 or self.relations_per_cluster < 1:
            raise ConfigError("synthetic config: clusters and relations_per_cluster must be >= 1")
        total = self.clusters * self.relations_per_cluster
        requested = self.train_relations + self.dev_relations + self.test_relations
        if self.clusters > total:
            raise ConfigError("synthetic config: more clusters than relations")
        if requested != total:
            raise ConfigError(
                f"synthetic config: train+dev+test relations ({requested}) must equal "
                f"clusters*relations_per_cluster ({total})"
            )
        if self.triplets_per_relation < 8:
            raise ConfigError("synthetic config: need at least 8 triplets per relation")
        for c in self.cardinality_mix:
            if c not in _CARDINALITIES:
                raise ConfigError(f"synthetic config: unknown cardinality {c!r}")
        if not 0.0 <= self.near_candidate_fraction <= 1.0:
            raise ConfigError("synthetic config: near_candidate_fraction must be in [0, 1]")
        if self.embedding_obs_noise < 0.0:
            raise ConfigError("synthetic config: embedding_obs_noise must be >= 0")
        return self

    @classmethod
    def from_dict(cls, data):
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synthetic config keys: {sorted(unknown)}")
        return cls(**data).validate()


class SyntheticDataset:
    """Raw (name-level) dataset plus the planted ground truth."""

    def __init__(self, config, entity_names, embeddings, background_triplets,
                 task_files, candidates, cluster_of, offsets):
        self.config = config
        self.entity_names = entity_names
        self.embeddings = embeddings
        self.background_triplets = background_triplets
        self.task_files = task_files  # {"train"/"dev"/"test": {rel: [[h, r, t], ...]}}
        self.candidates = candidates
        self.cluster_of = cluster_of  # relation name -> cluster index
        self.offsets = offsets  # relation name -> planted translation vector

    def build(self):
        """In-memory (KnowledgeGraph, TaskSplit) through the shared builder."""
        ent2ids = {n: i for i, n in enumerate(self.entity_names)}
        graph, split = build_dataset(
            self.background_triplets, self.task_files, self.candidates,
            ent2ids=ent2ids,
        )
        if self.config.emit_embeddings:
            graph.pretrained_embeddings = self.embeddings.copy()
        return graph, split

    def write(self, directory):
        os.makedirs(directory, exist_ok=True)

        def dump(name, obj):
            with open(os.path.join(directory, name), "w", encoding="utf-8") as fh:
                json.dump(obj, fh, sort_keys=True, indent=1)
                fh.write("\n")

        with open(os.path.join(directory, "path_graph"), "w", encoding="utf-8") as fh:
            for h, r, t in self.background_triplets:
                fh.write(f"{h}\t{r}\t{t}\n")
        for part in ("train", "dev", "test"):
            dump(f"{part}_tasks.json", self.task_files[part])
        dump("rel2candidates.json", self.candidates)
        dump("ent2ids.json", {n: i for i, n in enumerate(self.entity_names)})
        rel_names = sorted({r for _, r, _ in self.background_triplets}) + sorted(self.cluster_of)
        dump("rel2ids.json", {n: i for i, n in enumerate(rel_names)})
        dump("clusters.json", self.cluster_of)
        if self.config.emit_embeddings:
            with open(os.path.join(directory, "entity_embeddings.tsv"), "w",
                      encoding="utf-8") as fh:
                for name, row in zip(self.entity_names, self.embeddings):
                    fh.write(name + "\t" + "\t".join(repr(float(v)) for v in row) + "\n")
        dump("synth_config.json", asdict(self.config))


def generate_synthetic(config, seed):
    """Build a synthetic dataset; returns (KnowledgeGraph, TaskSplit, SyntheticDataset)."""
    data = generate_dataset(config, seed)
    graph, split = data.build()
    return graph, split, data


def generate_dataset(config, seed):
    config.validate()
    rng = derive_rng(seed, 909)
    n_ent = config.entities
    width = max(3, len(str(n_ent - 1)))
    entity_names = [f"e{i:0{width}d}" for i in range(n_ent)]
    z = rng.normal(size=(n_ent, config.latent_dim))

    # Cluster directions: random unit vectors scaled up, kept apart by rejection.
    centers = []
    while len(centers) < config.clusters:
        v = rng.normal(size=config.latent_dim)
        v *= config.offset_scale / np.linalg.norm(v)
        if all(np.linalg.norm(v - c) > config.offset_scale for c in centers):
            centers.append(v)

    cluster_of = {}
    offsets = {}
    cardinality_of = {}
    relation_names = []
    mix = config.cardinality_mix
    for c in range(config.clusters):
        for i in range(config.relations_per_cluster):
            name = f"task_c{c}_r{i:02d}"
            relation_names.append(name)
            cluster_of[name] = c
            # Offsetting the mix by the cluster index keeps every split
            # cardinality-diverse under the interleaved assignment below.
            cardinality_of[name] = mix[(i + c) % len(mix)]
            noise = rng.normal(size=config.latent_dim)
            offsets[name] = centers[c] + config.relation_noise * noise

    triplets = {}
    for name in relation_names:
        triplets[name] = _plant_relation(
            z, offsets[name], cardinality_of[name], config.triplets_per_relation,
            config.fanout, rng,
        )

    # Background relations give every entity a neighborhood; they use their
    # own offsets, unrelated to the clusters.
    background = []
    for b in range(config.background_relations):
        bname = f"bg_r{b:02d}"
        off = rng.normal(size=config.latent_dim)
        off *= config.offset_scale / np.linalg.norm(off)
        pairs = _plant_relation(z, off, "1-1", config.background_triplets_per_relation,
                                config.fanout, rng)
        background.extend((entity_names[h], bname, entity_names[t]) for h, t in pairs)

    # Candidate lists: every true tail once, plus near-miss and uniform
    # distractors. Near misses ring the individual true tails so ranking
    # rewards an accurate relation vector, not mere locality.
    candidates = {}
    for name in relation_names:
        true_tails = sorted({t for _, t in triplets[name]})
        chosen = set(true_tails)
        n_near = int(round(config.extra_candidates * config.near_candidate_fraction))
        near = []
        ring = 1
        while len(near) < n_near and ring < config.entities:
            for t in true_tails:
                by_dist = np.argsort(np.linalg.norm(z - z[t], axis=1), kind="stable")
                for e in by_dist[ring:ring + 1]:
                    e = int(e)
                    if e not in chosen:
                        chosen.add(e)
                        near.append(e)
                        if len(near) == n_near:
                            break
                if len(near) == n_near:
                    break
            ring += 1
        pool = [e for e in range(n_ent) if e not in chosen]
        n_rand = min(config.extra_candidates - len(near), len(pool))
        rand = [pool[i] for i in rng.choice(len(pool), size=n_rand, replace=False)] \
            if n_rand > 0 else []
        cand = true_tails + near + rand
        candidates[name] = [entity_names[e] for e in cand]

    # Cluster-stratified split: interleave the clusters, then cut by counts.
    interleaved = []
    for i in range(config.relations_per_cluster):
        for c in range(config.clusters):
            interleaved.append(f"task_c{c}_r{i:02d}")
    cut1 = config.train_relations
    cut2 = cut1 + config.dev_relations
    assignment = {
        "train": interleaved[:cut1],
        "dev": interleaved[cut1:cut2],
        "test": interleaved[cut2:],
    }
    task_files = {}
    for part, rels in assignment.items():
        task_files[part] = {
            name: [[entity_names[h], name, entity_names[t]] for h, t in triplets[name]]
            for name in sorted(rels)
        }

    return SyntheticDataset(config, entity_names, z, background, task_files,
                            candidates, cluster_of, offsets)


def _plant_relation(z, offset, category, target, fanout, rng):
    """Generate `target` (head, tail) pairs consistent with tail ~ head + offset."""
    n_ent = z.shape[0]
    pairs = []
    seen = set()
    attempts = 0
    while len(pairs) < target and attempts < 50 * target:
        attempts += 1
        if category == "1-N":
            h = int(rng.integers(n_ent))
            for t in _nearest(z, z[h] + offset, fanout, exclude={h}):
                _add_pair(pairs, seen, h, t, target)
        elif category == "N-1":
            t = int(rng.integers(n_ent))
            for h in _nearest(z, z[t] - offset, fanout, exclude={t}):
                _add_pair(pairs, seen, h, t, target)
        elif category == "N-N":
            anchor = z[int(rng.integers(n_ent))]
            heads = _nearest(z, anchor, fanout, exclude=set())
            tails = _nearest(z, anchor + offset, fanout, exclude=set(heads))
            for h in heads:
                for t in tails:
                    _add_pair(pairs, seen, h, t, target)
        else:  # 1-1
            h = int(rng.integers(n_ent))
            t = _nearest(z, z[h] + offset, 1, exclude={h})[0]
            _add_pair(pairs, seen, h, t, target)
    return pairs


def _add_pair(pairs, seen, h, t, target):
    if len(pairs) < target and (h, t) not in seen and h != t:
        seen.add((h, t))
        pairs.append((h, t))


def _nearest(z, point, k, exclude):
    dists = np.linalg.norm(z - point, axis=1)
    order = np.argsort(dists, kind="stable")
    out = []
    for e in order:
        e = int(e)
        if e not in exclude:
            out.append(e)
            if len(out) == k:
                break
    return out
