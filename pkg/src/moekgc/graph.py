"""Knowledge-graph storage: vocabularies, background triplets, per-entity
neighbor index, task splits and relation cardinality classification.

Dataset directory layout (all UTF-8):
  path_graph                 head<TAB>relation<TAB>tail, one per line
  train_tasks.json           relation name -> [[head, relation, tail], ...]
  dev_tasks.json, test_tasks.json
  rel2candidates.json        relation name -> [candidate tail names]
  ent2ids.json, rel2ids.json optional id maps; sorted-name order otherwise
  entity_embeddings.tsv      optional pretrained rows: name<TAB>v1<TAB>...<TAB>vd

Relation id scheme: background relations occupy [0, B), their inverses
[B, 2B) (tail entities receive neighborhoods through inverse edges), and task
relations [2B, 2B + T). Only the first 2B ids are embedded.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetError

REQUIRED_FILES = (
    "path_graph",
    "train_tasks.json",
    "dev_tasks.json",
    "test_tasks.json",
    "rel2candidates.json",
)

CARDINALITY_THRESHOLD = 1.5  # TransH-lineage convention for the 1-vs-N split


@dataclass
class RelationData:
    """Source triplets of one task relation, in file order."""

    relation_id: int
    name: str
    pairs: list  # [(head_id, tail_id), ...]
    candidates: list  # candidate tail ids shared by all queries of the relation


@dataclass
class TaskSplit:
    train: dict = field(default_factory=dict)  # relation_id -> RelationData
    dev: dict = field(default_factory=dict)
    test: dict = field(default_factory=dict)

    def partition(self, name):
        try:
            return getattr(self, name)
        except AttributeError:
            raise KeyError(f"unknown partition {name!r}")


@dataclass
class Task:
    """One episode: a relation with disjoint support and query pairs."""

    relation_id: int
    support: list  # [(head_id, tail_id)] * K
    query: list  # [(head_id, tail_id)]
    candidates: list  # per query: list of candidate tail ids


@dataclass
class RelationCardinality:
    relation_id: int
    tails_per_head: float
    heads_per_tail: float
    category: str  # one of "1-1", "1-N", "N-1", "N-N"


class KnowledgeGraph:
    """Immutable after construction; safe for shared reads."""

    def __init__(self, entity_names, bg_relation_names, task_relation_names,
                 background_triplets, pretrained_embeddings=None):
        self.entity_names = list(entity_names)
        self.entity_ids = {n: i for i, n in enumerate(self.entity_names)}
        self.bg_relation_names = list(bg_relation_names)
        self.task_relation_names = list(task_relation_names)
        self.num_entities = len(self.entity_names)
        self.num_bg_relations = len(self.bg_relation_names)
        self.background_triplets = list(background_triplets)
        self.pretrained_embeddings = pretrained_embeddings

        B = self.num_bg_relations
        self.num_embedded_relations = 2 * B
        self._task_rel_base = 2 * B

        index = [[] for _ in range(self.num_entities)]
        for h, r, t in self.background_triplets:
            index[h].append((r, t))
            index[t].append((r + B, h))
        self.neighbor_index = [
            np.array(rows, dtype=np.int64).reshape(len(rows), 2) for rows in index
        ]

        self.triplet_set = set()
        for h, r, t in self.background_triplets:
            self.triplet_set.add((h, r, t))

    def task_relation_id(self, index):
        return self._task_rel_base + index

    def relation_name(self, rel_id):
        B = self.num_bg_relations
        if rel_id < B:
            return self.bg_relation_names[rel_id]
        if rel_id < 2 * B:
            return self.bg_relation_names[rel_id - B] + "<inv>"
        return self.task_relation_names[rel_id - 2 * B]

    def register_task_triplets(self, relation_id, pairs):
        for h, t in pairs:
            self.triplet_set.add((h, relation_id, t))

    def stats(self):
        return {
            "entities": self.num_entities,
            "background_relations": self.num_bg_relations,
            "task_relations": len(self.task_relation_names),
            "background_triplets": len(self.background_triplets),
        }


def load_dataset(directory):
    """Load and validate a dataset directory; returns (KnowledgeGraph, TaskSplit)."""
    for fname in REQUIRED_FILES:
        if not os.path.exists(os.path.join(directory, fname)):
            raise DatasetError(f"missing dataset file: {fname} (in {directory})")

    raw_background = _read_path_graph(os.path.join(directory, "path_graph"))
    task_files = {
        part: _read_json(os.path.join(directory, f"{part}_tasks.json"))
        for part in ("train", "dev", "test")
    }
    candidates_raw = _read_json(os.path.join(directory, "rel2candidates.json"))
    ent2ids = _maybe_read_json(os.path.join(directory, "ent2ids.json"))
    rel2ids = _maybe_read_json(os.path.join(directory, "rel2ids.json"))

    return build_dataset(
        raw_background,
        task_files,
        candidates_raw,
        ent2ids=ent2ids,
        rel2ids=rel2ids,
        embeddings_path=os.path.join(directory, "entity_embeddings.tsv"),
    )


def build_dataset(raw_background, task_files, candidates_raw, ent2ids=None,
                  rel2ids=None, embeddings_path=None):
    """Shared builder used by the loader and the synthetic generator."""
    bg_rel_names = sorted({r for _, r, _ in raw_background})
    task_rel_names = []
    seen_rel = {}
    for part, tasks in task_files.items():
        for rel in tasks:
            if rel in seen_rel and seen_rel[rel] != part:
                raise DatasetError(
                    f"relation {rel!r} appears in both {seen_rel[rel]} and {part} tasks"
                )
            seen_rel[rel] = part
            if rel in bg_rel_names:
                raise DatasetError(
                    f"task relation {rel!r} also appears in path_graph; "
                    "task relations must not contribute background edges"
                )
        task_rel_names.extend(r for r in tasks if r not in task_rel_names)

    if ent2ids is not None:
        entity_names = _names_from_id_map(ent2ids, "ent2ids.json")
        known = set(entity_names)
        for h, r, t in raw_background:
            for name in (h, t):
                if name not in known:
                    raise DatasetError(
                        f"path_graph entity {name!r} missing from ent2ids.json"
                    )
    else:
        entity_names = sorted({h for h, _, _ in raw_background}
                              | {t for _, _, t in raw_background})

    if rel2ids is not None:
        order = {name: i for i, name in enumerate(_names_from_id_map(rel2ids, "rel2ids.json"))}
        for name in bg_rel_names + task_rel_names:
            if name not in order:
                raise DatasetError(f"relation {name!r} missing from rel2ids.json")
        bg_rel_names = sorted(bg_rel_names, key=order.__getitem__)
        task_rel_names = sorted(task_rel_names, key=order.__getitem__)
    else:
        task_rel_names = sorted(task_rel_names)

    ent_id = {n: i for i, n in enumerate(entity_names)}
    bg_id = {n: i for i, n in enumerate(bg_rel_names)}

    background = [(ent_id[h], bg_id[r], ent_id[t]) for h, r, t in raw_background]

    embeddings = None
    if embeddings_path and os.path.exists(embeddings_path):
        embeddings = _read_embeddings(embeddings_path, entity_names)

    graph = KnowledgeGraph(entity_names, bg_rel_names, task_rel_names,
                           background, pretrained_embeddings=embeddings)

    split = TaskSplit()
    task_index = {name: i for i, name in enumerate(task_rel_names)}
    for part, tasks in task_files.items():
        bucket = split.partition(part)
        for rel_name in sorted(tasks, key=task_index.__getitem__):
            triplets = tasks[rel_name]
            rel_id = graph.task_relation_id(task_index[rel_name])
            pairs = []
            for entry in triplets:
                if len(entry) != 3:
                    raise DatasetError(
                        f"{part}_tasks.json relation {rel_name!r}: triplet {entry!r} "
                        "does not have three fields"
                    )
                h, r, t = entry
                if r != rel_name:
                    raise DatasetError(
                        f"{part}_tasks.json relation {rel_name!r}: triplet names "
                        f"relation {r!r}"
                    )
                for name in (h, t):
                    if name not in ent_id:
                        raise DatasetError(
                            f"{part}_tasks.json relation {rel_name!r}: unknown entity "
                            f"{name!r} in triplet {entry!r}"
                        )
                pairs.append((ent_id[h], ent_id[t]))
            if rel_name not in candidates_raw:
                raise DatasetError(f"rel2candidates.json has no entry for {rel_name!r}")
            cand_names = candidates_raw[rel_name]
            cand_ids = []
            for name in cand_names:
                if name not in ent_id:
                    raise DatasetError(
                        f"rel2candidates.json relation {rel_name!r}: unknown entity {name!r}"
                    )
                cand_ids.append(ent_id[name])
            counts = {}
            for c in cand_ids:
                counts[c] = counts.get(c, 0) + 1
            for (h, t), entry in zip(pairs, triplets):
                if counts.get(t, 0) != 1:
                    raise DatasetError(
                        f"relation {rel_name!r}: true tail {entry[2]!r} of query "
                        f"{entry!r} must appear exactly once in its candidate list "
                        f"(found {counts.get(t, 0)})"
                    )
            graph.register_task_triplets(rel_id, pairs)
            bucket[rel_id] = RelationData(rel_id, rel_name, pairs, cand_ids)

    return graph, split


def classify_relation(graph, relation_id, pairs):
    """Cardinality category from average tail/head multiplicities.

    Computed over the union of the relation's background and task triplets;
    task relations never occur in the background graph, so for them this is
    just the task triplet pool.
    """
    all_pairs = list(pairs)
    if relation_id < graph.num_bg_relations:
        all_pairs += [(h, t) for h, r, t in graph.background_triplets if r == relation_id]
    if not all_pairs:
        raise DatasetError(f"relation {relation_id} has no triplets to classify")
    heads = {h for h, _ in all_pairs}
    tails = {t for _, t in all_pairs}
    tph = len(all_pairs) / len(heads)
    hpt = len(all_pairs) / len(tails)
    category = ("N" if hpt >= CARDINALITY_THRESHOLD else "1") + "-" + (
        "N" if tph >= CARDINALITY_THRESHOLD else "1"
    )
    return RelationCardinality(relation_id, tph, hpt, category)


def _read_path_graph(path):
    triplets = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DatasetError(
                    f"path_graph line {lineno}: expected 3 tab-separated fields, "
                    f"got {len(parts)}: {line!r}"
                )
            triplets.append(tuple(parts))
    return triplets


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{os.path.basename(path)} is not valid JSON: {exc}")


def _maybe_read_json(path):
    return _read_json(path) if os.path.exists(path) else None


def _names_from_id_map(id_map, fname):
    """Validate a dense name -> id bijection and return names in id order."""
    n = len(id_map)
    names = [None] * n
    for name, idx in id_map.items():
        if not isinstance(idx, int) or not 0 <= idx < n or names[idx] is not None:
            raise DatasetError(f"{fname}: ids must form a dense 0..{n - 1} bijection")
        names[idx] = name
    return names


def _read_embeddings(path, entity_names):
    rows = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            name, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise DatasetError(
                    f"entity_embeddings.tsv line {lineno}: expected {dim} values, "
                    f"got {len(values)}"
                )
            try:
                rows[name] = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise DatasetError(f"entity_embeddings.tsv line {lineno}: {exc}")
    out = np.zeros((len(entity_names), dim or 0))
    for i, name in enumerate(entity_names):
        if name not in rows:
            raise DatasetError(f"entity_embeddings.tsv has no row for entity {name!r}")
        out[i] = rows[name]
    return out
