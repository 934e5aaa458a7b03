import json

import pytest


def write_dataset(directory, background, tasks_by_part, candidates, ent2ids=None,
                  rel2ids=None, embeddings=None):
    """Write a dataset directory from name-level pieces."""
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "path_graph", "w") as fh:
        for h, r, t in background:
            fh.write(f"{h}\t{r}\t{t}\n")
    for part in ("train", "dev", "test"):
        with open(directory / f"{part}_tasks.json", "w") as fh:
            json.dump(tasks_by_part.get(part, {}), fh)
    with open(directory / "rel2candidates.json", "w") as fh:
        json.dump(candidates, fh)
    if ent2ids is not None:
        with open(directory / "ent2ids.json", "w") as fh:
            json.dump(ent2ids, fh)
    if rel2ids is not None:
        with open(directory / "rel2ids.json", "w") as fh:
            json.dump(rel2ids, fh)
    if embeddings is not None:
        with open(directory / "entity_embeddings.tsv", "w") as fh:
            for name, row in embeddings.items():
                fh.write(name + "\t" + "\t".join(repr(float(v)) for v in row) + "\n")
    return directory


@pytest.fixture
def minimal_dataset(tmp_path):
    """Three entities, one background relation, one train task relation."""
    return write_dataset(
        tmp_path / "data",
        background=[("a", "likes", "b"), ("b", "likes", "c")],
        tasks_by_part={
            "train": {"r1": [["a", "r1", "b"], ["b", "r1", "c"], ["a", "r1", "c"]]}
        },
        candidates={"r1": ["b", "c"]},
    )
