"""Per-task orchestration: wire one episode through encoding, relation meta,
local adaptation, the query loss and (for training) the outer backward.

Negative tails are drawn once when the episode is materialized and then
frozen, so a task evaluation is a deterministic function of the parameter
values; the finite-difference checker relies on this.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .model import TaskContext, grad_views, value_views
from .sampling import sample_negatives


@dataclass
class EpisodeData:
    """A task plus its frozen corrupted tails."""

    task: object
    support_negs: list  # corrupted tail ids, one per support pair (or None)
    query_negs: list  # corrupted tail ids, one per query pair (or None)


def materialize(graph, task, neg_rng, cfg, with_query_negs=True):
    support_negs = None
    if cfg.use_local_adapt:
        support_negs = sample_negatives(graph, task.support, task.relation_id, neg_rng)
    query_negs = None
    if with_query_negs:
        query_negs = sample_negatives(graph, task.query, task.relation_id, neg_rng)
    return EpisodeData(task, support_negs, query_negs)


@dataclass
class TaskResult:
    query_loss: float = float("nan")
    support_loss: float = float("nan")
    meta: object = None
    adapt: object = None
    n_query: int = 0
    skipped: bool = False
    reason: str = ""


def build_adapted(ctx, episode, eta_rng=None, inner_steps=None):
    """Encode support, compute the relation meta and run the inner loop.
    Returns (meta, adapt)."""
    task = episode.task
    support_recs = [(ctx.encode(h), ctx.encode(t)) for h, t in task.support]
    meta = ctx.relation_meta(support_recs)
    adapt = ctx.init_adapt(meta, eta_rng=eta_rng)
    if ctx.cfg.use_local_adapt:
        support = [
            (h_rec, t_rec, ctx.encode(neg))
            for (h_rec, t_rec), neg in zip(support_recs, episode.support_negs)
        ]
        ctx.inner_adapt(support, adapt, steps=inner_steps)
    return meta, adapt


def run_task(store, cfg, sampler, episode, eta_rng=None, buffers=None):
    """Full episode pass. When `buffers` is given, first-order outer gradients
    are accumulated into it. Non-finite losses mark the result skipped."""
    ctx = TaskContext(value_views(store, cfg), cfg, sampler)
    task = episode.task
    try:
        meta, adapt = build_adapted(ctx, episode, eta_rng=eta_rng)
    except NumericError as exc:
        return TaskResult(skipped=True, reason=str(exc))

    queries = [
        (ctx.encode(h), ctx.encode(t), ctx.encode(neg))
        for (h, t), neg in zip(task.query, episode.query_negs)
    ]
    loss, pullbacks = ctx.query_loss(queries, adapt)
    if not np.isfinite(loss):
        return TaskResult(skipped=True, reason=f"non-finite query loss {loss!r}")

    if buffers is not None:
        ctx.backward_outer(meta, adapt, pullbacks, grad_views(buffers, cfg))

    support_loss = adapt.support_losses[0] if adapt.support_losses else float("nan")
    return TaskResult(query_loss=loss, support_loss=support_loss, meta=meta,
                      adapt=adapt, n_query=len(task.query))


def rank_queries(ctx, episode, adapt):
    """Scores every query's candidate list under the adapted parameters.
    Returns [(query_index, true_tail, candidate_ids, scores)]."""
    task = episode.task
    p_h, p_r, p_t, R = adapt.p_h, adapt.p_r, adapt.p_t, adapt.R
    ch, cr, ct = float(p_h @ R), float(p_r @ R), float(p_t @ R)
    R_prime = R if cr == 0.0 else R + cr * R
    oh = None if ch == 0.0 else ch * R
    ot = 0.0 if ct == 0.0 else ct * R

    enc_cache = {}

    def cand_matrix(cand_ids):
        key = id(cand_ids)
        if key not in enc_cache:
            enc_cache[key] = np.stack([ctx.encode(c).vec for c in cand_ids])
        return enc_cache[key]

    out = []
    for qi, ((h, t), cand_ids) in enumerate(zip(task.query, task.candidates)):
        h_vec = ctx.encode(h).vec
        h_proj = h_vec if oh is None else h_vec + oh
        base = h_proj + R_prime - ot  # score_c = ||base - enc(c)||
        enc = cand_matrix(cand_ids)
        scores = np.linalg.norm(base - enc, axis=1)
        out.append((qi, t, cand_ids, scores))
    return out
