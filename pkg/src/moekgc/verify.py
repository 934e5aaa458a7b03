"""End-to-end gradient verification on a tiny planted task.

The closure is the full episode loss: encode support, build the relation
meta, run the live inner loop, evaluate the query hinge. Analytic outer
gradients are first order (inner-step offsets treated as constants), so the
finite-difference derivative of this closure differs from them by O(inner_lr)
curvature terms; the default check therefore runs the inner loop at a tiny
rate (1e-6), far below the tolerance, while a frozen-offset closure (exposed
for tests) matches the analytic gradients at any rate.

Local parameters are checked exactly: the support-loss gradients with respect
to p_h, p_r, p_t and R are compared against finite differences at a nonzero
randomly drawn eta.
"""

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .episode import materialize, run_task
from .gradcheck import grad_check
from .model import AdaptState, TaskContext, init_params, value_views
from .sampling import NeighborSampler, derive_rng, sample_task
from .synthetic import SynthConfig, generate_synthetic

CHECK_NUM_EXPERTS = 4
CHECK_TOP_N = 2
CHECK_SHOTS = 2
CHECK_QUERIES = 3
DEFAULT_CHECK_INNER_LR = 1e-6


@dataclass
class CheckProblem:
    graph: object
    store: object
    sampler: object
    cfg: ModelConfig
    episode: object


def build_check_problem(dim=4, seed=0, inner_lr=DEFAULT_CHECK_INNER_LR,
                        inner_steps=1, use_moe=True, use_neighbor_agg=True,
                        use_local_adapt=True):
    if not 1 <= dim <= 8:
        raise ValueError("gradient check supports 1 <= dim <= 8")
    cfg = ModelConfig(
        embed_dim=dim, num_experts=CHECK_NUM_EXPERTS, top_n=CHECK_TOP_N,
        expert_hidden=8, gate_hidden=8, neighbor_cap=8, inner_lr=inner_lr,
        inner_steps=inner_steps, use_moe=use_moe,
        use_neighbor_agg=use_neighbor_agg, use_local_adapt=use_local_adapt,
    ).validate()
    synth = SynthConfig(
        entities=24, clusters=2, relations_per_cluster=2, train_relations=2,
        dev_relations=1, test_relations=1, triplets_per_relation=10,
        background_relations=2, background_triplets_per_relation=30,
        latent_dim=dim, extra_candidates=6,
    )
    graph, split, _ = generate_synthetic(synth, seed=seed)
    store = init_params(cfg, graph, seed=seed)
    sampler = NeighborSampler(graph, cfg.neighbor_cap, seed=seed)
    task = sample_task(split.train, CHECK_SHOTS, CHECK_QUERIES, derive_rng(seed, 71))
    episode = materialize(graph, task, derive_rng(seed, 72), cfg)
    return CheckProblem(graph, store, sampler, cfg, episode)


def episode_closure(problem):
    """Deterministic scalar loss of the current parameter values, inner loop
    re-run on every call."""

    def closure():
        result = run_task(problem.store, problem.cfg, problem.sampler,
                          problem.episode)
        if result.skipped:
            raise ArithmeticError(f"closure produced no loss: {result.reason}")
        return result.query_loss

    return closure


def frozen_offset_closure(problem):
    """Same episode but with the inner-loop offsets frozen at their current
    values, so finite differences of this closure match the first-order
    analytic gradients at any inner rate."""
    base = run_task(problem.store, problem.cfg, problem.sampler, problem.episode)
    meta0, adapt0 = base.meta, base.adapt
    delta_R = adapt0.R - meta0.vector
    p_h, p_r, p_t = adapt0.p_h.copy(), adapt0.p_r.copy(), adapt0.p_t.copy()
    task = problem.episode.task

    def closure():
        ctx = TaskContext(value_views(problem.store, problem.cfg), problem.cfg,
                          problem.sampler)
        support_recs = [(ctx.encode(h), ctx.encode(t)) for h, t in task.support]
        meta = ctx.relation_meta(support_recs)
        adapt = AdaptState(p_h, p_r, p_t, meta.vector + delta_R)
        queries = [
            (ctx.encode(h), ctx.encode(t), ctx.encode(neg))
            for (h, t), neg in zip(task.query, problem.episode.query_negs)
        ]
        loss, _ = ctx.query_loss(queries, adapt)
        return loss

    return closure


def analytic_outer_grads(problem):
    buffers = problem.store.new_grad_buffers()
    result = run_task(problem.store, problem.cfg, problem.sampler,
                      problem.episode, buffers=buffers)
    if result.skipped:
        raise ArithmeticError(f"analytic pass failed: {result.reason}")
    return buffers, result


def check_outer(problem, h=1e-5, tolerance=1e-4, closure_factory=None):
    """FD-verify every parameter group against the analytic outer gradients."""
    buffers, _ = analytic_outer_grads(problem)
    closure = (closure_factory or episode_closure)(problem)
    groups = [(g.name, g.value, buffers[g.name]) for g in problem.store]
    return grad_check(closure, groups, h=h, tolerance=tolerance)


def check_eta(problem, h=1e-5, tolerance=1e-4, seed=1234):
    """FD-verify the support-loss gradients for eta = (p_h, p_r, p_t) and R
    at a random nonzero adaptation point."""
    cfg = problem.cfg
    ctx = TaskContext(value_views(problem.store, cfg), cfg, problem.sampler)
    task = problem.episode.task
    support_recs = [(ctx.encode(ht[0]), ctx.encode(ht[1])) for ht in task.support]
    meta = ctx.relation_meta(support_recs)
    support = [
        (h_rec, t_rec, ctx.encode(neg))
        for (h_rec, t_rec), neg in zip(support_recs, problem.episode.support_negs)
    ]
    rng = derive_rng(seed)
    adapt = AdaptState(
        0.3 * rng.normal(size=cfg.embed_dim),
        0.3 * rng.normal(size=cfg.embed_dim),
        0.3 * rng.normal(size=cfg.embed_dim),
        meta.vector + 0.1 * rng.normal(size=cfg.embed_dim),
    )
    _, g_ph, g_pr, g_pt, gR = ctx.support_loss_and_grads(support, adapt)

    def closure():
        loss, *_ = ctx.support_loss_and_grads(support, adapt)
        return loss

    groups = [
        ("eta.p_h", adapt.p_h, g_ph),
        ("eta.p_r", adapt.p_r, g_pr),
        ("eta.p_t", adapt.p_t, g_pt),
        ("eta.R", adapt.R, gR),
    ]
    return grad_check(closure, groups, h=h, tolerance=tolerance)


def kink_diagnostics(problem):
    """Distances to the nearest non-smooth point (relu kinks, hinge boundary,
    top-N selection gap). Finite differences are only trustworthy when these
    comfortably exceed the step size."""
    result = run_task(problem.store, problem.cfg, problem.sampler, problem.episode)
    meta = result.meta
    diag = {}
    n = problem.cfg.top_n
    if problem.cfg.use_moe:
        gaps = []
        for row in meta.softmax_rows:
            s = np.sort(row)[::-1]
            gaps.append(s[n - 1] - s[n] if len(s) > n else np.inf)
        diag["min_topn_gap"] = float(min(gaps))
    losses = result.adapt.support_losses or [result.support_loss]
    diag["support_loss"] = float(losses[0]) if np.isfinite(losses[0]) else None
    diag["query_loss"] = float(result.query_loss)
    return diag
