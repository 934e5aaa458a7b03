"""Forward-pass oracles for the encoder, expert mixture, projections and
scoring, plus the sparse-gate invariants."""

import math

import numpy as np
import pytest

from moekgc import kernels, ops
from moekgc.config import ModelConfig
from moekgc.episode import build_adapted, materialize
from moekgc.model import (AdaptState, EncodeRecord, TaskContext, init_params,
                          margin_loss, project, score_triplet, top_n_indices,
                          value_views)
from moekgc.sampling import NeighborSampler, derive_rng
from moekgc.synthetic import SynthConfig, generate_synthetic


def make_setup(seed=0, **model_overrides):
    cfg = ModelConfig(
        embed_dim=6, num_experts=4, top_n=2, expert_hidden=8, gate_hidden=8,
        neighbor_cap=8, inner_lr=0.01,
    )
    for k, v in model_overrides.items():
        setattr(cfg, k, v)
    cfg.validate()
    synth = SynthConfig(
        entities=40, clusters=2, relations_per_cluster=2, train_relations=2,
        dev_relations=1, test_relations=1, triplets_per_relation=12,
        background_relations=3, background_triplets_per_relation=30,
        latent_dim=cfg.embed_dim, extra_candidates=8,
    )
    graph, split, _ = generate_synthetic(synth, seed=seed)
    store = init_params(cfg, graph, seed=seed)
    sampler = NeighborSampler(graph, cfg.neighbor_cap, seed=seed)
    ctx = TaskContext(value_views(store, cfg), cfg, sampler)
    return graph, split, store, sampler, cfg, ctx


class TestEncoder:
    def test_zero_neighbors_returns_raw_embedding(self):
        graph, _, store, sampler, cfg, ctx = make_setup()
        # Forge an isolated entity by pointing at an empty neighbor list.
        iso = None
        for e in range(graph.num_entities):
            if graph.neighbor_index[e].shape[0] == 0:
                iso = e
                break
        if iso is None:
            graph.neighbor_index[0] = np.zeros((0, 2), dtype=np.int64)
            iso = 0
        rec = ctx.encode(iso)
        assert np.array_equal(rec.vec, store["entity_emb"].value[iso])

    def test_zero_weight_matrix_returns_raw_embedding(self):
        graph, _, store, sampler, cfg, _ = make_setup()
        store["neighbor_w"].value[...] = 0.0
        ctx = TaskContext(value_views(store, cfg), cfg, sampler)
        e = 0
        rec = ctx.encode(e)
        assert np.allclose(rec.vec, store["entity_emb"].value[e], atol=0)

    def test_ablation_returns_raw_embedding(self):
        graph, _, store, sampler, cfg, _ = make_setup(use_neighbor_agg=False)
        ctx = TaskContext(value_views(store, cfg), cfg, sampler)
        e = 1
        assert np.array_equal(ctx.encode(e).vec, store["entity_emb"].value[e])

    def test_single_neighbor_hand_arithmetic(self):
        # dim 2, one neighbor: every intermediate written out by hand.
        e_self = np.array([0.1, 0.2])
        rel = np.array([0.5, 0.6])
        nbr = np.array([0.3, -0.4])
        W = np.array([
            [0.2, -0.1, 0.4, 0.3],
            [-0.3, 0.5, 0.1, -0.2],
        ])
        beta = np.array([0.7, -0.8])
        C = np.concatenate([rel, nbr])[None, :]
        out, U, Cp, g = kernels.encode_forward(e_self, C, W, beta)

        u0 = 0.2 * 0.5 + -0.1 * 0.6 + 0.4 * 0.3 + 0.3 * -0.4
        u1 = -0.3 * 0.5 + 0.5 * 0.6 + 0.1 * 0.3 + -0.2 * -0.4
        c0, c1 = max(u0, 0.0), max(u1, 0.0)
        a = 0.7 * c0 + -0.8 * c1
        gate = 1.0 / (1.0 + math.exp(-a))
        expected = np.array([0.1 + gate * c0, 0.2 + gate * c1])
        assert np.allclose(out, expected, atol=1e-15)
        assert g[0] == pytest.approx(gate, abs=1e-15)

    def test_mean_aggregation_scale_free(self):
        # Duplicating a neighborhood leaves the mean aggregate unchanged.
        rng = np.random.default_rng(3)
        e_self = rng.normal(size=4)
        C = rng.normal(size=(5, 8))
        W = rng.normal(size=(4, 8))
        beta = rng.normal(size=4)
        out1, *_ = kernels.encode_forward(e_self, C, W, beta)
        out2, *_ = kernels.encode_forward(e_self, np.vstack([C, C]), W, beta)
        assert np.allclose(out1, out2, atol=1e-12)


class TestExpertMixture:
    def test_top_n_tie_break_prefers_lower_index(self):
        s = np.array([0.25, 0.25, 0.25, 0.25])
        assert list(top_n_indices(s, 2)) == [0, 1]
        s = np.array([0.1, 0.4, 0.4, 0.1])
        assert list(top_n_indices(s, 1)) == [1]

    def test_equal_logits_select_first_five_at_uniform_weight(self):
        graph, split, store, sampler, cfg, _ = make_setup(
            num_experts=32, top_n=5)
        for name in ("gate_w1", "gate_b1", "gate_w2", "gate_b2"):
            store[name].value[...] = 0.0
        ctx = TaskContext(value_views(store, cfg), cfg, sampler)
        rec = ctx.pair_rep(ctx.encode(0), ctx.encode(1))
        assert list(rec.selected) == [0, 1, 2, 3, 4]
        assert np.allclose(rec.softmax, 1.0 / 32, atol=1e-15)
        row = rec.gate_row(32)
        assert np.count_nonzero(row) == 5
        assert np.allclose(row[:5], 1.0 / 32, atol=1e-15)

    def test_n_equals_m_has_no_sparsification(self):
        graph, split, store, sampler, cfg, ctx = make_setup(
            num_experts=2, top_n=2)
        rec = ctx.pair_rep(ctx.encode(2), ctx.encode(3))
        x = rec.x
        v = value_views(store, cfg)
        y0, *_ = kernels.mlp2_forward(x, *v.experts[0])
        y1, *_ = kernels.mlp2_forward(x, *v.experts[1])
        s = rec.softmax
        assert np.allclose(rec.rep, (s[0] * y0 + s[1] * y1) / 2, atol=1e-14)

    def test_hand_mixture_matches_dense_oracle(self):
        graph, split, store, sampler, cfg, ctx = make_setup(seed=4)
        rec = ctx.pair_rep(ctx.encode(5), ctx.encode(6))
        v = value_views(store, cfg)
        dense = np.zeros(cfg.embed_dim)
        row = rec.gate_row(cfg.num_experts)
        for i in range(cfg.num_experts):
            y, *_ = kernels.mlp2_forward(rec.x, *v.experts[i])
            dense += row[i] * y
        dense /= cfg.top_n
        assert np.allclose(rec.rep, dense, atol=1e-12)

    def test_gate_rows_full_softmax_sums_to_one(self):
        graph, split, store, sampler, cfg, ctx = make_setup(seed=5)
        (data,) = [d for d in split.train.values()][:1]
        recs = [(ctx.encode(h), ctx.encode(t)) for h, t in data.pairs[:4]]
        meta = ctx.relation_meta(recs)
        assert np.all(np.abs(meta.softmax_rows.sum(axis=1) - 1.0) <= 1e-12)
        assert np.all((meta.gate_rows != 0).sum(axis=1) == cfg.top_n)

    def test_gate_logit_shift_invariance(self):
        graph, split, store, sampler, cfg, _ = make_setup(seed=6)
        ctx = TaskContext(value_views(store, cfg), cfg, sampler)
        before = ctx.pair_rep(ctx.encode(7), ctx.encode(8))
        store["gate_b2"].value += 41.5  # constant shift of every gate logit
        ctx2 = TaskContext(value_views(store, cfg), cfg, sampler)
        after = ctx2.pair_rep(ctx2.encode(7), ctx2.encode(8))
        assert np.array_equal(before.selected, after.selected)
        assert np.allclose(before.softmax, after.softmax, atol=1e-12)
        assert np.allclose(before.rep, after.rep, atol=1e-12)

    def test_plain_mlp_ablation(self):
        graph, split, store, sampler, cfg, _ = make_setup(use_moe=False)
        ctx = TaskContext(value_views(store, cfg), cfg, sampler)
        rec = ctx.pair_rep(ctx.encode(0), ctx.encode(1))
        v = value_views(store, cfg)
        y, *_ = kernels.mlp2_forward(rec.x, *v.relmlp)
        assert np.array_equal(rec.rep, y)
        assert rec.selected is None


class TestRelationMeta:
    def test_single_pair_is_identity(self):
        graph, split, store, sampler, cfg, ctx = make_setup(seed=7)
        recs = [(ctx.encode(0), ctx.encode(1))]
        meta = ctx.relation_meta(recs)
        assert np.array_equal(meta.vector, meta.triplet_reps[0])

    def test_mean_matches_independent_accumulation(self):
        graph, split, store, sampler, cfg, ctx = make_setup(seed=8)
        pairs = [(2 * i, 2 * i + 1) for i in range(5)]
        recs = [(ctx.encode(h), ctx.encode(t)) for h, t in pairs]
        meta = ctx.relation_meta(recs)
        acc = np.zeros(cfg.embed_dim)
        for rep in meta.triplet_reps:
            acc += rep
        assert np.allclose(meta.vector, acc / 5, atol=1e-15)

    def test_support_order_permutation_invariant(self):
        graph, split, store, sampler, cfg, ctx = make_setup(seed=9)
        pairs = [(0, 1), (2, 3), (4, 5)]
        recs = [(ctx.encode(h), ctx.encode(t)) for h, t in pairs]
        meta_a = ctx.relation_meta(recs)
        meta_b = ctx.relation_meta(recs[::-1])
        assert np.allclose(meta_a.vector, meta_b.vector, atol=1e-12)


class TestProjectionAndScore:
    def test_zero_projection_is_bitwise_identity(self):
        rng = np.random.default_rng(10)
        v, R = rng.normal(size=5), rng.normal(size=5)
        out = project(v, np.zeros(5), R)
        assert out is v  # no arithmetic at all

    def test_unit_alignment_doubles_relation(self):
        R = np.array([1.0, 0.0, 0.0])
        p = np.array([1.0, 0.0, 0.0])  # p . R = 1
        assert np.allclose(project(R, p, R), 2 * R, atol=0)

    def test_hand_projection_dim3(self):
        p = np.array([0.3, -0.2, 0.5])
        R = np.array([1.0, 2.0, -1.0])
        v = np.array([0.1, 0.1, 0.1])
        c = 0.3 * 1.0 + -0.2 * 2.0 + 0.5 * -1.0  # -0.6
        assert np.allclose(project(v, p, R), v + c * R, atol=1e-15)

    def test_perfect_translation_scores_zero(self):
        rng = np.random.default_rng(11)
        h, R = rng.normal(size=4), rng.normal(size=4)
        assert score_triplet(h, R, h + R) == pytest.approx(0.0, abs=1e-12)

    def test_hand_score_sqrt2(self):
        assert score_triplet(np.array([1.0, 0.0]), np.array([0.0, 1.0]),
                             np.array([0.0, 0.0])) == pytest.approx(math.sqrt(2))

    def test_score_equals_l2_of_sum(self):
        rng = np.random.default_rng(12)
        h, R, t = rng.normal(size=(3, 6))
        assert score_triplet(h, R, t) == ops.l2_forward(h + R - t)

    def test_margin_loss_wrapper(self):
        assert margin_loss([0.2], [0.9], 1.0) == pytest.approx(0.3)
        assert margin_loss([0.0], [1.0], 1.0) == 0.0


def fabricate_records(vectors):
    return [EncodeRecord(i, np.asarray(v, dtype=np.float64))
            for i, v in enumerate(vectors)]


class TestInnerAdapt:
    def test_zero_gradient_fixed_point(self):
        # All-zero encodings: scores are 0, hinge is active but u/n are zero
        # vectors, so every gradient vanishes and the state stays put.
        cfg = ModelConfig(embed_dim=3, num_experts=2, top_n=1, expert_hidden=2,
                          gate_hidden=2, inner_lr=0.1).validate()
        ctx = TaskContext(None, cfg, None)
        h, t, n = fabricate_records([[0, 0, 0], [0, 0, 0], [0, 0, 0]])
        adapt = AdaptState(np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3))
        ctx.inner_adapt([(h, t, n)], adapt)
        assert np.array_equal(adapt.R, np.zeros(3))
        assert np.array_equal(adapt.p_h, np.zeros(3))

    def test_single_triplet_hand_gradient(self):
        # One support pair at eta = 0: grad wrt p_h is ((u_hat - n_hat) . R) R,
        # p_r matches it, p_t is its negation, and grad wrt R is u_hat - n_hat.
        cfg = ModelConfig(embed_dim=2, num_experts=2, top_n=1, expert_hidden=2,
                          gate_hidden=2, inner_lr=0.5, margin=1.0).validate()
        ctx = TaskContext(None, cfg, None)
        h, t, n = fabricate_records([[0.2, 0.1], [0.5, -0.3], [0.4, -0.5]])
        R = np.array([0.3, -0.7])
        adapt = AdaptState(np.zeros(2), np.zeros(2), np.zeros(2), R.copy())

        u = h.vec + R - t.vec
        w = h.vec + R - n.vec
        assert np.linalg.norm(u) + 1.0 - np.linalg.norm(w) > 0  # hinge active
        u_hat = u / np.linalg.norm(u)
        n_hat = w / np.linalg.norm(w)
        dot = (u_hat - n_hat) @ R

        loss, g_ph, g_pr, g_pt, gR = ctx.support_loss_and_grads([(h, t, n)], adapt)
        assert loss == pytest.approx(
            np.linalg.norm(u) + 1.0 - np.linalg.norm(w), abs=1e-14)
        assert np.allclose(g_ph, dot * R, atol=1e-14)
        assert np.allclose(g_pr, dot * R, atol=1e-14)
        assert np.allclose(g_pt, -dot * R, atol=1e-14)
        assert np.allclose(gR, u_hat - n_hat, atol=1e-14)

        ctx.inner_adapt([(h, t, n)], adapt, steps=1)
        assert np.allclose(adapt.p_h, -0.5 * dot * R, atol=1e-14)
        assert np.allclose(adapt.R, R - 0.5 * (u_hat - n_hat), atol=1e-14)

    def test_one_step_descends_support_loss(self):
        # Descent direction check at a small rate over random tasks.
        graph, split, store, sampler, cfg, _ = make_setup(seed=13, inner_lr=1e-4)
        decreased, total = 0, 0
        for trial in range(50):
            rng = derive_rng(100 + trial)
            from moekgc.sampling import sample_task
            task = sample_task(split.train, 3, 2, rng)
            episode = materialize(graph, task, derive_rng(200 + trial), cfg)
            ctx = TaskContext(value_views(store, cfg), cfg, sampler)
            support_recs = [(ctx.encode(h), ctx.encode(t)) for h, t in task.support]
            meta = ctx.relation_meta(support_recs)
            adapt = ctx.init_adapt(meta)
            support = [(hr, tr, ctx.encode(neg)) for (hr, tr), neg in
                       zip(support_recs, episode.support_negs)]
            before, g_ph, g_pr, g_pt, gR = ctx.support_loss_and_grads(support, adapt)
            gnorm = max(np.linalg.norm(g) for g in (g_ph, g_pr, g_pt, gR))
            ctx.inner_adapt(support, adapt, steps=1)
            after, *_ = ctx.support_loss_and_grads(support, adapt)
            total += 1
            if after <= before or gnorm <= 1e-8:
                decreased += 1
            if gnorm > 1e-8:
                assert after < before + 1e-12
        assert decreased == total

    def test_local_adapt_ablation_skips_inner_loop(self):
        graph, split, store, sampler, cfg, _ = make_setup(use_local_adapt=False)
        ctx = TaskContext(value_views(store, cfg), cfg, sampler)
        from moekgc.sampling import sample_task
        task = sample_task(split.train, 2, 2, derive_rng(0))
        episode = materialize(graph, task, derive_rng(1), cfg)
        assert episode.support_negs is None
        meta, adapt = build_adapted(ctx, episode)
        assert adapt.steps == 0
        assert np.array_equal(adapt.R, meta.vector)
        assert np.array_equal(adapt.p_h, np.zeros(cfg.embed_dim))
