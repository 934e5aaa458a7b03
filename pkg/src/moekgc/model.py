"""The relational learner: gated neighbor encoding, sparse expert mixture,
task-local projection adaptation, translational scoring and margin losses.

Forward math per task
---------------------
Entity encoding (neighbors capped and fixed per run):
    c_i  = rel_emb[r_i] (+) ent_emb[e_i]          concat, length 2d
    c'_i = relu(W c_i)
    g_i  = sigmoid(beta . c'_i)
    enc(e) = mean_i(g_i c'_i) + ent_emb[e]

Relation representation of one support pair (h, t), x = enc(h) (+) enc(t):
    s    = softmax(Gate(x)), keep the top-N entries (ties -> lower index)
    r    = (1/N) * sum_{i in top-N} s_i Expert_i(x)
and the task vector R is the mean of the K support representations.

Local adaptation keeps three task-local vectors p_h, p_r, p_t. Projection
adds an offset along R: v' = v + (p . R) R. Scores are ||h' + R' - t'||_2,
trained with a pairwise margin hinge against corrupted tails. The inner loop
takes plain gradient steps on (p_h, p_r, p_t, R) using the support loss; the
outer loss is the query hinge at the adapted values.

Outer gradients are first order: the inner-step offsets are treated as
constants, while gradients still flow through the query-time forward
dependence on the global parameters, including through R's dependence on the
support encodings and the expert mixture.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels, ops
from .errors import ConfigError, NumericError
from .sampling import TAG_INIT, derive_rng

EXPERT_PARTS = ("w1", "b1", "w2", "b2")


def expert_group(i, part):
    return f"expert_{i:02d}_{part}"


class ParamViews:
    """Direct array references into a ParamStore's values or a grad-buffer
    dict, resolved once so hot loops skip name lookups."""

    def __init__(self, mapping, num_experts):
        self.entity = mapping["entity_emb"]
        self.relation = mapping["relation_emb"]
        self.W = mapping["neighbor_w"]
        self.beta = mapping["neighbor_beta"]
        self.gate = tuple(mapping[f"gate_{p}"] for p in EXPERT_PARTS)
        self.experts = [
            tuple(mapping[expert_group(i, p)] for p in EXPERT_PARTS)
            for i in range(num_experts)
        ]
        self.relmlp = tuple(mapping[f"relmlp_{p}"] for p in EXPERT_PARTS)


def value_views(store, cfg):
    return ParamViews({g.name: g.value for g in store}, cfg.num_experts)


def grad_views(buffers, cfg):
    return ParamViews(buffers, cfg.num_experts)


def init_params(cfg, graph, seed):
    """Build the ParamStore. Entity rows come from the dataset's pretrained
    embeddings when present, otherwise uniform in +-sqrt(6/d); MLP weights are
    Glorot-uniform with zero biases."""
    from .params import ParamStore

    rng = derive_rng(seed, TAG_INIT)
    d = cfg.embed_dim
    store = ParamStore()

    if graph.pretrained_embeddings is not None:
        pre = graph.pretrained_embeddings
        if pre.shape != (graph.num_entities, d):
            raise ConfigError(
                f"pretrained embeddings have shape {pre.shape}, "
                f"expected ({graph.num_entities}, {d}); set embed_dim accordingly"
            )
        entity = pre.copy()
    else:
        bound = np.sqrt(6.0 / d)
        entity = rng.uniform(-bound, bound, size=(graph.num_entities, d))
    store.add("entity_emb", entity, trainable=cfg.train_embeddings)

    bound = np.sqrt(6.0 / d)
    store.add(
        "relation_emb",
        rng.uniform(-bound, bound, size=(graph.num_embedded_relations, d)),
        trainable=cfg.train_embeddings,
    )

    def glorot(rows, cols):
        limit = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-limit, limit, size=(rows, cols))

    store.add("neighbor_w", glorot(d, 2 * d))
    store.add("neighbor_beta", rng.uniform(-np.sqrt(6.0 / (d + 1)),
                                           np.sqrt(6.0 / (d + 1)), size=d))

    def add_mlp(prefix, hidden, out_dim):
        store.add(f"{prefix}_w1", glorot(hidden, 2 * d))
        store.add(f"{prefix}_b1", np.zeros(hidden))
        store.add(f"{prefix}_w2", glorot(out_dim, hidden))
        store.add(f"{prefix}_b2", np.zeros(out_dim))

    for i in range(cfg.num_experts):
        add_mlp(f"expert_{i:02d}", cfg.expert_hidden, d)
    add_mlp("gate", cfg.gate_hidden, cfg.num_experts)
    # Plain single-MLP relation learner; only wired in when use_moe is off.
    add_mlp("relmlp", cfg.expert_hidden, d)
    return store


def top_n_indices(scores, n):
    """Indices of the n largest scores, ties resolved to the lower index."""
    order = np.argsort(-scores, kind="stable")[:n]
    return np.sort(order)


class EncodeRecord:
    __slots__ = ("entity", "vec", "rows", "C", "U", "Cp", "g", "dvec")

    def __init__(self, entity, vec, rows=None, C=None, U=None, Cp=None, g=None):
        self.entity = entity
        self.vec = vec
        self.rows = rows
        self.C = C
        self.U = U
        self.Cp = Cp
        self.g = g
        self.dvec = None

    def add_grad(self, dvec):
        if self.dvec is None:
            self.dvec = dvec.copy()
        else:
            self.dvec += dvec


class MoeRecord:
    __slots__ = ("x", "rep", "softmax", "selected", "gate_cache", "expert_caches",
                 "plain_cache")

    def __init__(self, x, rep, softmax=None, selected=None, gate_cache=None,
                 expert_caches=None, plain_cache=None):
        self.x = x
        self.rep = rep
        self.softmax = softmax
        self.selected = selected
        self.gate_cache = gate_cache
        self.expert_caches = expert_caches
        self.plain_cache = plain_cache

    def gate_row(self, num_experts):
        row = np.zeros(num_experts)
        if self.selected is not None:
            row[self.selected] = self.softmax[self.selected]
        return row


@dataclass
class RelationMeta:
    vector: np.ndarray  # mean of the K support representations
    triplet_reps: np.ndarray  # (K, d)
    gate_rows: np.ndarray  # (K, M), zeros outside the selected experts
    softmax_rows: np.ndarray  # (K, M), full pre-sparsification softmax
    records: list  # MoeRecords, for the outer backward
    pairs: list  # the (h_rec, t_rec) support encodings behind each record


@dataclass
class AdaptState:
    p_h: np.ndarray
    p_r: np.ndarray
    p_t: np.ndarray
    R: np.ndarray
    steps: int = 0
    support_losses: list = field(default_factory=list)


def project(vec, p, R):
    """v + (p . R) R; returns v itself when the coefficient is exactly zero,
    so zero-initialized adaptation is the identity bit for bit."""
    c = float(p @ R)
    if c == 0.0:
        return vec
    return vec + c * R


def score_triplet(h_vec, r_vec, t_vec):
    """Translational plausibility ||h + r - t||_2; lower is better."""
    return ops.l2_forward(h_vec + r_vec - t_vec)


def margin_loss(pos_scores, neg_scores, margin):
    loss, _ = ops.hinge_forward(pos_scores, neg_scores, margin)
    return loss


class TaskContext:
    """Per-task computation: encoding memo, relation meta, adaptation and the
    first-order outer backward. Reads the ParamStore; never writes it."""

    def __init__(self, values, cfg, sampler, keep_caches=True):
        self.v = values  # ParamViews over parameter values
        self.cfg = cfg
        self.sampler = sampler
        self.keep_caches = keep_caches
        self._enc = {}

    # -- encoding ---------------------------------------------------------

    def encode(self, entity):
        rec = self._enc.get(entity)
        if rec is not None:
            return rec
        emb = self.v.entity[entity]
        if not self.cfg.use_neighbor_agg:
            rec = EncodeRecord(entity, emb.copy())
        else:
            rows = self.sampler.neighbors(entity)
            if rows.shape[0] == 0:
                rec = EncodeRecord(entity, emb.copy(),
                                   rows=rows, C=np.zeros((0, 2 * self.cfg.embed_dim)))
            else:
                C = np.concatenate(
                    (self.v.relation[rows[:, 0]], self.v.entity[rows[:, 1]]), axis=1
                )
                out, U, Cp, g = kernels.encode_forward(emb, C, self.v.W, self.v.beta)
                if not self.keep_caches:
                    U = Cp = None
                rec = EncodeRecord(entity, out, rows=rows, C=C, U=U, Cp=Cp, g=g)
        self._enc[entity] = rec
        return rec

    # -- relation representation ------------------------------------------

    def pair_rep(self, h_rec, t_rec):
        x = np.concatenate((h_rec.vec, t_rec.vec))
        if not self.cfg.use_moe:
            rep, z1, h1 = kernels.mlp2_forward(x, *self.v.relmlp)
            return MoeRecord(x, rep, plain_cache=(z1, h1))
        logits, gz1, gh1 = kernels.mlp2_forward(x, *self.v.gate)
        s = ops.softmax_forward(logits)
        selected = top_n_indices(s, self.cfg.top_n)
        rep = np.zeros(self.cfg.embed_dim)
        expert_caches = {}
        for i in selected:
            i = int(i)
            y, z1, h1 = kernels.mlp2_forward(x, *self.v.experts[i])
            expert_caches[i] = (y, z1, h1)
            rep += s[i] * y
        rep /= self.cfg.top_n
        return MoeRecord(x, rep, softmax=s, selected=selected,
                         gate_cache=(gz1, gh1), expert_caches=expert_caches)

    def relation_meta(self, support_recs):
        if not support_recs:
            raise NumericError("relation meta needs at least one support pair")
        records = [self.pair_rep(h, t) for h, t in support_recs]
        reps = np.stack([r.rep for r in records])
        M = self.cfg.num_experts
        gate_rows = np.stack([r.gate_row(M) for r in records])
        softmax_rows = np.stack([
            r.softmax if r.softmax is not None else np.zeros(M) for r in records
        ])
        return RelationMeta(reps.mean(axis=0), reps, gate_rows, softmax_rows,
                            records, list(support_recs))

    # -- local adaptation ---------------------------------------------------

    def init_adapt(self, meta, eta_rng=None):
        d = self.cfg.embed_dim
        if self.cfg.eta_init == "gaussian":
            if eta_rng is None:
                raise NumericError("gaussian eta init requires an RNG stream")
            p = self.cfg.eta_init_std * eta_rng.normal(size=(3, d))
            p_h, p_r, p_t = p[0], p[1], p[2]
        else:
            p_h, p_r, p_t = np.zeros(d), np.zeros(d), np.zeros(d)
        return AdaptState(p_h, p_r, p_t, meta.vector.copy())

    def support_loss_and_grads(self, support, adapt):
        """Margin loss over the support set at the current (eta, R), plus its
        gradients with respect to p_h, p_r, p_t and R.

        support: list of (h_rec, t_rec, neg_rec) triples.
        """
        p_h, p_r, p_t, R = adapt.p_h, adapt.p_r, adapt.p_t, adapt.R
        ch, cr, ct = float(p_h @ R), float(p_r @ R), float(p_t @ R)
        R_prime = R if cr == 0.0 else R + cr * R
        oh = None if ch == 0.0 else ch * R
        ot = None if ct == 0.0 else ct * R

        loss = 0.0
        V = np.zeros_like(R)  # sum over active pairs of (u_hat - n_hat)
        for h_rec, t_rec, n_rec in support:
            h = h_rec.vec if oh is None else h_rec.vec + oh
            t = t_rec.vec if ot is None else t_rec.vec + ot
            nv = n_rec.vec if ot is None else n_rec.vec + ot
            u = h + R_prime - t
            w = h + R_prime - nv
            pos = np.linalg.norm(u)
            neg = np.linalg.norm(w)
            term = pos + self.cfg.margin - neg
            if term > 0.0:
                loss += term
                if pos > 0.0:
                    V += u / pos
                if neg > 0.0:
                    V -= w / neg
        dot = float(V @ R)
        g_ph = dot * R
        g_pr = dot * R
        g_pt = -dot * R
        gR = (1.0 + cr + ch - ct) * V + dot * (p_h + p_r - p_t)
        return loss, g_ph, g_pr, g_pt, gR

    def inner_adapt(self, support, adapt, steps=None):
        """Plain gradient steps on the task-local parameters; the global
        parameters are read-only here."""
        if not self.cfg.use_local_adapt:
            return adapt
        lr = self.cfg.inner_lr
        n_steps = self.cfg.inner_steps if steps is None else steps
        for _ in range(n_steps):
            loss, g_ph, g_pr, g_pt, gR = self.support_loss_and_grads(support, adapt)
            if not np.isfinite(loss):
                raise NumericError("non-finite support loss during adaptation")
            adapt.support_losses.append(loss)
            adapt.p_h = adapt.p_h - lr * g_ph
            adapt.p_r = adapt.p_r - lr * g_pr
            adapt.p_t = adapt.p_t - lr * g_pt
            adapt.R = adapt.R - lr * gR
            adapt.steps += 1
        return adapt

    # -- query loss and the outer backward ----------------------------------

    def query_loss(self, queries, adapt):
        """Hinge loss over (h_rec, t_rec, neg_rec) query triples; returns
        (loss, pullbacks) where pullbacks feed backward_outer."""
        p_h, p_r, p_t, R = adapt.p_h, adapt.p_r, adapt.p_t, adapt.R
        ch, cr, ct = float(p_h @ R), float(p_r @ R), float(p_t @ R)
        R_prime = R if cr == 0.0 else R + cr * R
        oh = None if ch == 0.0 else ch * R
        ot = None if ct == 0.0 else ct * R

        loss = 0.0
        V = np.zeros_like(R)
        per_query = []
        for h_rec, t_rec, n_rec in queries:
            h = h_rec.vec if oh is None else h_rec.vec + oh
            t = t_rec.vec if ot is None else t_rec.vec + ot
            nv = n_rec.vec if ot is None else n_rec.vec + ot
            u = h + R_prime - t
            w = h + R_prime - nv
            pos = np.linalg.norm(u)
            neg = np.linalg.norm(w)
            term = pos + self.cfg.margin - neg
            if term > 0.0:
                loss += term
                u_hat = u / pos if pos > 0.0 else np.zeros_like(u)
                n_hat = w / neg if neg > 0.0 else np.zeros_like(w)
                V += u_hat - n_hat
                per_query.append((h_rec, t_rec, n_rec, u_hat, n_hat))
        return loss, (V, per_query, (ch, cr, ct))

    def backward_outer(self, meta, adapt, pullbacks, sink):
        """First-order meta-gradient of the query loss into `sink` grads."""
        V, per_query, (ch, cr, ct) = pullbacks
        R = adapt.R
        for h_rec, t_rec, n_rec, u_hat, n_hat in per_query:
            h_rec.add_grad(u_hat - n_hat)
            t_rec.add_grad(-u_hat)
            n_rec.add_grad(n_hat)
        # d loss / d R through the shared R' and the three projection offsets;
        # the inner-step offsets themselves are constants (first order).
        dot = float(V @ R)
        dR = (1.0 + cr + ch - ct) * V + dot * (adapt.p_h + adapt.p_r - adapt.p_t)
        self._backward_meta(meta, dR, sink)
        self._backward_encodings(sink)

    def _backward_meta(self, meta, dR, sink):
        d = self.cfg.embed_dim
        drep = dR / len(meta.records)
        for moe, (h_rec, t_rec) in zip(meta.records, meta.pairs):
            dx = self._backward_pair_rep(moe, drep, sink)
            h_rec.add_grad(dx[:d])
            t_rec.add_grad(dx[d:])

    def _backward_pair_rep(self, moe, drep, sink):
        if not self.cfg.use_moe:
            z1, h1 = moe.plain_cache
            return kernels.mlp2_backward(
                drep, moe.x, self.v.relmlp[0], self.v.relmlp[2], z1, h1,
                sink.relmlp[0], sink.relmlp[1], sink.relmlp[2], sink.relmlp[3],
            )
        n = self.cfg.top_n
        s = moe.softmax
        dx = np.zeros_like(moe.x)
        ds = np.zeros_like(s)
        for i in moe.selected:
            i = int(i)
            y, z1, h1 = moe.expert_caches[i]
            ds[i] = float(y @ drep) / n
            dy = (s[i] / n) * drep
            dx += kernels.mlp2_backward(
                dy, moe.x, self.v.experts[i][0], self.v.experts[i][2], z1, h1,
                *sink.experts[i],
            )
        dlogits = ops.softmax_backward(ds, s)
        gz1, gh1 = moe.gate_cache
        dx += kernels.mlp2_backward(
            dlogits, moe.x, self.v.gate[0], self.v.gate[2], gz1, gh1,
            *sink.gate,
        )
        return dx

    def _backward_encodings(self, sink):
        d = self.cfg.embed_dim
        for rec in self._enc.values():
            if rec.dvec is None:
                continue
            sink.entity[rec.entity] += rec.dvec
            if not self.cfg.use_neighbor_agg or rec.rows is None or rec.rows.shape[0] == 0:
                continue
            dC = kernels.encode_backward(
                rec.dvec, rec.C, self.v.W, self.v.beta,
                rec.U, rec.Cp, rec.g, sink.W, sink.beta,
            )
            np.add.at(sink.relation, rec.rows[:, 0], dC[:, :d])
            np.add.at(sink.entity, rec.rows[:, 1], dC[:, d:])
