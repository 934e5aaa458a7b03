"""Meta-training and meta-testing loops.

One outer step: sample a batch of episodes from the train relations, run each
through the inner adaptation and query loss, accumulate first-order outer
gradients into per-task buffers, merge them in slot order (so results do not
depend on the worker count), then take one Adam step. Dev evaluation every
eval_every steps drives early stopping on MRR; the best parameters win.

Everything volatile (wall-clock) lives in timings.json; report.json and
log.tsv are byte-stable functions of (dataset, config, seed).
"""

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .episode import build_adapted, materialize, rank_queries, run_task
from .errors import CheckpointError, ConfigError, NumericError
from .evaluator import aggregate_metrics, gate_profile, rank_from_scores
from .graph import classify_relation
from .kernels import BACKEND
from .model import TaskContext, init_params, value_views
from .optim import Adam
from .params import load_checkpoint, save_checkpoint
from .sampling import (TAG_EVAL, TAG_NEGATIVE, TAG_TASK, NeighborSampler,
                       derive_rng, eval_task, sample_task)

_MAX_CONSECUTIVE_SKIPS = 10


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)  # mean query loss per step
    dev_history: list = field(default_factory=list)  # [step, dev_mrr]
    best_step: int = 0
    best_dev_mrr: float = None
    final_dev: dict = None
    final_test: dict = None
    skipped_tasks: int = 0
    steps_run: int = 0
    config: dict = None

    def to_dict(self):
        return {
            "losses": [None if not np.isfinite(x) else x for x in self.losses],
            "dev_history": self.dev_history,
            "best_step": self.best_step,
            "best_dev_mrr": self.best_dev_mrr,
            "final_dev": self.final_dev,
            "final_test": self.final_test,
            "skipped_tasks": self.skipped_tasks,
            "steps_run": self.steps_run,
            "config": self.config,
        }


def meta_train(graph, split, run_cfg: RunConfig, out_dir=None, log=None):
    """Run the outer loop; returns (TrainReport, store) with the store holding
    the best-dev parameters."""
    run_cfg.validate()
    mcfg, tcfg, seed = run_cfg.model, run_cfg.train, run_cfg.seed
    if not split.train:
        raise ConfigError("dataset has no train tasks")

    store = init_params(mcfg, graph, seed)
    sampler = NeighborSampler(graph, mcfg.neighbor_cap, seed)
    adam = Adam(store, lr=tcfg.outer_lr, beta1=tcfg.adam_beta1,
                beta2=tcfg.adam_beta2, eps=tcfg.adam_eps)

    report = TrainReport(config=run_cfg.to_dict())
    timings = []
    best_values = store.copy_values()
    best_mrr = None
    evals_since_best = 0
    consecutive_skips = 0

    def emit(msg):
        if log:
            log(msg)

    def dev_eval():
        if not split.dev:
            return None
        metrics, _ = meta_test(graph, split.dev, store, mcfg, tcfg.shots, seed,
                               eval_query_cap=tcfg.eval_query_cap)
        return metrics.overall.mrr

    log_rows = []
    pool = ThreadPoolExecutor(max_workers=tcfg.workers) if tcfg.workers > 1 else None
    try:
        for step in range(1, tcfg.max_steps + 1):
            t0 = time.perf_counter()
            episodes = []
            for slot in range(tcfg.meta_batch_tasks):
                task_rng = derive_rng(seed, TAG_TASK, step, slot)
                task = sample_task(split.train, tcfg.shots, tcfg.query_batch, task_rng)
                neg_rng = derive_rng(seed, TAG_NEGATIVE, step, slot)
                episodes.append(materialize(graph, task, neg_rng, mcfg))

            def one(slot_episode):
                slot, episode = slot_episode
                buffers = store.new_grad_buffers()
                eta_rng = derive_rng(seed, TAG_NEGATIVE, step, slot, 7)
                result = run_task(store, mcfg, sampler, episode,
                                  eta_rng=eta_rng, buffers=buffers)
                return result, buffers

            jobs = list(enumerate(episodes))
            outcomes = list(pool.map(one, jobs)) if pool else [one(j) for j in jobs]

            losses = []
            for result, buffers in outcomes:  # merge in slot order
                if result.skipped:
                    report.skipped_tasks += 1
                    consecutive_skips += 1
                    if consecutive_skips > _MAX_CONSECUTIVE_SKIPS:
                        raise NumericError(
                            f"aborting: {consecutive_skips} consecutive tasks "
                            f"skipped (last reason: {result.reason})"
                        )
                    continue
                consecutive_skips = 0
                losses.append(result.query_loss)
                store.accumulate(buffers)

            if losses:
                adam.step()
            store.zero_grads()
            step_loss = float(np.mean(losses)) if losses else float("nan")
            report.losses.append(step_loss)
            report.steps_run = step
            timings.append(time.perf_counter() - t0)

            dev_mrr = None
            if step % tcfg.eval_every == 0:
                dev_mrr = dev_eval()
                if dev_mrr is not None:
                    report.dev_history.append([step, dev_mrr])
                    if best_mrr is None or dev_mrr > best_mrr:
                        best_mrr = dev_mrr
                        report.best_step = step
                        best_values = store.copy_values()
                        evals_since_best = 0
                        if out_dir:
                            _write_ckpt(os.path.join(out_dir, "best.ckpt"),
                                        store, adam, run_cfg, step)
                    else:
                        evals_since_best += 1
                    emit(f"step {step}: loss={step_loss:.4f} dev_mrr={dev_mrr:.4f}")
            log_rows.append((step, step_loss, dev_mrr))
            if best_mrr is not None and evals_since_best >= tcfg.patience:
                emit(f"early stop at step {step}: no dev improvement in "
                     f"{tcfg.patience} evaluations")
                break
    finally:
        if pool:
            pool.shutdown()

    report.best_dev_mrr = best_mrr
    if out_dir:
        _write_ckpt(os.path.join(out_dir, "last.ckpt"), store, adam, run_cfg,
                    report.steps_run)

    # Final metrics are computed at the best-dev parameters.
    store.load_values(best_values)
    if split.dev:
        dev_metrics, _ = meta_test(graph, split.dev, store, mcfg, tcfg.shots, seed,
                                   eval_query_cap=tcfg.eval_query_cap)
        report.final_dev = dev_metrics.to_dict()
        if report.best_dev_mrr is None:
            report.best_dev_mrr = dev_metrics.overall.mrr
    if split.test:
        test_metrics, _ = meta_test(graph, split.test, store, mcfg, tcfg.shots, seed,
                                    eval_query_cap=tcfg.eval_query_cap)
        report.final_test = test_metrics.to_dict()

    if out_dir:
        if not os.path.exists(os.path.join(out_dir, "best.ckpt")):
            _write_ckpt(os.path.join(out_dir, "best.ckpt"), store, adam, run_cfg,
                        report.best_step)
        run_cfg.write(os.path.join(out_dir, "config.json"))
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")
        with open(os.path.join(out_dir, "log.tsv"), "w", encoding="utf-8") as fh:
            fh.write("step\tquery_loss\tdev_mrr\n")
            for step, loss, mrr in log_rows:
                loss_s = "" if not np.isfinite(loss) else repr(loss)
                mrr_s = "" if mrr is None else repr(mrr)
                fh.write(f"{step}\t{loss_s}\t{mrr_s}\n")
        with open(os.path.join(out_dir, "timings.json"), "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "steps": len(timings),
                    "total_s": sum(timings),
                    "mean_step_s": float(np.mean(timings)) if timings else None,
                    "kernel_backend": BACKEND,
                },
                fh, indent=1,
            )
            fh.write("\n")
    return report, store


def meta_test(graph, partition, store, mcfg, shots, seed, eval_query_cap=None,
              inner_steps=None, collect_gates=False):
    """Frozen-parameter evaluation: adapt locally on each relation's support,
    rank every query's candidates, aggregate MRR/Hits plus the cardinality
    breakdown. Returns (MetricsTable, details dict)."""
    sampler = NeighborSampler(graph, mcfg.neighbor_cap, seed)
    values = value_views(store, mcfg)
    results = []
    categories = {}
    profiles = []
    skipped_relations = []
    n_steps = mcfg.test_inner_steps if inner_steps is None else inner_steps

    for rel_id in sorted(partition):
        data = partition[rel_id]
        task = eval_task(data, shots, query_cap=eval_query_cap)
        if task is None:
            skipped_relations.append(data.name)
            continue
        neg_rng = derive_rng(seed, TAG_EVAL, rel_id)
        episode = materialize(graph, task, neg_rng, mcfg, with_query_negs=False)
        ctx = TaskContext(values, mcfg, sampler, keep_caches=False)
        eta_rng = derive_rng(seed, TAG_EVAL, rel_id, 7)
        meta, adapt = build_adapted(ctx, episode, eta_rng=eta_rng,
                                    inner_steps=n_steps)
        categories[rel_id] = classify_relation(graph, rel_id, data.pairs).category
        if collect_gates:
            profiles.append(gate_profile(data.name, meta))
        for qi, true_tail, cand_ids, scores in rank_queries(ctx, episode, adapt):
            results.append(rank_from_scores(cand_ids, scores, true_tail,
                                            relation_id=rel_id, query_index=qi))

    metrics = aggregate_metrics(results, categories)
    details = {
        "categories": {partition[rid].name: cat for rid, cat in categories.items()},
        "skipped_relations": skipped_relations,
        "profiles": profiles,
        "n_queries": len(results),
    }
    return metrics, details


def _write_ckpt(path, store, adam, run_cfg, step):
    save_checkpoint(path, store, meta={"config": run_cfg.to_dict(), "step": step},
                    adam_state=adam)


def restore_run(ckpt_path, graph):
    """Load a checkpoint against a freshly built store; returns
    (store, RunConfig, manifest)."""
    values, manifest, _ = load_checkpoint(ckpt_path)
    cfg_dict = manifest.get("meta", {}).get("config")
    if cfg_dict is None:
        raise CheckpointError(f"{ckpt_path} carries no run config")
    run_cfg = RunConfig.from_dict(cfg_dict)
    store = init_params(run_cfg.model, graph, run_cfg.seed)
    store.load_values(values)
    return store, run_cfg, manifest
