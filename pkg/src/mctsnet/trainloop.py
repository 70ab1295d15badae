"""Full training runs: shuffled single-example SGD with periodic evaluation.

Every run is a pure function of its seed when ``workers == 1``: data order,
simulation sampling, and evaluation levels are all derived from the seed
and the step index, so a resumed run continues the exact metric stream an
uninterrupted run would have produced.

With ``workers > 1``, each worker differentiates its own example against a
frozen snapshot of the parameters and the accumulated batch is applied by a
single writer.  That changes the SGD trajectory (gradients are computed at
the snapshot rather than after each intermediate update), so determinism
is only promised for one worker.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .evaluate import EpisodeSetup, evaluate_agent, mctsnet_agent
from .params import ParamStore, load_checkpoint, read_checkpoint, save_checkpoint, sgd_step
from .search import MctsNet, real_model, sham_model
from .subnets import init_params
from .training import (
    LabeledExample,
    build_surrogate,
    load_dataset,
    loss_and_traces,
    train_policy_prior,
)


def fmt(x) -> str:
    """Stable, shortest round-trip float formatting for CSV determinism."""
    return repr(float(x))


def metrics_header(M: int) -> list[str]:
    return ["step", "loss", *[f"l_{m}" for m in range(1, M + 1)], "success_ratio", "grad_norm", "entropy"]


@dataclass
class TrainOutputs:
    metrics_path: str
    checkpoint_path: str
    final_loss: float
    final_success: float | None
    store: ParamStore
    net: MctsNet


def build_net(cfg: RunConfig, store: ParamStore | None = None) -> MctsNet:
    scfg = cfg.subnet_config()
    if store is None:
        store = ParamStore()
        init_params(store, scfg, np.random.default_rng([cfg.seed, 0]))
    model = real_model(cfg.reward_scheme()) if cfg.model == "real" else sham_model()
    return MctsNet(scfg, store, model=model)


def load_prior_subset(store: ParamStore, path: str) -> None:
    """Copy ``prior.*`` entries from a checkpoint into an existing store."""
    entries, _ = read_checkpoint(path)
    found = False
    for name, arr in entries.items():
        if not name.startswith("prior."):
            continue
        if name not in store.values:
            raise ValueError(f"store has no parameter {name!r} to receive the prior checkpoint")
        if store.values[name].shape != arr.shape:
            raise ValueError(f"prior shape mismatch for {name!r}")
        store.values[name][...] = arr.astype(store.dtype)
        found = True
    if not found:
        raise ValueError(f"{path} contains no prior.* entries")


def _example_for_step(examples: list[LabeledExample], seed: int, step: int) -> LabeledExample:
    n = len(examples)
    epoch, pos = divmod(step, n)
    perm = np.random.default_rng([seed, 2, epoch]).permutation(n)
    return examples[int(perm[pos])]


def _worker_grads(net: MctsNet, values, example, M, credit, rng_seed):
    """Gradient of one example against a frozen value snapshot."""
    shadow = ParamStore(net.store.dtype)
    shadow.values = values
    shadow.grads = {k: np.zeros_like(v) for k, v in values.items()}
    shadow_net = MctsNet(net.cfg, shadow, model=net.model)
    lres = loss_and_traces(shadow_net, example, M, np.random.default_rng(rng_seed))
    lres.graph.backward(build_surrogate(lres, credit))
    return shadow.grads, lres


def train_loop(cfg: RunConfig, examples: list[LabeledExample] | None = None) -> TrainOutputs:
    """Train per the config; writes metrics CSV and checkpoints under out_dir."""
    if examples is None:
        if not cfg.dataset:
            raise ValueError("config needs a dataset path (or pass examples directly)")
        examples = load_dataset(cfg.dataset)
    if not examples:
        raise ValueError("dataset is empty")

    os.makedirs(cfg.out_dir, exist_ok=True)
    scfg = cfg.subnet_config()
    net = build_net(cfg)
    store = net.store

    if cfg.resume:
        load_checkpoint(store, cfg.resume)
    elif scfg.needs_prior:
        if cfg.prior_checkpoint:
            load_prior_subset(store, cfg.prior_checkpoint)
        elif cfg.prior_epochs > 0:
            train_policy_prior(
                store, scfg, examples, np.random.default_rng([cfg.seed, 1]),
                epochs=cfg.prior_epochs, lr=cfg.prior_lr, entropy_coeff=cfg.entropy_coeff,
            )
            store.step = 0  # distillation is a warm start, not part of the run's budget

    credit = cfg.credit()
    setup = EpisodeSetup(
        width=cfg.board_width, height=cfg.board_height, n_boxes=cfg.n_boxes,
        pulls=cfg.pulls, cap=cfg.episode_cap, scheme=cfg.reward_scheme(),
    )

    metrics_path = os.path.join(cfg.out_dir, "metrics.csv")
    ckpt_path = os.path.join(cfg.out_dir, "model.ckpt")
    mode = "a" if cfg.resume and os.path.exists(metrics_path) else "w"
    final_loss, final_success = float("nan"), None

    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        with open(metrics_path, mode, encoding="utf-8") as mf:
            if mode == "w":
                mf.write(",".join(metrics_header(cfg.M)) + "\n")
            while store.step < cfg.steps:
                step = store.step  # 0-based position; row logs step+1
                if pool is None:
                    example = _example_for_step(examples, cfg.seed, step)
                    rng = np.random.default_rng([cfg.seed, 3, step])
                    lres = loss_and_traces(net, example, cfg.M, rng)
                    lres.graph.backward(build_surrogate(lres, credit))
                    batch_results = [lres]
                else:
                    snapshot = store.snapshot()
                    futures = [
                        pool.submit(
                            _worker_grads, net, snapshot,
                            _example_for_step(examples, cfg.seed, step + w),
                            cfg.M, credit, [cfg.seed, 3, step + w],
                        )
                        for w in range(min(cfg.workers, cfg.steps - store.step))
                    ]
                    batch_results = []
                    for fut in futures:
                        grads, lres = fut.result()
                        for name, g in grads.items():
                            store.grads[name] += g
                        batch_results.append(lres)

                grad_norm = store.grad_norm()
                sgd_step(store, cfg.lr)
                if pool is not None:
                    store.step += len(batch_results) - 1  # one optimizer step consumed N examples

                losses = [r.loss for r in batch_results]
                per_sim = np.mean([r.per_sim_losses for r in batch_results], axis=0)
                final_loss = float(np.mean(losses))
                ent_terms = [
                    -float(ne.value)
                    for r in batch_results
                    for t in r.search.traces
                    for ne in t.negentropy_nodes
                ]
                entropy = float(np.mean(ent_terms)) if ent_terms else 0.0

                success_field = ""
                if cfg.eval_every and store.step % cfg.eval_every == 0:
                    result = evaluate_agent(
                        mctsnet_agent(net, cfg.M), setup, cfg.eval_episodes,
                        seed=(cfg.seed, 4, store.step),
                    )
                    final_success = result.success_ratio
                    success_field = fmt(result.success_ratio)

                row = [str(store.step), fmt(final_loss), *[fmt(v) for v in per_sim],
                       success_field, fmt(grad_norm), fmt(entropy)]
                mf.write(",".join(row) + "\n")

                if cfg.checkpoint_every and store.step % cfg.checkpoint_every == 0:
                    save_checkpoint(store, ckpt_path)
    finally:
        if pool is not None:
            pool.shutdown()

    save_checkpoint(store, ckpt_path)
    return TrainOutputs(
        metrics_path=metrics_path, checkpoint_path=ckpt_path,
        final_loss=final_loss, final_success=final_success, store=store, net=net,
    )
