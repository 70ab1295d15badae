"""Experiment grid: trained search variants against each other and baselines.

Each cell is evaluated on the same seeded level set so per-seed results are
paired across variants.  Orderings are decided by either of two rules:
disjoint mean +- standard-error intervals, or a one-sided sign test across
seeds at p < 0.05.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .baseline import run_search as baseline_search
from .config import RunConfig
from .evaluate import (
    EpisodeSetup,
    evaluate_agent,
    mctsnet_agent,
    oracle_agent,
    prior_greedy_agent,
    puct_agent,
    random_agent,
    uct_agent,
)
from .params import ParamStore, save_checkpoint
from .subnets import init_prior_params
from .toytree import calibration_tree
from .training import load_dataset, train_policy_prior
from .trainloop import TrainOutputs, build_net, train_loop

COMPARE_HEADER = [
    "axis", "variant", "seed", "success_ratio", "episodes",
    "mean_steps", "ci_half_width", "train_loss",
]

EVAL_SEED_TAG = 0xE7A1  # shared across variants so levels are paired per seed


@dataclass
class CellResult:
    axis: str
    variant: str
    seed: int
    success_ratio: float
    episodes: int
    mean_steps: float
    ci_half_width: float
    train_loss: float = float("nan")

    def row(self) -> list[str]:
        return [
            self.axis, self.variant, str(self.seed),
            repr(float(self.success_ratio)), str(self.episodes),
            repr(float(self.mean_steps)), repr(float(self.ci_half_width)),
            repr(float(self.train_loss)),
        ]


# ---------------------------------------------------------------------------
# statistics


def mean_se(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size <= 1:
        return float(arr.mean()) if arr.size else float("nan"), float("nan")
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))


def sign_test_p(greater: list[float], lesser: list[float]) -> float:
    """One-sided paired sign test: P(wins >= observed | fair coin), ties dropped."""
    wins = sum(a > b for a, b in zip(greater, lesser))
    losses = sum(a < b for a, b in zip(greater, lesser))
    n = wins + losses
    if n == 0:
        return 1.0
    return sum(math.comb(n, k) for k in range(wins, n + 1)) / 2.0**n


def ordering_holds(better: list[float], worse: list[float]) -> tuple[bool, dict]:
    """Either disjoint standard-error intervals or a significant sign test."""
    mb, seb = mean_se(better)
    mw, sew = mean_se(worse)
    intervals_disjoint = (mb - seb) > (mw + sew) if not (math.isnan(seb) or math.isnan(sew)) else False
    p = sign_test_p(better, worse)
    detail = {
        "mean_better": mb, "se_better": seb, "mean_worse": mw, "se_worse": sew,
        "intervals_disjoint": intervals_disjoint, "sign_test_p": p,
    }
    return bool(intervals_disjoint or p < 0.05), detail


# ---------------------------------------------------------------------------
# cell runners


def _variant_name(model: str, backup: str, policy: str, M: int) -> str:
    return f"mctsnet-{model}-{backup}-{policy}-M{M}"


def ensure_prior_checkpoint(cfg: RunConfig, seed: int, examples) -> str:
    """Train (once per seed) the distilled prior used by modulated cells."""
    path = os.path.join(cfg.out_dir, f"prior_seed{seed}.ckpt")
    if os.path.exists(path):
        return path
    scfg = cfg.subnet_config()
    store = ParamStore()
    init_prior_params(store, scfg, np.random.default_rng([seed, 11]))
    train_policy_prior(
        store, scfg, examples, np.random.default_rng([seed, 12]),
        epochs=cfg.prior_epochs, lr=cfg.prior_lr, entropy_coeff=cfg.entropy_coeff,
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    save_checkpoint(store, path)
    return path


def train_cell(
    cfg: RunConfig, examples, seed: int, model: str, backup: str, policy: str, M: int,
) -> tuple[TrainOutputs, CellResult]:
    name = _variant_name(model, backup, policy, M)
    cell_cfg = replace(
        cfg, seed=seed, model=model, backup=backup, policy=policy, M=M,
        out_dir=os.path.join(cfg.out_dir, f"{name}-seed{seed}"),
        eval_every=0, checkpoint_every=0,
    )
    if cell_cfg.subnet_config().needs_prior:
        cell_cfg.prior_checkpoint = ensure_prior_checkpoint(cfg, seed, examples)
    outputs = train_loop(cell_cfg, examples=examples)

    setup = _setup_from(cfg)
    result = evaluate_agent(
        mctsnet_agent(outputs.net, M), setup, cfg.eval_episodes, seed=(seed, EVAL_SEED_TAG)
    )
    cell = CellResult(
        axis="", variant=name, seed=seed,
        success_ratio=result.success_ratio, episodes=result.episodes,
        mean_steps=result.mean_steps, ci_half_width=result.ci_half_width,
        train_loss=outputs.final_loss,
    )
    return outputs, cell


def _setup_from(cfg: RunConfig) -> EpisodeSetup:
    return EpisodeSetup(
        width=cfg.board_width, height=cfg.board_height, n_boxes=cfg.n_boxes,
        pulls=cfg.pulls, cap=cfg.episode_cap, scheme=cfg.reward_scheme(),
    )


def baseline_cell(cfg: RunConfig, kind: str, seed: int, sims: int = 0, prior_store=None, prior_cfg=None) -> CellResult:
    setup = _setup_from(cfg)
    scheme = cfg.reward_scheme()
    if kind == "uct":
        agent, name = uct_agent(sims, cfg.search_gamma, cfg.uct_c, scheme=scheme), f"uct-{sims}"
    elif kind == "puct":
        agent = puct_agent(prior_store, prior_cfg, sims, cfg.search_gamma, cfg.uct_c, scheme=scheme)
        name = f"puct-{sims}"
    elif kind == "random":
        agent, name = random_agent(), "random"
    elif kind == "prior":
        agent, name = prior_greedy_agent(prior_store, prior_cfg), "prior-greedy"
    elif kind == "oracle":
        agent, name = oracle_agent(cfg.oracle_max_nodes), "oracle"
    else:
        raise ValueError(f"unknown baseline kind {kind!r}")
    result = evaluate_agent(agent, setup, cfg.eval_episodes, seed=(seed, EVAL_SEED_TAG))
    return CellResult(
        axis="baselines", variant=name, seed=seed,
        success_ratio=result.success_ratio, episodes=result.episodes,
        mean_steps=result.mean_steps, ci_half_width=result.ci_half_width,
    )


def bandit_cell(cfg: RunConfig, seed: int, sims: int = 512, runs: int = 200) -> CellResult:
    """Optimal-arm rate of UCT on the calibration tree with a noisy evaluator."""
    toy = calibration_tree()
    gamma = 1.0
    optimal = toy.optimal_action("", gamma)
    hits = 0
    for run in range(runs):
        rng = np.random.default_rng([seed, run, 0xBA4D])
        value = toy.noisy_value_fn(0.5, rng, gamma)
        action, _ = baseline_search("", sims, value, gamma=gamma, c=cfg.uct_c, model=toy.model)
        hits += action == optimal
    from .evaluate import wilson_half_width

    return CellResult(
        axis="bandit", variant=f"uct-bandit-{sims}", seed=seed,
        success_ratio=hits / runs, episodes=runs, mean_steps=float("nan"),
        ci_half_width=wilson_half_width(hits, runs),
    )


# ---------------------------------------------------------------------------
# the grid


def run_compare(cfg: RunConfig, progress=None) -> tuple[list[CellResult], str]:
    """Run the configured axes; returns all rows and the CSV path.

    Axis names: ``model`` (real vs sham), ``backup`` (gated vs mlp),
    ``policy`` (modulated vs uniform), ``msweep`` (trained at each M),
    ``baselines`` (classic searchers and floor/ceiling agents), ``bandit``
    (UCT calibration on the toy tree).
    """
    axes = [a.strip() for a in cfg.axes.split(",") if a.strip()]
    seeds = list(range(cfg.n_seeds))
    examples = load_dataset(cfg.dataset) if cfg.dataset else None
    os.makedirs(cfg.out_dir, exist_ok=True)

    say = progress or (lambda msg: None)
    trained: dict[tuple, CellResult] = {}

    def trained_cell(seed, model, backup, policy, M) -> CellResult:
        key = (seed, model, backup, policy, M)
        if key not in trained:
            say(f"training {_variant_name(model, backup, policy, M)} seed {seed}")
            _, cell = train_cell(cfg, examples, seed, model, backup, policy, M)
            trained[key] = cell
        return trained[key]

    rows: list[CellResult] = []

    def add(axis: str, cell: CellResult):
        rows.append(replace(cell, axis=axis))

    for axis in axes:
        if axis == "model":
            for seed in seeds:
                add(axis, trained_cell(seed, "real", cfg.backup, cfg.policy, cfg.M))
                add(axis, trained_cell(seed, "sham", cfg.backup, cfg.policy, cfg.M))
        elif axis == "backup":
            for seed in seeds:
                add(axis, trained_cell(seed, cfg.model, "gated", cfg.policy, cfg.M))
                add(axis, trained_cell(seed, cfg.model, "mlp", cfg.policy, cfg.M))
        elif axis == "policy":
            for seed in seeds:
                add(axis, trained_cell(seed, cfg.model, cfg.backup, cfg.policy, cfg.M))
                add(axis, trained_cell(seed, cfg.model, cfg.backup, "uniform", cfg.M))
        elif axis == "msweep":
            m_values = [int(v) for v in cfg.m_sweep.split(",") if v.strip()]
            for seed in seeds:
                for m in m_values:
                    add(axis, trained_cell(seed, cfg.model, cfg.backup, cfg.policy, m))
        elif axis == "baselines":
            sims_list = [int(v) for v in cfg.baseline_sims.split(",") if v.strip()]
            prior_store = prior_cfg = None
            for seed in seeds:
                say(f"baselines seed {seed}")
                if examples is not None:
                    from .params import read_checkpoint

                    path = ensure_prior_checkpoint(cfg, seed, examples)
                    prior_cfg = cfg.subnet_config()
                    prior_store = ParamStore()
                    init_prior_params(prior_store, prior_cfg, np.random.default_rng(0))
                    entries, _ = read_checkpoint(path)
                    for name, arr in entries.items():
                        if name.startswith("prior."):
                            prior_store.values[name][...] = arr
                for sims in sims_list:
                    add(axis, baseline_cell(cfg, "uct", seed, sims))
                    if prior_store is not None:
                        add(axis, baseline_cell(cfg, "puct", seed, sims, prior_store, prior_cfg))
                add(axis, baseline_cell(cfg, "random", seed))
                add(axis, baseline_cell(cfg, "oracle", seed))
                if prior_store is not None:
                    add(axis, baseline_cell(cfg, "prior", seed, prior_store=prior_store, prior_cfg=prior_cfg))
        elif axis == "bandit":
            for seed in seeds:
                add(axis, bandit_cell(cfg, seed))
        else:
            raise ValueError(f"unknown compare axis {axis!r}")

    csv_path = os.path.join(cfg.out_dir, "compare.csv")
    write_compare_csv(rows, csv_path)
    return rows, csv_path


def write_compare_csv(rows: list[CellResult], path: str) -> None:
    """Per-cell rows followed by per-variant aggregates (seed column 'mean';
    the ci_half_width column then carries the standard error across seeds)."""
    groups: dict[tuple[str, str], list[CellResult]] = {}
    for row in rows:
        groups.setdefault((row.axis, row.variant), []).append(row)

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(COMPARE_HEADER) + "\n")
        for row in rows:
            fh.write(",".join(row.row()) + "\n")
        for (axis, variant), members in groups.items():
            mean, se = mean_se([m.success_ratio for m in members])
            steps = [m.mean_steps for m in members if not math.isnan(m.mean_steps)]
            losses = [m.train_loss for m in members if not math.isnan(m.train_loss)]
            agg = CellResult(
                axis=axis, variant=variant, seed=-1,
                success_ratio=mean, episodes=sum(m.episodes for m in members),
                mean_steps=float(np.mean(steps)) if steps else float("nan"),
                ci_half_width=se if not math.isnan(se) else 0.0,
                train_loss=float(np.mean(losses)) if losses else float("nan"),
            )
            fields = agg.row()
            fields[2] = "mean"
            fh.write(",".join(fields) + "\n")
