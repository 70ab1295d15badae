"""Command-line harness.

Subcommands: gen-levels, gen-dataset, train-prior, train, eval, compare,
gradcheck.  Every RunConfig key is exposed as a ``--key`` flag and overrides
values read from ``--config`` (a key=value file).  Exit codes: 0 success,
1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .gradcheck import grad_check
from .params import ParamStore, load_checkpoint, read_checkpoint, save_checkpoint
from .sokoban import generate_level, save_levels
from .subnets import init_prior_params
from .solver import solve_oracle


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we map usage to 1
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _add_config_flags(parser: _Parser):
    parser.add_argument("--config", default=None, help="key=value config file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, default=None, metavar=f.name.upper(), dest=f"cfg_{f.name}")


def _overrides(args) -> dict[str, str]:
    out = {}
    for f in fields(RunConfig):
        raw = getattr(args, f"cfg_{f.name}", None)
        if raw is not None:
            out[f.name] = raw
    return out


def build_parser() -> _Parser:
    parser = _Parser(prog="mctsnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    commands = {
        "gen-levels": "generate solvable levels into an XSB file",
        "gen-dataset": "generate a labelled dataset (JSON lines) via the exact solver",
        "train-prior": "distill the dataset into the model-free policy prior",
        "train": "train the search network per the config",
        "eval": "run a checkpoint (or a baseline agent) on fresh levels",
        "compare": "train/evaluate the configured comparison grid",
        "gradcheck": "verify analytic gradients against central differences",
    }
    parsers = {}
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)
        parsers[name] = p

    parsers["gen-levels"].add_argument("--n", type=int, default=None, help="level count")
    parsers["gen-levels"].add_argument("--out", default=None, help="output file")
    parsers["gen-dataset"].add_argument("--n", type=int, default=None, help="level count")
    parsers["gen-dataset"].add_argument("--out", default=None, help="output file")
    parsers["train-prior"].add_argument("--out", default=None, help="checkpoint path")
    parsers["eval"].add_argument("--checkpoint", default=None)
    parsers["eval"].add_argument(
        "--agent", default="mctsnet",
        choices=["mctsnet", "uct", "puct", "random", "prior", "oracle"],
    )
    parsers["eval"].add_argument("--sims", type=int, default=25, help="simulations for uct/puct")
    parsers["gradcheck"].add_argument("--tolerance", type=float, default=1e-4)
    parsers["gradcheck"].add_argument("--samples", type=int, default=120)
    return parser


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        cfg = load_config(args.config, _overrides(args))
        return _dispatch(args, cfg)
    except (UsageError, ConfigError) as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # runtime failure
        print(f"error: {err}", file=sys.stderr)
        return 2


def _dispatch(args, cfg: RunConfig) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    command = args.command

    if command == "gen-levels":
        n = args.n if args.n is not None else cfg.n_levels
        out = args.out or os.path.join(cfg.out_dir, "levels.xsb")
        rng = np.random.default_rng(cfg.seed)
        levels, failures = [], 0
        for _ in range(n):
            level = generate_level(cfg.board_width, cfg.board_height, cfg.n_boxes, rng, pulls=cfg.pulls)
            if solve_oracle(level, max_nodes=cfg.oracle_max_nodes) is None:
                failures += 1
            levels.append(level)
        save_levels(levels, out)
        print(f"wrote {len(levels)} levels to {out}; oracle failure rate {failures / n:.3f}")
        return 0

    if command == "gen-dataset":
        from .training import generate_dataset

        n = args.n if args.n is not None else cfg.n_levels
        out = args.out or os.path.join(cfg.out_dir, "dataset.jsonl")
        stats = generate_dataset(
            out, n, np.random.default_rng(cfg.seed),
            width=cfg.board_width, height=cfg.board_height, n_boxes=cfg.n_boxes,
            pulls=cfg.pulls, oracle_max_nodes=cfg.oracle_max_nodes,
        )
        print(
            f"wrote {stats.examples} examples from {stats.solved}/{stats.levels} solved levels "
            f"to {out}; oracle failure rate {stats.unsolved_rate:.3f}"
        )
        return 0

    if command == "train-prior":
        from .training import load_dataset, train_policy_prior

        if not cfg.dataset:
            raise UsageError("train-prior needs --dataset")
        out = args.out or os.path.join(cfg.out_dir, "prior.ckpt")
        examples = load_dataset(cfg.dataset)
        scfg = cfg.subnet_config()
        store = ParamStore()
        init_prior_params(store, scfg, np.random.default_rng([cfg.seed, 11]))
        losses = train_policy_prior(
            store, scfg, examples, np.random.default_rng([cfg.seed, 12]),
            epochs=cfg.prior_epochs, lr=cfg.prior_lr, entropy_coeff=cfg.entropy_coeff,
        )
        save_checkpoint(store, out)
        tail = float(np.mean(losses[-100:])) if losses else float("nan")
        print(f"trained prior on {len(examples)} examples; tail loss {tail:.4f}; wrote {out}")
        return 0

    if command == "train":
        from .trainloop import train_loop

        if not cfg.dataset:
            raise UsageError("train needs --dataset")
        outputs = train_loop(cfg)
        success = "n/a" if outputs.final_success is None else f"{outputs.final_success:.3f}"
        print(
            f"trained to step {outputs.store.step}; final loss {outputs.final_loss:.4f}; "
            f"last eval success {success}; metrics {outputs.metrics_path}; "
            f"checkpoint {outputs.checkpoint_path}"
        )
        return 0

    if command == "eval":
        return _cmd_eval(args, cfg)

    if command == "compare":
        from .compare import run_compare

        rows, csv_path = run_compare(cfg, progress=lambda msg: print(msg, flush=True))
        print(f"wrote {len(rows)} cells (plus aggregates) to {csv_path}")
        return 0

    if command == "gradcheck":
        from .gradprobes import frozen_search_case, subnetwork_cases

        failed = False
        for name, store, builder, param_names in subnetwork_cases():
            report = grad_check(
                store, builder, tolerance=args.tolerance,
                n_samples=args.samples, param_names=param_names,
            )
            print(f"{name}: {report}")
            failed |= not report.passed
        for backup in ("gated", "mlp"):
            store, builder = frozen_search_case(M=4, backup=backup)
            report = grad_check(store, builder, tolerance=args.tolerance, n_samples=args.samples)
            print(f"frozen-search-{backup}: {report}")
            failed |= not report.passed
        if failed:
            raise RuntimeError("gradient check failed")
        return 0

    raise UsageError(f"unknown command {command!r}")


def _cmd_eval(args, cfg: RunConfig) -> int:
    from .compare import EVAL_SEED_TAG, _setup_from
    from .evaluate import (
        evaluate_agent, mctsnet_agent, oracle_agent, prior_greedy_agent,
        puct_agent, random_agent, uct_agent,
    )
    from .trainloop import build_net

    setup = _setup_from(cfg)
    scheme = cfg.reward_scheme()

    if args.agent == "mctsnet":
        if not args.checkpoint:
            raise UsageError("eval --agent mctsnet needs --checkpoint")
        net = build_net(cfg)
        load_checkpoint(net.store, args.checkpoint)
        agent = mctsnet_agent(net, cfg.M)
    elif args.agent == "uct":
        agent = uct_agent(args.sims, cfg.search_gamma, cfg.uct_c, scheme=scheme)
    elif args.agent in ("puct", "prior"):
        if not args.checkpoint:
            raise UsageError(f"eval --agent {args.agent} needs --checkpoint with prior.* entries")
        scfg = cfg.subnet_config()
        store = ParamStore()
        init_prior_params(store, scfg, np.random.default_rng(0))
        entries, _ = read_checkpoint(args.checkpoint)
        loaded = False
        for name, arr in entries.items():
            if name.startswith("prior."):
                if store.values[name].shape != arr.shape:
                    raise ValueError(f"shape mismatch for {name!r} in {args.checkpoint}")
                store.values[name][...] = arr
                loaded = True
        if not loaded:
            raise ValueError(f"{args.checkpoint} has no prior.* entries")
        if args.agent == "puct":
            agent = puct_agent(store, scfg, args.sims, cfg.search_gamma, cfg.uct_c, scheme=scheme)
        else:
            agent = prior_greedy_agent(store, scfg)
    elif args.agent == "random":
        agent = random_agent()
    else:
        agent = oracle_agent(cfg.oracle_max_nodes)

    result = evaluate_agent(agent, setup, cfg.eval_episodes, seed=(cfg.seed, EVAL_SEED_TAG))
    print(
        f"success_ratio={result.success_ratio:.4f} episodes={result.episodes} "
        f"mean_steps={result.mean_steps:.2f} ci_half_width={result.ci_half_width:.4f}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
