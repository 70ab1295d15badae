"""Running trained searchers (and baselines) as agents on fresh levels.

An episode: generate a level, act until solved or the step cap, count a
solve on the final step as a success.  Success ratios come with a Wilson
95% half-width since episode counts are small at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Graph
from .baseline import heuristic_value_fn, reuse_subtree, run_search as baseline_search
from .search import MctsNet, replan_reroot
from .sokoban import DEFAULT_REWARDS, generate_level, transition
from .solver import solve_oracle
from .subnets import SubnetConfig, prior_probs

WILSON_Z = 1.959963984540054  # 95%


def wilson_half_width(successes: int, n: int, z: float = WILSON_Z) -> float:
    if n == 0:
        return 0.0
    p = successes / n
    denom = 1.0 + z * z / n
    half = (z / denom) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return half


@dataclass
class EvalResult:
    success_ratio: float
    episodes: int
    mean_steps: float  # among solved episodes; nan when none solved
    ci_half_width: float

    def __str__(self):
        return (
            f"{self.success_ratio:.3f} +- {self.ci_half_width:.3f} "
            f"({self.episodes} episodes, {self.mean_steps:.1f} mean steps to solve)"
        )


@dataclass
class EpisodeSetup:
    width: int = 7
    height: int = 7
    n_boxes: int = 1
    pulls: int = 30
    cap: int = 100
    scheme: object = DEFAULT_REWARDS


def evaluate_agent(
    act: Callable,
    setup: EpisodeSetup,
    n_episodes: int,
    seed: int | tuple,
) -> EvalResult:
    """Measure an agent over fresh generated levels.

    ``act`` is a factory: it receives the level and a per-episode rng and
    returns a step function ``step(state) -> action``.
    """
    seed_parts = seed if isinstance(seed, tuple) else (seed,)
    successes = 0
    steps_when_solved = []
    for episode in range(n_episodes):
        level_rng = np.random.default_rng([*seed_parts, episode, 0x5EED])
        agent_rng = np.random.default_rng([*seed_parts, episode, 0xA9E7])
        level = generate_level(setup.width, setup.height, setup.n_boxes, level_rng, pulls=setup.pulls)
        step_fn = act(level, agent_rng)
        state = level
        for step in range(1, setup.cap + 1):
            action = step_fn(state)
            state, _, done = transition(state, action, setup.scheme)
            if done:
                successes += 1
                steps_when_solved.append(step)
                break
    ratio = successes / n_episodes
    return EvalResult(
        success_ratio=ratio,
        episodes=n_episodes,
        mean_steps=float(np.mean(steps_when_solved)) if steps_when_solved else float("nan"),
        ci_half_width=wilson_half_width(successes, n_episodes),
    )


# ---------------------------------------------------------------------------
# agent factories


def mctsnet_agent(net: MctsNet, M: int):
    """Search, act on the readout argmax, keep the chosen subtree."""

    def factory(level, rng):
        holder = {"tree": None}

        def step(state):
            g = Graph(net.store)
            if holder["tree"] is None:
                res = net.run_search(g, state, M=M, rng=rng)
            else:
                res = net.run_search(g, M=M, rng=rng, tree=holder["tree"])
            action = int(np.argmax(res.probs))
            holder["tree"] = replan_reroot(res.tree, action)
            return action

        return step

    return factory


def uct_agent(sims: int, gamma: float = 0.99, c: float = 1.25, value_fn=None, scheme=DEFAULT_REWARDS):
    value_fn = value_fn or heuristic_value_fn(scheme, gamma)

    def factory(level, rng):
        holder = {"tree": None}

        def step(state):
            action, tree = baseline_search(
                state, sims, value_fn, gamma=gamma, c=c, tree=holder["tree"]
            )
            holder["tree"] = reuse_subtree(tree, action)
            return action

        return step

    return factory


def puct_agent(
    store,
    cfg: SubnetConfig,
    sims: int,
    gamma: float = 0.99,
    c_puct: float = 1.25,
    value_fn=None,
    scheme=DEFAULT_REWARDS,
):
    """PUCT with the distilled policy prior and a value function."""
    value_fn = value_fn or heuristic_value_fn(scheme, gamma)

    def prior_fn(state):
        return list(prior_probs(store, cfg, state))

    def factory(level, rng):
        holder = {"tree": None}

        def step(state):
            action, tree = baseline_search(
                state, sims, value_fn, gamma=gamma, prior_fn=prior_fn, c_puct=c_puct,
                tree=holder["tree"],
            )
            holder["tree"] = reuse_subtree(tree, action)
            return action

        return step

    return factory


def random_agent():
    def factory(level, rng):
        def step(state):
            return int(rng.integers(4))

        return step

    return factory


def prior_greedy_agent(store, cfg: SubnetConfig):
    """Model-free baseline: act on the distilled prior's argmax."""

    def factory(level, rng):
        def step(state):
            return int(np.argmax(prior_probs(store, cfg, state)))

        return step

    return factory


def oracle_agent(max_nodes: int = 200_000):
    """Replays the exact solver's plan; the ceiling for any agent."""

    def factory(level, rng):
        plan = solve_oracle(level, max_nodes=max_nodes) or []
        position = {"i": 0}

        def step(state):
            if position["i"] < len(plan):
                action = plan[position["i"]]
                position["i"] += 1
                return action
            return 0

        return step

    return factory
