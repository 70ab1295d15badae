"""Tiny deterministic tree MDPs with known optima, for search calibration.

States are action strings ("" is the root, "21" is action 2 then action 1).
Rewards sit on edges; episodes end at a fixed depth.  The exact optimal
action is computable by exhaustive backup, which makes these trees handy
as ground truth when checking that a search implementation concentrates
its visits correctly, including under a noisy value function.
"""

from __future__ import annotations

import numpy as np


class ToyTree:
    def __init__(self, depth: int, rewards: dict[str, float], n_actions: int = 4):
        self.depth = depth
        self.rewards = rewards
        self.n_actions = n_actions

    def model(self, state: str, action: int):
        nxt = state + str(action)
        reward = self.rewards.get(nxt, 0.0)
        return nxt, reward, len(nxt) >= self.depth

    def true_value(self, state: str, gamma: float) -> float:
        if len(state) >= self.depth:
            return 0.0
        best = -np.inf
        for a in range(self.n_actions):
            nxt, r, _ = self.model(state, a)
            best = max(best, r + gamma * self.true_value(nxt, gamma))
        return best

    def optimal_action(self, state: str, gamma: float) -> int:
        scores = []
        for a in range(self.n_actions):
            nxt, r, _ = self.model(state, a)
            scores.append(r + gamma * self.true_value(nxt, gamma))
        return int(np.argmax(scores))

    def noisy_value_fn(self, sigma: float, rng: np.random.Generator, gamma: float):
        """True value plus Gaussian noise, imitating an imperfect value net."""

        def value(state: str) -> float:
            return self.true_value(state, gamma) + sigma * rng.normal()

        return value


def calibration_tree() -> ToyTree:
    """Depth-2, 4 actions; optimum is action 2 then action 1."""
    rewards = {
        "0": 0.30, "1": 0.10, "2": 0.35, "3": 0.05,
        "00": 0.20, "01": 0.15, "02": 0.00, "03": 0.10,
        "10": 0.40, "11": 0.05, "12": 0.10, "13": 0.00,
        "20": 0.10, "21": 0.45, "22": 0.05, "23": 0.20,
        "30": 0.25, "31": 0.30, "32": 0.15, "33": 0.00,
    }
    return ToyTree(depth=2, rewards=rewards)


def two_armed_tree() -> ToyTree:
    """Arm 0 pays 1, everything else pays 0; single decision."""
    return ToyTree(depth=1, rewards={"0": 1.0})
