"""Supervised training of the search network.

The loss for one example is the cross entropy between the final readout and
the solver's action label, averaged over sampled simulated trajectories.
Its gradient splits into a differentiable path (through embedding, backup,
and readout) and a score-function term for the sampled simulation actions.
Two score estimators are implemented:

- ``basic``: every sampled action is weighted by the terminal loss itself.
- ``anytime``: the terminal loss is decomposed into per-simulation loss
  decreases (telescoping rewards), so the actions of simulation m are
  weighted by the discounted return of future improvements.  At discount 1
  this matches the basic estimator up to a per-simulation baseline; lower
  discounts trade variance for bias.
"""

from __future__ import annotations

import gzip
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, Node
from .params import GradientError, ParamStore, sgd_step
from .sokoban import GridState, from_xsb, generate_level, to_xsb, transition
from .solver import solve_oracle
from .search import MctsNet, SearchResult
from .subnets import SubnetConfig, prior_logits


@dataclass(frozen=True)
class LabeledExample:
    state: GridState
    label: int
    level_id: int
    step: int


@dataclass
class CreditConfig:
    """How the score-function term weights sampled simulation actions."""

    estimator: str = "anytime"  # basic | anytime
    gamma: float = 0.5
    entropy_coeff: float = 0.01
    use_baseline: bool = False  # optional moving-average baseline, basic only
    baseline_momentum: float = 0.95

    def __post_init__(self):
        if self.estimator not in ("basic", "anytime"):
            raise ValueError(f"estimator must be basic or anytime, got {self.estimator!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")


# ---------------------------------------------------------------------------
# dataset generation and IO (JSON lines; one object per labelled state)


@dataclass
class DatasetStats:
    levels: int = 0
    solved: int = 0
    skipped: int = 0
    examples: int = 0

    @property
    def unsolved_rate(self) -> float:
        return self.skipped / self.levels if self.levels else 0.0


def _open_text(path: str, mode: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def generate_dataset(
    path: str,
    n_levels: int,
    rng: np.random.Generator,
    width: int = 7,
    height: int = 7,
    n_boxes: int = 1,
    pulls: int = 30,
    oracle_max_nodes: int = 200_000,
) -> DatasetStats:
    """Unroll solver plans on generated levels into (state, action) lines.

    Levels the solver cannot crack within budget are skipped and counted;
    a skip rate above half the levels usually means the budget or board
    configuration needs attention, so that raises a warning.
    """
    stats = DatasetStats()
    with _open_text(path, "w") as fh:
        for _ in range(n_levels):
            level = generate_level(width, height, n_boxes, rng, pulls=pulls)
            stats.levels += 1
            plan = solve_oracle(level, max_nodes=oracle_max_nodes)
            if plan is None:
                stats.skipped += 1
                continue
            stats.solved += 1
            level_xsb = to_xsb(level)
            state = level
            for step, action in enumerate(plan):
                fh.write(
                    json.dumps(
                        {"level": level_xsb, "step": step, "state": to_xsb(state), "label": int(action)}
                    )
                    + "\n"
                )
                stats.examples += 1
                state, _, _ = transition(state, action)
    if stats.unsolved_rate > 0.5:
        warnings.warn(
            f"solver failed on {stats.skipped}/{stats.levels} levels; "
            "raise oracle_max_nodes or shrink the boards",
            stacklevel=2,
        )
    return stats


def load_dataset(path: str) -> list[LabeledExample]:
    examples: list[LabeledExample] = []
    level_ids: dict[str, int] = {}
    with _open_text(path, "r") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            lid = level_ids.setdefault(obj["level"], len(level_ids))
            examples.append(
                LabeledExample(
                    state=from_xsb(obj["state"]),
                    label=int(obj["label"]),
                    level_id=lid,
                    step=int(obj["step"]),
                )
            )
    return examples


# ---------------------------------------------------------------------------
# per-example loss


@dataclass
class LossResult:
    loss: float                      # terminal cross entropy
    per_sim_losses: list[float]      # cross entropy after each simulation
    graph: Graph
    loss_nodes: list[Node]
    search: SearchResult


def loss_and_traces(
    net: MctsNet,
    example: LabeledExample,
    M: int,
    rng: np.random.Generator | None = None,
    forced_z: list[list[int]] | None = None,
) -> LossResult:
    """Run a search and score every per-simulation readout against the label."""
    g = Graph(net.store)
    res = net.run_search(g, example.state, M=M, rng=rng, forced_z=forced_z)
    loss_nodes: list[Node] = []
    losses: list[float] = []
    for logits, trace in zip(res.per_sim_logits, res.traces):
        _, loss_node = g.softmax_xent(logits, example.label)
        loss_nodes.append(loss_node)
        losses.append(float(loss_node.value))
        trace.loss = losses[-1]
    return LossResult(
        loss=losses[-1], per_sim_losses=losses, graph=g, loss_nodes=loss_nodes, search=res
    )


def telescoping_rewards(per_sim_losses: list[float]) -> list[float]:
    """Per-simulation loss decreases; they sum to minus the terminal loss."""
    rewards = []
    prev = 0.0
    for loss in per_sim_losses:
        rewards.append(prev - loss)
        prev = loss
    return rewards


def discounted_returns(rewards: list[float], gamma: float) -> list[float]:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    out = [0.0] * len(rewards)
    acc = 0.0
    for m in range(len(rewards) - 1, -1, -1):
        acc = rewards[m] + gamma * acc
        out[m] = acc
    return out


def score_coefficients(per_sim_losses: list[float], credit: CreditConfig, baseline: float = 0.0) -> list[float]:
    """Multiplier for each simulation's log-probability nodes in the surrogate.

    The surrogate loss is  l_M + sum_m c_m * log pi(z_m)  (plus entropy),
    whose gradient is the chosen estimator.
    """
    terminal = per_sim_losses[-1]
    if credit.estimator == "basic":
        c = terminal - (baseline if credit.use_baseline else 0.0)
        return [c] * len(per_sim_losses)
    returns = discounted_returns(telescoping_rewards(per_sim_losses), credit.gamma)
    return [-r for r in returns]


def build_surrogate(lres: LossResult, credit: CreditConfig, baseline: float = 0.0) -> Node:
    """Assemble the scalar whose backward pass yields the gradient estimate."""
    g = lres.graph
    total = lres.loss_nodes[-1]
    coefs = score_coefficients(lres.per_sim_losses, credit, baseline)
    for trace in lres.search.traces:
        c = coefs[trace.index - 1]
        if c != 0.0:
            for lp in trace.log_prob_nodes:
                total = g.add(total, g.scale(lp, c))
        if credit.entropy_coeff:
            for ne in trace.negentropy_nodes:
                total = g.add(total, g.scale(ne, credit.entropy_coeff))
    return total


@dataclass
class StepMetrics:
    loss: float
    per_sim_losses: list[float]
    grad_norm: float
    entropy: float
    score_var_proxy: float
    n_examples: int = 1


def gradient_step(
    net: MctsNet,
    batch: list[LabeledExample],
    M: int,
    credit: CreditConfig,
    rng: np.random.Generator,
    lr: float | None,
    baseline_state: dict | None = None,
) -> StepMetrics:
    """Accumulate the gradient estimate over a batch, then apply one SGD step.

    Pass ``lr=None`` to accumulate without stepping (the caller owns the
    optimizer schedule).  NaN gradients abort naming the offending
    subnetwork.
    """
    losses, per_sim, entropies, coef_sq = [], None, [], []
    for example in batch:
        lres = loss_and_traces(net, example, M, rng)
        baseline = baseline_state.get("value", 0.0) if baseline_state else 0.0
        surrogate = build_surrogate(lres, credit, baseline)
        lres.graph.backward(surrogate)

        losses.append(lres.loss)
        per_sim = (
            lres.per_sim_losses
            if per_sim is None
            else [a + b for a, b in zip(per_sim, lres.per_sim_losses)]
        )
        coefs = score_coefficients(lres.per_sim_losses, credit, baseline)
        for trace in lres.search.traces:
            coef_sq.extend([coefs[trace.index - 1] ** 2] * len(trace.log_prob_nodes))
            entropies.extend(-float(ne.value) for ne in trace.negentropy_nodes)
        if baseline_state is not None and credit.use_baseline:
            mom = credit.baseline_momentum
            baseline_state["value"] = mom * baseline_state.get("value", 0.0) + (1 - mom) * lres.loss

    grad_norm = net.store.grad_norm()
    if lr is not None:
        try:
            sgd_step(net.store, lr)
        except GradientError as err:
            subnet = str(err).split("'")[1].split(".")[0] if "'" in str(err) else "unknown"
            raise GradientError(f"aborting: non-finite gradient in subnetwork {subnet!r} ({err})") from err

    n = len(batch)
    return StepMetrics(
        loss=float(np.mean(losses)),
        per_sim_losses=[v / n for v in per_sim],
        grad_norm=grad_norm,
        entropy=float(np.mean(entropies)) if entropies else 0.0,
        score_var_proxy=float(np.mean(coef_sq)) if coef_sq else 0.0,
        n_examples=n,
    )


# ---------------------------------------------------------------------------
# policy prior distillation


def prior_loss(g: Graph, cfg: SubnetConfig, example: LabeledExample, entropy_coeff: float) -> Node:
    from .sokoban import encode

    logits = prior_logits(g, cfg, g.constant(encode(example.state, dtype=g.dtype)))
    probs, loss = g.softmax_xent(logits, example.label)
    if entropy_coeff:
        negent = g.dot(probs, g.log_softmax(logits))
        loss = g.add(loss, g.scale(negent, entropy_coeff))
    return loss


def train_policy_prior(
    store: ParamStore,
    cfg: SubnetConfig,
    examples: list[LabeledExample],
    rng: np.random.Generator,
    epochs: float = 1.0,
    lr: float = 1e-3,
    entropy_coeff: float = 0.01,
) -> list[float]:
    """Distill solver labels into the small model-free prior network."""
    n_steps = int(round(epochs * len(examples)))
    losses = []
    order = rng.permutation(len(examples))
    pos = 0
    for _ in range(n_steps):
        if pos >= len(order):
            order = rng.permutation(len(examples))
            pos = 0
        example = examples[int(order[pos])]
        pos += 1
        g = Graph(store)
        loss = prior_loss(g, cfg, example, entropy_coeff)
        g.backward(loss)
        sgd_step(store, lr)
        losses.append(float(loss.value))
    return losses

