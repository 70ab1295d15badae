"""Classic Monte-Carlo tree search with scalar node statistics.

Each simulation descends via UCT (or PUCT when a policy prior is supplied)
until it reaches an unvisited node, evaluates that leaf with a caller-given
value function, and backs the discounted return up the path as an
incremental mean.  The search is generic over a deterministic model
``model(state, action) -> (next_state, reward, terminal)``; Sokoban is the
default.  States must be hashable only for the caller's benefit; the tree
itself never hashes them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

from .sokoban import DEFAULT_REWARDS, transition


def sokoban_model(scheme=DEFAULT_REWARDS):
    def model(state, action):
        return transition(state, action, scheme)

    return model


@dataclass
class ScalarStats:
    """Visit counts and mean action values for one tree node."""

    n_actions: int = 4
    n: int = 0
    n_a: list[int] = field(default_factory=list)
    q: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.n_a:
            self.n_a = [0] * self.n_actions
        if not self.q:
            self.q = [0.0] * self.n_actions


def uct_select(stats: ScalarStats, c: float) -> int:
    """argmax of Q(s,a) + c * sqrt(ln N(s) / N(s,a)); untried actions first.

    Ties break toward the lowest action index so searches are reproducible.
    """
    for a in range(stats.n_actions):
        if stats.n_a[a] == 0:
            return a
    log_n = math.log(stats.n)
    best, best_score = 0, -math.inf
    for a in range(stats.n_actions):
        score = stats.q[a] + c * math.sqrt(log_n / stats.n_a[a])
        if score > best_score:
            best, best_score = a, score
    return best


def puct_select(stats: ScalarStats, prior: list[float], c_puct: float) -> int:
    """argmax of Q(s,a) + c_puct * prior(a) * sqrt(N(s)) / (1 + N(s,a))."""
    if len(prior) != stats.n_actions:
        raise ValueError(f"prior has {len(prior)} entries, expected {stats.n_actions}")
    total = sum(prior)
    if abs(total - 1.0) > 1e-6 or any(p < 0 for p in prior):
        raise ValueError(f"prior must be a distribution, got {prior} (sum {total})")
    sqrt_n = math.sqrt(stats.n)
    best, best_score = 0, -math.inf
    for a in range(stats.n_actions):
        score = stats.q[a] + c_puct * prior[a] * sqrt_n / (1 + stats.n_a[a])
        if score > best_score:
            best, best_score = a, score
    return best


@dataclass
class _TreeNode:
    state: object
    terminal: bool
    stats: ScalarStats
    children: list[Optional[int]]
    rewards: list[float]
    prior: Optional[list[float]] = None


class BaselineTree:
    """Arena-allocated search tree; children are indices keyed by action."""

    def __init__(self, root_state, model, n_actions: int = 4, root_terminal: bool = False):
        self.model = model
        self.n_actions = n_actions
        self.nodes: list[_TreeNode] = []
        self.root = self._new_node(root_state, root_terminal)
        self.return_log: list[tuple[int, int, float]] = []

    def _new_node(self, state, terminal: bool) -> int:
        self.nodes.append(
            _TreeNode(
                state=state,
                terminal=terminal,
                stats=ScalarStats(self.n_actions),
                children=[None] * self.n_actions,
                rewards=[0.0] * self.n_actions,
            )
        )
        return len(self.nodes) - 1

    def child(self, nid: int, a: int) -> int:
        """Child id under action a, expanding through the model on demand."""
        node = self.nodes[nid]
        if node.children[a] is None:
            nxt, r, term = self.model(node.state, a)
            node.children[a] = self._new_node(nxt, term)
            node.rewards[a] = r
        return node.children[a]

    def size(self) -> int:
        return len(self.nodes)

    def subtree_ids(self, nid: int) -> list[int]:
        out, stack = [], [nid]
        while stack:
            cur = stack.pop()
            out.append(cur)
            for ch in self.nodes[cur].children:
                if ch is not None:
                    stack.append(ch)
        return out


def run_search(
    root_state,
    M: int,
    value_fn: Callable,
    gamma: float = 0.99,
    c: float = 1.25,
    model=None,
    prior_fn: Callable | None = None,
    c_puct: float = 1.25,
    tree: BaselineTree | None = None,
    n_actions: int = 4,
) -> tuple[int, BaselineTree]:
    """Run M simulations from the root and pick the most-visited root action.

    ``prior_fn(state) -> list of probabilities`` switches selection to PUCT.
    When no root action has any visits (M=1 leaves only the root evaluated),
    the root action falls back to a value-greedy one-step lookahead so the
    function stays total.
    """
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    model = model or sokoban_model()
    if tree is None:
        tree = BaselineTree(root_state, model, n_actions)

    for _ in range(M):
        nid = tree.root
        path: list[tuple[int, int]] = []
        while tree.nodes[nid].stats.n > 0 and not tree.nodes[nid].terminal:
            node = tree.nodes[nid]
            if prior_fn is not None:
                if node.prior is None:
                    node.prior = list(prior_fn(node.state))
                a = puct_select(node.stats, node.prior, c_puct)
            else:
                a = uct_select(node.stats, c)
            child = tree.child(nid, a)
            path.append((nid, a))
            nid = child

        leaf = tree.nodes[nid]
        value = 0.0 if leaf.terminal else float(value_fn(leaf.state))
        if leaf.stats.n == 0:
            leaf.stats.n = 1
        else:
            leaf.stats.n += 1  # revisited terminal leaf

        ret = value
        for pid, a in reversed(path):
            node = tree.nodes[pid]
            ret = node.rewards[a] + gamma * ret
            st = node.stats
            st.q[a] += (ret - st.q[a]) / (st.n_a[a] + 1)
            st.n_a[a] += 1
            st.n += 1
            tree.return_log.append((pid, a, ret))

    root = tree.nodes[tree.root]
    if max(root.stats.n_a) == 0:
        action = _greedy_lookahead(tree, value_fn, gamma)
    else:
        action = max(range(tree.n_actions), key=lambda a: (root.stats.n_a[a], -a))
    return action, tree


def _greedy_lookahead(tree: BaselineTree, value_fn, gamma: float) -> int:
    best, best_score = 0, -math.inf
    for a in range(tree.n_actions):
        cid = tree.child(tree.root, a)
        child = tree.nodes[cid]
        score = tree.nodes[tree.root].rewards[a]
        if not child.terminal:
            score += gamma * float(value_fn(child.state))
        if score > best_score:
            best, best_score = a, score
    return best


def reuse_subtree(tree: BaselineTree, a: int) -> BaselineTree:
    """Promote the child under ``a`` to the root, keeping its statistics.

    If that child was never expanded the result is a fresh single-node tree
    rooted at the transition target (documented behaviour, not an error).
    """
    old_root = tree.nodes[tree.root]
    cid = old_root.children[a]
    if cid is None:
        nxt, _, term = tree.model(old_root.state, a)
        return BaselineTree(nxt, tree.model, tree.n_actions, root_terminal=term)

    keep = tree.subtree_ids(cid)
    remap = {old: new for new, old in enumerate(keep)}
    fresh = BaselineTree(tree.nodes[cid].state, tree.model, tree.n_actions)
    fresh.nodes = []
    for old in keep:
        node = tree.nodes[old]
        fresh.nodes.append(
            _TreeNode(
                state=node.state,
                terminal=node.terminal,
                stats=node.stats,
                children=[remap[ch] if ch is not None else None for ch in node.children],
                rewards=list(node.rewards),
                prior=node.prior,
            )
        )
    fresh.root = remap[cid]
    return fresh


# ---------------------------------------------------------------------------
# Value functions for Sokoban baselines


def heuristic_steps_to_go(state) -> int:
    """Crude lower-bound style distance: box-to-target plus agent approach."""
    if state.terminal:
        return 0
    targets = state.target_cells()
    boxes = state.box_cells()
    total = 0
    off = []
    for br, bc in boxes:
        if state.bit(br, bc) & state.targets:
            continue
        off.append((br, bc))
        total += min(abs(br - tr) + abs(bc - tc) for tr, tc in targets)
    if off:
        ar, ac = state.agent
        total += min(abs(ar - br) + abs(ac - bc) for br, bc in off) - 1
    return max(total, 1)


def heuristic_value_fn(scheme=DEFAULT_REWARDS, gamma: float = 0.99):
    """Discounted-return estimate assuming ``heuristic_steps_to_go`` more steps.

    Stands in for the pre-learned value network of the classic baseline;
    callers can swap in any state -> value callable.
    """

    def value(state) -> float:
        d = heuristic_steps_to_go(state)
        if d == 0:
            return 0.0
        if gamma == 1.0:
            penalties = scheme.step_penalty * d
        else:
            penalties = scheme.step_penalty * (1 - gamma**d) / (1 - gamma)
        return penalties + gamma ** (d - 1) * (scheme.box_on + scheme.solve_bonus)

    return value
