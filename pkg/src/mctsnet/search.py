"""Search network with tree-structured vector memory.

A search is a single forward pass: M simulations walk the tree with the
simulation policy, new leaves get embedded, and memories along each
simulated path are updated bottom-up by the backup network.  Everything is
recorded on one tape, so the final readout (and any readout after an
intermediate simulation) is differentiable with respect to the embedding,
backup, and readout parameters; the sampled actions themselves are
stochastic control flow, recorded as log-probability nodes for the
score-function part of training.

Off-path memories are never touched by a simulation: a node visited in
simulations 2 and 4 but not 3 has its simulation-4 update computed directly
from its simulation-2 memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .autodiff import Graph, Node
from .sokoban import DEFAULT_REWARDS, encode, transition
from .subnets import (
    SubnetConfig,
    backup_gated,
    backup_mlp,
    embed_planes,
    policy_logits_modulated,
    policy_logits_unstructured,
    prior_logits,
    readout_logits,
)


def real_model(scheme=DEFAULT_REWARDS):
    def model(state, action):
        return transition(state, action, scheme)

    return model


def sham_model():
    """Ablation model: every action is a self-loop with zero reward."""

    def model(state, action):
        return state, 0.0, False

    return model


def sample_categorical(rng: np.random.Generator, probs: np.ndarray) -> int:
    return int(np.searchsorted(np.cumsum(probs), rng.random()))


@dataclass
class _MemNode:
    state: object
    terminal: bool
    h: Optional[np.ndarray] = None
    visits: int = 0
    children: list[Optional[int]] = field(default_factory=lambda: [None] * 4)
    rewards: list[float] = field(default_factory=lambda: [0.0] * 4)


class MemoryTree:
    """Arena of states with per-node memory vectors and visit flags."""

    def __init__(self, root_state, model, root_terminal: bool = False):
        self.model = model
        self.nodes: list[_MemNode] = []
        self.root = self._new_node(root_state, root_terminal)

    def _new_node(self, state, terminal) -> int:
        self.nodes.append(_MemNode(state=state, terminal=terminal))
        return len(self.nodes) - 1

    def child(self, nid: int, a: int) -> int:
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


def replan_reroot(tree: MemoryTree, a: int) -> MemoryTree:
    """Keep the subtree under the root's child ``a`` as the new tree.

    Retained memory vectors and visit flags are carried over unchanged
    (the same arrays, so bit-identical).  Rerooting onto an action that was
    never expanded returns a fresh tree at the transition target.
    """
    root = tree.nodes[tree.root]
    cid = root.children[a]
    if cid is None:
        nxt, _, term = tree.model(root.state, a)
        return MemoryTree(nxt, tree.model, root_terminal=term)

    keep = tree.subtree_ids(cid)
    remap = {old: new for new, old in enumerate(keep)}
    fresh = MemoryTree(tree.nodes[cid].state, tree.model)
    fresh.nodes = []
    for old in keep:
        node = tree.nodes[old]
        fresh.nodes.append(
            _MemNode(
                state=node.state,
                terminal=node.terminal,
                h=node.h,
                visits=node.visits,
                children=[remap[ch] if ch is not None else None for ch in node.children],
                rewards=list(node.rewards),
            )
        )
    fresh.root = remap[cid]
    return fresh


@dataclass
class SimulationTrace:
    """What one simulation did, kept for credit assignment."""

    index: int  # 1-based simulation number m
    path: list[tuple[int, int, float]]  # (node id, action, reward) down the tree
    leaf: int
    log_prob_nodes: list[Node]
    log_probs: list[float]
    negentropy_nodes: list[Node]
    step_probs: list[np.ndarray]
    loss: Optional[float] = None  # filled by the training loss


@dataclass
class SearchResult:
    probs: np.ndarray
    per_sim_probs: list[np.ndarray]
    per_sim_logits: list[Node]
    traces: list[SimulationTrace]
    tree: MemoryTree
    root_h: Node


class MctsNet:
    """Binds a parameter store, layer sizes, and an environment model."""

    def __init__(self, cfg: SubnetConfig, store: ParamStore, model: Callable | None = None):
        self.cfg = cfg
        self.store = store
        self.model = model if model is not None else real_model()

    # -- single-subnetwork forward passes ---------------------------------

    def embed(self, g: Graph, state) -> Node:
        return embed_planes(g, self.cfg, g.constant(encode(state, dtype=g.dtype)))

    def readout_logits(self, g: Graph, h: Node) -> Node:
        return readout_logits(g, self.cfg, h)

    def readout(self, g: Graph, h: Node) -> Node:
        return g.softmax(self.readout_logits(g, h))

    def prior_log_probs(self, g: Graph, state) -> Node:
        logits = prior_logits(g, self.cfg, g.constant(encode(state, dtype=g.dtype)))
        return g.log_softmax(logits)

    def backup(self, g: Graph, h_parent: Node, h_child: Node, r: float, a: int) -> Node:
        if self.cfg.backup_variant == "gated":
            return backup_gated(g, self.cfg, h_parent, h_child, r, a)
        return backup_mlp(g, self.cfg, h_parent, h_child, r, a)

    def policy_logits(
        self,
        g: Graph,
        tree: MemoryTree,
        nid: int,
        h_nodes: dict[int, Node],
        prior_cache: dict[int, Node] | None = None,
    ) -> Node:
        """Simulation-policy logits at a node that already has a memory."""
        variant = self.cfg.policy_variant
        if nid not in h_nodes:
            raise ValueError(f"node {nid} has no memory vector; embed it first")
        h = h_nodes[nid]
        if variant == "unstructured":
            return policy_logits_unstructured(g, self.cfg, h)
        if variant == "uniform":
            return g.constant(np.zeros(4))
        node = tree.nodes[nid]
        if prior_cache is not None and nid in prior_cache:
            log_prior = prior_cache[nid]
        else:
            log_prior = self.prior_log_probs(g, node.state)
            if variant == "distilled":
                log_prior = g.constant(log_prior.value)  # prior frozen inside the search
            if prior_cache is not None:
                prior_cache[nid] = log_prior
        if variant == "distilled":
            return log_prior
        child_hs = [
            h_nodes.get(node.children[a]) if node.children[a] is not None else None
            for a in range(4)
        ]
        return policy_logits_modulated(g, self.cfg, h, child_hs, log_prior)

    # -- simulation and full search -----------------------------------------

    def simulate(
        self,
        g: Graph,
        tree: MemoryTree,
        rng: np.random.Generator,
        h_nodes: dict[int, Node],
        index: int,
        prior_cache: dict[int, Node] | None = None,
        forced: list[int] | None = None,
    ) -> SimulationTrace:
        """Descend from the root until an unvisited or terminal node.

        Actions are sampled from the simulation policy (or read from
        ``forced`` when replaying a recorded simulation); their
        log-probability nodes stay on the tape for the score-function
        gradient.
        """
        nid = tree.root
        path: list[tuple[int, int, float]] = []
        lp_nodes: list[Node] = []
        lps: list[float] = []
        ne_nodes: list[Node] = []
        step_probs: list[np.ndarray] = []
        t = 0
        while tree.nodes[nid].visits > 0 and not tree.nodes[nid].terminal:
            logits = self.policy_logits(g, tree, nid, h_nodes, prior_cache)
            log_p = g.log_softmax(logits)
            probs = np.exp(log_p.value)
            if forced is not None:
                a = forced[t]
            else:
                a = sample_categorical(rng, probs)
            lp_nodes.append(g.pick(log_p, a))
            lps.append(float(log_p.value[a]))
            ne_nodes.append(g.dot(g.softmax(logits), log_p))
            step_probs.append(probs)
            child = tree.child(nid, a)
            path.append((nid, a, tree.nodes[nid].rewards[a]))
            nid = child
            t += 1
        return SimulationTrace(
            index=index,
            path=path,
            leaf=nid,
            log_prob_nodes=lp_nodes,
            log_probs=lps,
            negentropy_nodes=ne_nodes,
            step_probs=step_probs,
        )

    def run_search(
        self,
        g: Graph,
        root_state=None,
        M: int = 1,
        rng: np.random.Generator | None = None,
        tree: MemoryTree | None = None,
        forced_z: list[list[int]] | None = None,
        observer: Callable | None = None,
    ) -> SearchResult:
        """Run M simulations and read out an action distribution per simulation.

        ``forced_z`` replays recorded per-simulation action lists instead of
        sampling, which makes the loss a deterministic function of the
        parameters (used by gradient checks and enumeration tests).
        ``observer(m, trace, h_values)`` is called after each simulation.
        """
        if M < 1:
            raise ValueError(f"M must be >= 1, got {M}")
        if tree is None:
            if root_state is None:
                raise ValueError("either a root state or an existing tree is required")
            tree = MemoryTree(root_state, self.model)
        rng = rng or np.random.default_rng()

        # memories retained from a previous search enter this graph as constants
        h_nodes: dict[int, Node] = {
            nid: g.constant(node.h) for nid, node in enumerate(tree.nodes) if node.h is not None
        }
        prior_cache: dict[int, Node] = {}
        traces: list[SimulationTrace] = []
        per_sim_probs: list[np.ndarray] = []
        per_sim_logits: list[Node] = []

        for m in range(1, M + 1):
            forced = forced_z[m - 1] if forced_z is not None else None
            trace = self.simulate(g, tree, rng, h_nodes, m, prior_cache, forced)
            leaf = trace.leaf
            if leaf not in h_nodes:
                h_nodes[leaf] = self.embed(g, tree.nodes[leaf].state)

            h_child = h_nodes[leaf]
            for nid, a, r in reversed(trace.path):
                h_nodes[nid] = self.backup(g, h_nodes[nid], h_child, r, a)
                h_child = h_nodes[nid]

            tree.nodes[leaf].visits += 1
            for nid, _, _ in trace.path:
                tree.nodes[nid].visits += 1

            logits = self.readout_logits(g, h_nodes[tree.root])
            probs = g.softmax(logits)
            traces.append(trace)
            per_sim_logits.append(logits)
            per_sim_probs.append(probs.value)
            if observer is not None:
                observer(m, trace, {nid: node.value for nid, node in h_nodes.items()})

        for nid, node in h_nodes.items():
            tree.nodes[nid].h = node.value

        return SearchResult(
            probs=per_sim_probs[-1],
            per_sim_probs=per_sim_probs,
            per_sim_logits=per_sim_logits,
            traces=traces,
            tree=tree,
            root_h=h_nodes[tree.root],
        )
