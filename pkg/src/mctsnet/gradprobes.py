"""Finite-difference probe cases for every subnetwork.

Each entry yields (name, store, builder, param_names) where ``builder``
reconstructs the same scalar loss on any fresh graph, so central
differences are well defined.
"""

from __future__ import annotations

import numpy as np

from mctsnet.autodiff import Graph
from mctsnet.params import ParamStore
from mctsnet.search import MctsNet, MemoryTree
from mctsnet.sokoban import generate_level
from mctsnet.subnets import (
    SubnetConfig,
    backup_gated,
    backup_mlp,
    embed_planes,
    init_params,
    policy_logits_modulated,
    prior_logits,
    readout_logits,
)


def _randomized_net(cfg: SubnetConfig, seed: int) -> MctsNet:
    store = ParamStore()
    init_params(store, cfg, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 100)
    for name in ("readout.fc2.W", "prior.fc.W", "simpol.u2.W"):
        if name in store.values:
            store.values[name][...] = 0.4 * rng.normal(size=store.values[name].shape)
    if "simpol.w1" in store.values:
        store.values["simpol.w1"][...] = 0.35
    return MctsNet(cfg, store)


def _probe(g: Graph, vec_node, rng_seed: int):
    probe = np.random.default_rng(rng_seed).normal(size=vec_node.value.shape)
    return g.dot(vec_node, g.constant(probe))


def subnetwork_cases(board=(5, 5), seed=0):
    """One (name, store, builder, param_names) case per subnetwork."""
    cfg = SubnetConfig.tiny(board_height=board[0], board_width=board[1])
    level = generate_level(board[1], board[0], 1, np.random.default_rng(seed + 7))
    planes_seed = seed + 13
    cases = []

    # embedding tower
    net = _randomized_net(cfg, seed)
    from mctsnet.sokoban import encode

    planes = encode(level)

    def embed_builder(g, net=net):
        return _probe(g, embed_planes(g, net.cfg, g.constant(planes)), planes_seed)

    cases.append(("embedding", net.store, embed_builder, _prefixed(net.store, "embed.")))

    # gated backup
    net_g = _randomized_net(cfg, seed + 1)
    rng = np.random.default_rng(seed + 2)
    hp, hc = rng.normal(size=cfg.memory_width), rng.normal(size=cfg.memory_width)

    def gated_builder(g, net=net_g):
        out = backup_gated(g, net.cfg, g.constant(hp), g.constant(hc), -0.1, 2)
        return _probe(g, out, planes_seed + 1)

    cases.append(("backup-gated", net_g.store, gated_builder, _prefixed(net_g.store, "backup.")))

    # mlp backup
    cfg_mlp = cfg.with_variants(backup="mlp")
    net_m = _randomized_net(cfg_mlp, seed + 3)

    def mlp_builder(g, net=net_m):
        out = backup_mlp(g, net.cfg, g.constant(hp), g.constant(hc), 0.9, 1)
        return _probe(g, out, planes_seed + 2)

    cases.append(("backup-mlp", net_m.store, mlp_builder, _prefixed(net_m.store, "backup.")))

    # modulated policy (the u network, the mixing scalars, and the prior tower)
    net_u = _randomized_net(cfg, seed + 4)
    tree = MemoryTree(level, net_u.model)
    child_id = tree.child(tree.root, 0)
    rng2 = np.random.default_rng(seed + 5)
    h_root = rng2.normal(size=cfg.memory_width)
    h_child = rng2.normal(size=cfg.memory_width)

    def policy_builder(g, net=net_u):
        log_prior = g.log_softmax(prior_logits(g, net.cfg, g.constant(encode(level))))
        child_hs = [g.constant(h_child), None, None, None]
        logits = policy_logits_modulated(g, net.cfg, g.constant(h_root), child_hs, log_prior)
        return _probe(g, logits, planes_seed + 3)

    cases.append(
        ("simulation-policy", net_u.store, policy_builder,
         _prefixed(net_u.store, "simpol.") + _prefixed(net_u.store, "prior."))
    )

    # readout
    net_r = _randomized_net(cfg, seed + 6)
    h_read = np.random.default_rng(seed + 8).normal(size=cfg.memory_width)

    def readout_builder(g, net=net_r):
        _, loss = g.softmax_xent(readout_logits(g, net.cfg, g.constant(h_read)), 1)
        return loss

    cases.append(("readout", net_r.store, readout_builder, _prefixed(net_r.store, "readout.")))

    # prior tower through its own cross entropy
    net_p = _randomized_net(cfg, seed + 9)

    def prior_builder(g, net=net_p):
        _, loss = g.softmax_xent(prior_logits(g, net.cfg, g.constant(encode(level))), 3)
        return loss

    cases.append(("prior", net_p.store, prior_builder, _prefixed(net_p.store, "prior.")))

    return cases


def frozen_search_case(board=(5, 5), M=4, seed=0, backup="gated"):
    """The full search loss with the sampled actions held fixed."""
    cfg = SubnetConfig.tiny(board_height=board[0], board_width=board[1]).with_variants(backup=backup)
    net = _randomized_net(cfg, seed + 20)
    level = generate_level(board[1], board[0], 1, np.random.default_rng(seed + 21))
    label = 1

    g = Graph(net.store)
    res = net.run_search(g, level, M=M, rng=np.random.default_rng(seed + 22))
    z = [[a for _, a, _ in t.path] for t in res.traces]

    def builder(graph):
        out = net.run_search(graph, level, M=M, forced_z=z)
        _, loss = graph.softmax_xent(out.per_sim_logits[-1], label)
        return loss

    return net.store, builder


def _prefixed(store: ParamStore, prefix: str) -> list[str]:
    return [name for name in store.names() if name.startswith(prefix)]
