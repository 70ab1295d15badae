"""The five learned subnetworks and their parameter initializers.

Parameter names are namespaced ``embed.*``, ``backup.*``, ``simpol.*``,
``readout.*``, ``prior.*`` so checkpoints stay stable across variants.
Final layers of the distribution-producing heads start at zero, which makes
untrained policies uniform and keeps early simulated trajectories exploratory.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Graph, Node
from .params import ParamStore

BACKUP_VARIANTS = ("gated", "mlp")
POLICY_VARIANTS = ("modulated", "unstructured", "uniform", "distilled")


@dataclass(frozen=True)
class SubnetConfig:
    """Sizes for every subnetwork plus the board they operate on."""

    board_height: int = 10
    board_width: int = 10
    memory_width: int = 128
    embed_channels: int = 64
    embed_blocks: int = 3
    embed_reduce: int = 32
    readout_hidden: int = 128
    backup_hidden: int = 128
    policy_hidden: int = 64
    prior_channels: int = 32
    prior_blocks: int = 2
    prior_reduce: int = 16
    backup_variant: str = "gated"
    policy_variant: str = "modulated"

    def __post_init__(self):
        if self.backup_variant not in BACKUP_VARIANTS:
            raise ValueError(f"backup_variant must be one of {BACKUP_VARIANTS}")
        if self.policy_variant not in POLICY_VARIANTS:
            raise ValueError(f"policy_variant must be one of {POLICY_VARIANTS}")

    @classmethod
    def desk(cls, board_height=7, board_width=7, **kw) -> "SubnetConfig":
        """Small sizes that train in minutes on one CPU core."""
        sizes = dict(
            board_height=board_height,
            board_width=board_width,
            memory_width=32,
            embed_channels=16,
            embed_blocks=1,
            embed_reduce=8,
            readout_hidden=32,
            backup_hidden=32,
            policy_hidden=16,
            prior_channels=12,
            prior_blocks=1,
            prior_reduce=8,
        )
        sizes.update(kw)
        return cls(**sizes)

    @classmethod
    def tiny(cls, board_height=4, board_width=4, **kw) -> "SubnetConfig":
        """Smallest usable sizes, for exhaustive-enumeration tests."""
        sizes = dict(
            board_height=board_height,
            board_width=board_width,
            memory_width=8,
            embed_channels=4,
            embed_blocks=1,
            embed_reduce=4,
            readout_hidden=8,
            backup_hidden=8,
            policy_hidden=8,
            prior_channels=4,
            prior_blocks=1,
            prior_reduce=4,
        )
        sizes.update(kw)
        return cls(**sizes)

    def with_variants(self, backup=None, policy=None) -> "SubnetConfig":
        out = self
        if backup is not None:
            out = replace(out, backup_variant=backup)
        if policy is not None:
            out = replace(out, policy_variant=policy)
        return out

    @property
    def needs_prior(self) -> bool:
        return self.policy_variant in ("modulated", "distilled")

    @property
    def phi_width(self) -> int:
        # parent memory + child memory + reward scalar + one-hot action
        return 2 * self.memory_width + 1 + 4


# ---------------------------------------------------------------------------
# parameter initialization


def init_params(store: ParamStore, cfg: SubnetConfig, rng: np.random.Generator) -> None:
    """Create every parameter the configured variants need."""
    init_embed_params(store, cfg, rng)
    init_backup_params(store, cfg, rng)
    init_readout_params(store, cfg, rng)
    init_policy_params(store, cfg, rng)
    if cfg.needs_prior:
        init_prior_params(store, cfg, rng)


def _init_tower(store, prefix, cfg_channels, blocks, reduce_ch, out_dim, cfg, rng, zero_head):
    h, w = cfg.board_height, cfg.board_width
    store.add_conv(f"{prefix}.stem", 4, cfg_channels, 3, rng)
    for i in range(blocks):
        store.add_conv(f"{prefix}.block{i}.c1", cfg_channels, cfg_channels, 3, rng)
        store.add_conv(f"{prefix}.block{i}.c2", cfg_channels, cfg_channels, 3, rng)
    store.add_conv(f"{prefix}.reduce", cfg_channels, reduce_ch, 1, rng)
    if zero_head:
        store.add_linear_zero(f"{prefix}.fc", reduce_ch * h * w, out_dim)
    else:
        store.add_linear(f"{prefix}.fc", reduce_ch * h * w, out_dim, rng)


def init_embed_params(store, cfg, rng):
    _init_tower(
        store, "embed", cfg.embed_channels, cfg.embed_blocks, cfg.embed_reduce,
        cfg.memory_width, cfg, rng, zero_head=False,
    )


def init_prior_params(store, cfg, rng):
    _init_tower(
        store, "prior", cfg.prior_channels, cfg.prior_blocks, cfg.prior_reduce,
        4, cfg, rng, zero_head=True,
    )


def init_backup_params(store, cfg, rng):
    n, hid, phi = cfg.memory_width, cfg.backup_hidden, cfg.phi_width
    if cfg.backup_variant == "gated":
        store.add_linear("backup.gate1", phi, hid, rng)
        store.add_linear("backup.gate2", hid, n, rng)
        store.add_linear("backup.update1", phi, hid, rng)
        store.add_linear("backup.update2", hid, n, rng)
    else:
        store.add_linear("backup.mlp1", phi, hid, rng)
        store.add_linear("backup.mlp2", hid, n, rng)


def init_readout_params(store, cfg, rng):
    store.add_linear("readout.fc1", cfg.memory_width, cfg.readout_hidden, rng)
    store.add_linear_zero("readout.fc2", cfg.readout_hidden, 4)


def init_policy_params(store, cfg, rng):
    n, hid = cfg.memory_width, cfg.policy_hidden
    if cfg.policy_variant == "modulated":
        store.add_linear("simpol.u1", 2 * n, hid, rng)
        store.add_linear_zero("simpol.u2", hid, 1)
        store.add_scalar("simpol.w0", 1.0)
        store.add_scalar("simpol.w1", 0.0)
    elif cfg.policy_variant == "unstructured":
        store.add_linear("simpol.mlp1", n, hid, rng)
        store.add_linear_zero("simpol.mlp2", hid, 4)
    # uniform and distilled need no simpol parameters


# ---------------------------------------------------------------------------
# forward builders


def _residual_block(g: Graph, x: Node, prefix: str) -> Node:
    y = g.relu(g.conv3x3(x, f"{prefix}.c1"))
    y = g.conv3x3(y, f"{prefix}.c2")
    return g.relu(g.add(x, y))


def _conv_tower(g: Graph, planes: Node, prefix: str, blocks: int) -> Node:
    x = g.relu(g.conv3x3(planes, f"{prefix}.stem"))
    for i in range(blocks):
        x = _residual_block(g, x, f"{prefix}.block{i}")
    x = g.relu(g.conv1x1(x, f"{prefix}.reduce"))
    return g.linear(g.flatten(x), f"{prefix}.fc")


def embed_planes(g: Graph, cfg: SubnetConfig, planes: Node) -> Node:
    """Residual conv tower mapping [4, H, W] feature planes to a memory vector."""
    return _conv_tower(g, planes, "embed", cfg.embed_blocks)


def prior_logits(g: Graph, cfg: SubnetConfig, planes: Node) -> Node:
    return _conv_tower(g, planes, "prior", cfg.prior_blocks)


def readout_logits(g: Graph, cfg: SubnetConfig, h: Node) -> Node:
    return g.linear(g.relu(g.linear(h, "readout.fc1")), "readout.fc2")


def backup_gated(g: Graph, cfg: SubnetConfig, h_parent: Node, h_child: Node, r: float, a: int) -> Node:
    phi = _phi(g, h_parent, h_child, r, a)
    gate = g.sigmoid(g.linear(g.relu(g.linear(phi, "backup.gate1")), "backup.gate2"))
    update = g.tanh(g.linear(g.relu(g.linear(phi, "backup.update1")), "backup.update2"))
    return g.add(h_parent, g.mul(gate, update))


def backup_mlp(g: Graph, cfg: SubnetConfig, h_parent: Node, h_child: Node, r: float, a: int) -> Node:
    phi = _phi(g, h_parent, h_child, r, a)
    return g.linear(g.relu(g.linear(phi, "backup.mlp1")), "backup.mlp2")


def _phi(g: Graph, h_parent: Node, h_child: Node, r: float, a: int) -> Node:
    onehot = np.zeros(4)
    onehot[a] = 1.0
    return g.concat([h_parent, h_child, g.constant([r]), g.constant(onehot)])


def policy_logits_modulated(
    g: Graph, cfg: SubnetConfig, h: Node, child_hs: list[Node | None], log_prior: Node
) -> Node:
    """w0 * log prior + w1 * u(parent memory, child memory), per action.

    Unexpanded children contribute a zero memory vector, keeping the input
    signature fixed without spending model calls on unvisited states.
    """
    zero = None
    parts = []
    for a in range(4):
        child = child_hs[a]
        if child is None:
            if zero is None:
                zero = g.constant(np.zeros(cfg.memory_width))
            child = zero
        u = g.linear(g.relu(g.linear(g.concat([h, child]), "simpol.u1")), "simpol.u2")
        parts.append(u)
    u_vec = g.concat(parts)
    return g.add(
        g.scalar_mul(g.param("simpol.w0"), log_prior),
        g.scalar_mul(g.param("simpol.w1"), u_vec),
    )


def policy_logits_unstructured(g: Graph, cfg: SubnetConfig, h: Node) -> Node:
    return g.linear(g.relu(g.linear(h, "simpol.mlp1")), "simpol.mlp2")


def prior_probs(store: ParamStore, cfg: SubnetConfig, state) -> np.ndarray:
    """Convenience inference: the prior's action distribution for one state."""
    from .sokoban import encode

    g = Graph(store)
    logits = prior_logits(g, cfg, g.constant(encode(state, dtype=g.dtype)))
    return g.softmax(logits).value
