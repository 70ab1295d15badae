"""Learned Monte-Carlo tree search with vector node memories.

Subpackages:

- ``sokoban``, ``solver``: deterministic puzzle environment, level
  generation, and an exact labelling solver.
- ``autodiff``, ``params``, ``gradcheck``: minimal tape-based reverse-mode
  engine over numpy and its verification tools.
- ``baseline``: classic scalar-statistics MCTS (UCT / PUCT).
- ``subnets``, ``search``: the learned search network itself.
- ``training``: supervised losses, score-function estimators, training loop.
- ``evaluate``, ``compare``, ``cli``: agent evaluation and the experiment
  harness.
"""

from .autodiff import Graph, GraphError, Node
from .params import ParamStore, load_checkpoint, save_checkpoint, sgd_step
from .sokoban import GridState, RewardScheme, encode, from_xsb, generate_level, to_xsb, transition
from .solver import solve_oracle

__all__ = [
    "Graph",
    "GraphError",
    "Node",
    "ParamStore",
    "GridState",
    "RewardScheme",
    "encode",
    "from_xsb",
    "generate_level",
    "to_xsb",
    "transition",
    "solve_oracle",
    "load_checkpoint",
    "save_checkpoint",
    "sgd_step",
]
