"""Central-difference verification of analytic gradients.

The builder callable must rebuild the same scalar loss on any fresh graph
(fix your inputs and any sampled actions before checking), so the loss is a
deterministic function of the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import Graph, Node
from .params import ParamStore

# Relative error floor: coordinates with tiny gradients are compared
# absolutely against this scale instead of amplifying FD noise.
_REL_FLOOR = 1e-2


@dataclass
class GradCheckReport:
    tolerance: float
    n_checked: int = 0
    max_rel_error: float = 0.0
    worst: tuple[str, int] | None = None
    failures: list[tuple[str, int, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        where = f" worst at {self.worst[0]}[{self.worst[1]}]" if self.worst else ""
        return (
            f"grad_check {status}: max rel err {self.max_rel_error:.3e} "
            f"(tol {self.tolerance:.1e}, {self.n_checked} coords checked{where})"
        )


def grad_check(
    store: ParamStore,
    builder: Callable[[Graph], Node],
    tolerance: float = 1e-4,
    n_samples: int = 200,
    h: float = 1e-5,
    rng: np.random.Generator | None = None,
    param_names: list[str] | None = None,
) -> GradCheckReport:
    """Compare backward() output against central differences.

    Samples up to ``n_samples`` scalar coordinates uniformly across the
    selected parameters and reports the max relative error.  Never raises;
    failures are listed in the report.
    """
    rng = rng or np.random.default_rng(0)
    names = param_names if param_names is not None else store.names()
    names = [n for n in names if store.values[n].size > 0]

    store.zero_grads()
    g = Graph(store)
    g.backward(builder(g))
    analytic = {n: store.grads[n].copy() for n in names}
    store.zero_grads()

    def eval_loss() -> float:
        return float(builder(Graph(store)).value)

    sizes = np.array([store.values[n].size for n in names])
    total = int(sizes.sum())
    count = min(n_samples, total)
    flat_picks = np.sort(rng.choice(total, size=count, replace=False))
    bounds = np.cumsum(sizes)

    report = GradCheckReport(tolerance=tolerance)
    for flat in flat_picks:
        pi = int(np.searchsorted(bounds, flat, side="right"))
        name = names[pi]
        idx = int(flat - (bounds[pi - 1] if pi else 0))
        values = store.values[name]
        orig = values.flat[idx]
        values.flat[idx] = orig + h
        lo_plus = eval_loss()
        values.flat[idx] = orig - h
        lo_minus = eval_loss()
        values.flat[idx] = orig

        numeric = (lo_plus - lo_minus) / (2.0 * h)
        a = float(analytic[name].flat[idx])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), _REL_FLOOR)
        report.n_checked += 1
        if rel > report.max_rel_error:
            report.max_rel_error = rel
            report.worst = (name, idx)
        if rel > tolerance:
            report.failures.append((name, idx, rel))
    return report
