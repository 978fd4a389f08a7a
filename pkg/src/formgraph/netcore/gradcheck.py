"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Param, Tensor, backward, record_kinks


def rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


@dataclass
class GradCheckReport:
    max_rel_err: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)
    unresolved: dict[str, int] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    def passed(self, tol: float) -> bool:
        return all(v < tol for v in self.max_rel_err.values())

    def failures(self, tol: float) -> dict[str, float]:
        return {k: v for k, v in self.max_rel_err.items() if v >= tol}


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: list[Param],
    h: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
    resolve_tol: float = 1e-4,
) -> GradCheckReport:
    """Compare backprop gradients of ``loss_fn()`` with central differences.

    ``max_entries`` caps how many randomly chosen entries of each parameter
    are probed.  A probe whose +h or -h evaluation changes the on/off
    pattern of any relu or max-pool is dropped, since the loss is not
    differentiable across that step.

    Float64 round-off limits a central difference to about
    ``eps * |loss| / h`` absolute accuracy.  Entries whose analytic and
    numeric values are both too small for that accuracy to reach
    ``resolve_tol`` relative error are counted as unresolved, not checked.
    """
    eps = np.finfo(np.float64).eps
    rng = np.random.default_rng(seed)
    for p in params:
        p.zero_grad()
    with record_kinks() as base_kinks:
        loss = loss_fn()
    backward(loss)
    base = list(base_kinks)
    analytic = {p.name: p.grad.copy() for p in params}
    report = GradCheckReport()

    for p in params:
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst, n_ok, n_skip, n_unres = 0.0, 0, 0, 0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            with record_kinks() as kp:
                fp = float(loss_fn().data)
            flat[i] = orig - h
            with record_kinks() as km:
                fm = float(loss_fn().data)
            flat[i] = orig
            if kp != base or km != base:
                n_skip += 1
                continue
            num = (fp - fm) / (2 * h)
            ana = float(analytic[p.name].reshape(-1)[i])
            resolution = eps * max(abs(fp), abs(fm), 1.0) / h / resolve_tol
            if max(abs(ana), abs(num)) < resolution:
                n_unres += 1
                continue
            worst = max(worst, rel_error(ana, num))
            n_ok += 1
        report.max_rel_err[p.name] = worst
        report.checked[p.name] = n_ok
        report.skipped[p.name] = n_skip
        report.unresolved[p.name] = n_unres
        p.zero_grad()
    return report
