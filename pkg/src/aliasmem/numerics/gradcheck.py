"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .nn import Parameter
from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    checked_entries: dict[str, int] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def passed(self, tolerance: float) -> bool:
        return self.worst < tolerance

    def failures(self, tolerance: float) -> dict[str, float]:
        return {k: v for k, v in self.max_rel_error.items() if not v < tolerance}


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def fd_resolution(value: float, epsilon: float) -> float:
    """Roundoff scale of the five-point difference of a function near ``value``.

    The stencil weights (1, 8, 8, 1) / 12 sum to 1.5 in absolute value.
    """
    return 1.5 * float(np.finfo(np.float64).eps) * max(abs(value), 1.0) / epsilon


def grad_check(fn: Callable[[], Tensor], params: Sequence[Parameter], epsilon: float = 1e-6,
               max_entries: int | None = None, rng: np.random.Generator | None = None,
               floor: float = 1e-8) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``fn()`` with five-point central differences.

    The fourth-order stencil keeps truncation error at O(epsilon**4), so a step
    large enough to stay clear of roundoff is still accurate.

    ``max_entries`` bounds how many entries of each parameter are probed
    (chosen by ``rng``); ``None`` probes every entry. Gradients smaller than
    ``floor`` are compared in absolute terms against it.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    for p in params:
        if p.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters, {p.name or '?'} is {p.dtype}")
        p.grad = None
    out = fn()
    if out.size != 1:
        raise ValueError("grad_check needs a scalar function")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = rng or np.random.default_rng(0)
    report = GradCheckReport()
    for idx, (p, grad) in enumerate(zip(params, analytic)):
        name = p.name or f"param{idx}"
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        for e in entries:
            orig = flat[e]
            vals = []
            with no_grad():
                for k in (2, 1, -1, -2):
                    flat[e] = orig + k * epsilon
                    vals.append(fn().item())
            flat[e] = orig
            if not np.all(np.isfinite(vals)):
                raise FloatingPointError(f"non-finite function value while perturbing {name}[{e}]")
            f2, f1, m1, m2 = vals
            numeric = (8.0 * (f1 - m1) - (f2 - m2)) / (12.0 * epsilon)
            worst = max(worst, relative_error(float(grad.reshape(-1)[e]), numeric, floor))
        report.max_rel_error[name] = worst
        report.checked_entries[name] = int(len(entries))
    for p in params:
        p.grad = None
    return report
