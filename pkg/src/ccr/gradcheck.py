"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import GradCheckInvalid
from .tensor import Tensor

# Floor on the gradient scale used to normalise errors; keeps blocks whose
# true gradient is zero from turning round-off into a huge relative error.
SCALE_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def __str__(self) -> str:
        lines = [f"{name}: {err:.3e}" for name, err in self.errors.items()]
        lines.append(f"max relative error {self.max_error:.3e} ({'pass' if self.passed else 'FAIL'})")
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute deviation divided by the block's gradient scale."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), SCALE_FLOOR)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def numerical_gradient(loss_fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5,
                       coords=None) -> np.ndarray:
    """Central differences at ``coords`` (flat indices, default all); other entries stay 0."""
    grad = np.zeros_like(param.data)
    flat, gflat = param.data.reshape(-1), grad.reshape(-1)
    for i in (range(flat.size) if coords is None else coords):
        orig = flat[i]
        flat[i] = orig + h
        plus = float(loss_fn().data)
        flat[i] = orig - h
        minus = float(loss_fn().data)
        flat[i] = orig
        gflat[i] = (plus - minus) / (2.0 * h)
    return grad


def finite_difference_check(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor],
                            h: float = 1e-5, tolerance: float = 1e-4,
                            max_per_block: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare backprop gradients of ``loss_fn`` against central differences.

    ``loss_fn`` takes no arguments and must rebuild its graph from the current
    values of ``params`` on every call.  Parameters are perturbed in place and
    restored afterwards.  With ``max_per_block`` only that many seeded random
    coordinates of each larger block are differenced.
    """
    first = loss_fn()
    if first.data.size != 1:
        raise GradCheckInvalid("loss_fn must return a scalar")
    again = loss_fn()
    if not np.array_equal(first.data, again.data):
        raise GradCheckInvalid("loss_fn is not deterministic; repeated evaluation differs")
    for p in params.values():
        p.grad = None
    again.backward()
    analytic = {}
    for name, p in params.items():
        analytic[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
    report = GradCheckReport(tolerance=tolerance)
    rng = np.random.default_rng(seed)
    for name, p in params.items():
        coords = None
        if max_per_block is not None and p.data.size > max_per_block:
            coords = np.sort(rng.choice(p.data.size, size=max_per_block, replace=False))
        numeric = numerical_gradient(loss_fn, p, h, coords)
        a = analytic[name]
        if coords is not None:
            a, numeric = a.reshape(-1)[coords], numeric.reshape(-1)[coords]
        report.errors[name] = relative_error(a, numeric)
    return report
