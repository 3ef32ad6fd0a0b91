"""Finite-difference gradient checking.

Central differences with h=1e-5 against the tape's analytic gradients.
Meant to run in float64; the checker refuses float32 parameters because the
comparison would be dominated by rounding noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError
from .tensor import Tensor


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_err: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v < self.tolerance for v in self.max_rel_err.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    def __str__(self):
        lines = [f"grad check ({'pass' if self.passed else 'FAIL'}, tol {self.tolerance:g})"]
        for name, err in sorted(self.max_rel_err.items(), key=lambda kv: -kv[1]):
            flag = "" if err < self.tolerance else "  <-- FAIL"
            lines.append(f"  {name}: {err:.3e}{flag}")
        return "\n".join(lines)


def grad_check(fn, params: dict[str, Tensor], tolerance: float = 1e-4,
               h: float = 1e-5, max_elems: int = 10_000) -> GradCheckReport:
    """Compare analytic gradients of `fn()` with central finite differences.

    `fn` is a closure producing a scalar Tensor from the current values of
    `params` (a name -> Tensor mapping; gradients are checked per block).
    Anything `fn` depends on that is not in `params` is held constant, which
    is how stop-gradient sides are pinned during loss checks.
    """
    total = sum(int(p.size) for p in params.values())
    if total > max_elems:
        raise UsageError(f"grad_check limited to {max_elems} parameters, got {total}")
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise UsageError(f"grad_check requires float64 parameters ({name!r} is {p.data.dtype})")

    for p in params.values():
        p.grad = None
    loss = fn()
    if loss.data.size != 1:
        raise UsageError("grad_check expects fn() to return a scalar")
    loss.backward()
    analytic = {
        name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        for name, p in params.items()
    }
    for p in params.values():
        p.grad = None

    report = GradCheckReport(tolerance=tolerance)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn().item()
            flat[i] = orig - h
            down = fn().item()
            flat[i] = orig
            fd[i] = (up - down) / (2.0 * h)
        fd = fd.reshape(p.data.shape)
        a = analytic[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-6)
        report.max_rel_err[name] = float(np.max(np.abs(a - fd) / denom)) if a.size else 0.0
    return report
