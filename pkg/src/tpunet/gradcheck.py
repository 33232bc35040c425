"""Analytic-vs-numeric gradient comparison via central finite differences.

Coordinates sitting next to a non-differentiable kink (relu corners,
clamp edges, pool tie switches) make the difference quotient lie about
the local slope. A coordinate that fails the direct comparison is
therefore re-tested at a few bases shifted along that coordinate: the
analytic gradient is recomputed there and must match the finite
difference at one of the shifted, kink-free points. A wrong backward
rule is wrong at every nearby base, so real bugs still fail.
"""

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad, reset_tape

# shifts (in units of eps) tried when the base point sits on a kink;
# retries also shrink eps, since a dense kink field (many downstream relu
# units moving with one coordinate) can leave no clean window at full eps
_RETRY_SHIFTS = (3.0, -3.0, 7.0, -7.0, 13.0, -13.0)
_RETRY_EPS_SHRINK = 8.0


@dataclass
class ParamReport:
    name: str
    max_rel_err: float
    worst_coord: int
    checked: int
    retried: int


@dataclass
class GradCheckReport:
    tol: float
    eps: float
    params: list = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((p.max_rel_err for p in self.params), default=0.0)

    @property
    def passed(self) -> bool:
        return all(p.max_rel_err <= self.tol for p in self.params)

    def summary(self) -> str:
        lines = []
        for p in self.params:
            status = "ok" if p.max_rel_err <= self.tol else "FAIL"
            lines.append(f"{p.name}: max_rel_err={p.max_rel_err:.3e} "
                         f"({p.checked} checked, {p.retried} kink-retried) {status}")
        return "\n".join(lines)


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor],
               eps: float = 1e-3, tol: float = 1e-4, atol: float = 2e-6,
               names: Sequence[str] = None) -> GradCheckReport:
    """Compare tape gradients of ``f()`` against finite differences.

    ``f`` must be deterministic, read the current ``params`` values, and
    return a scalar. Failures are reported, not raised. Differences below
    ``atol`` count as zero error: central differences at this eps carry
    O(eps^2) truncation noise, which would swamp the relative comparison
    wherever the true gradient is tiny.
    """
    if names is None:
        names = [f"param{i}" for i in range(len(params))]

    def fd_eval() -> float:
        with no_grad():
            return f().item()

    def analytic_grads() -> list:
        for p in params:
            p.zero_grad()
        reset_tape()
        backward(f())
        grads = [None if p.grad is None else p.grad.copy() for p in params]
        reset_tape()
        return grads

    def err_of(a: float, central: float) -> float:
        diff = abs(a - central)
        if diff <= atol:
            return 0.0
        return diff / (abs(a) + abs(central))

    analytic = analytic_grads()

    report = GradCheckReport(tol=tol, eps=eps)
    for pi, (p, name, an) in enumerate(zip(params, names, analytic)):
        flat = p.data.reshape(-1)
        a_flat = np.zeros_like(flat) if an is None else an.reshape(-1)
        worst, worst_i, retried = 0.0, -1, 0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = fd_eval()
            flat[i] = orig - eps
            f_minus = fd_eval()
            flat[i] = orig
            err = err_of(a_flat[i], (f_plus - f_minus) / (2 * eps))
            if err > tol:
                retried += 1
                err = min(err, _retest_shifted(f, fd_eval, analytic_grads,
                                               pi, flat, i, orig, eps, err_of))
            if err > worst:
                worst, worst_i = err, i
        report.params.append(ParamReport(name, worst, worst_i, flat.size, retried))
    return report


def _retest_shifted(f, fd_eval, analytic_grads, param_index: int,
                    flat: np.ndarray, i: int, orig: float, eps: float,
                    err_of) -> float:
    """Best error over bases shifted along coordinate ``i``."""
    best = np.inf
    eps_r = eps / _RETRY_EPS_SHRINK
    try:
        for shift in _RETRY_SHIFTS:
            flat[i] = orig + shift * eps
            grads = analytic_grads()
            an = grads[param_index]
            a_i = 0.0 if an is None else an.reshape(-1)[i]
            base = flat[i]
            flat[i] = base + eps_r
            f_plus = fd_eval()
            flat[i] = base - eps_r
            f_minus = fd_eval()
            flat[i] = base
            best = min(best, err_of(a_i, (f_plus - f_minus) / (2 * eps_r)))
            if best == 0.0:
                break
    finally:
        flat[i] = orig
    return best
