"""Finite-difference validation of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import Tensor, no_grad
from .errors import NumericalError, ShapeError

# a coordinate is treated as nondifferentiable when its one-sided slopes
# disagree by more than this relative gap (kinks straddled by +/- eps)
_KINK_GAP = 1e-3


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    n_checked: int
    n_excluded: int
    worst_index: tuple | None = None
    excluded: list[tuple] = field(default_factory=list)

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"{status}: max_rel_err={self.max_rel_err:.3e} over {self.n_checked} "
                f"coordinates ({self.n_excluded} excluded at kinks)")


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor,
               eps: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare the reverse-mode gradient of f at x against central differences.

    f must map x to a scalar tensor. Coordinates where the left and right
    one-sided slopes disagree (a kink within eps) are excluded from the
    comparison. Relative error is used except where the analytic gradient is
    below 1e-8 in magnitude, where absolute error applies.
    """
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    if not x.requires_grad:
        raise ValueError("grad_check target tensor must require grad")

    x.grad = None
    out = f(x)
    if out.data.shape != ():
        raise ShapeError(f"grad_check needs a scalar-valued f, got shape {out.data.shape}")
    f0 = float(out.data)
    if not np.isfinite(f0):
        raise NumericalError(f"f(x) is not finite: {f0}")
    out.backward()
    analytic = np.zeros(x.data.shape) if x.grad is None else np.array(x.grad, copy=True)

    max_err = 0.0
    worst = None
    n_checked = 0
    excluded: list[tuple] = []
    with no_grad():
        for key in np.ndindex(x.data.shape):
            orig = x.data[key]
            x.data[key] = orig + eps
            fp = float(f(x).data)
            x.data[key] = orig - eps
            fm = float(f(x).data)
            x.data[key] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericalError(f"non-finite f under perturbation at coordinate {key}")
            d_plus = (fp - f0) / eps
            d_minus = (f0 - fm) / eps
            if abs(d_plus - d_minus) > _KINK_GAP * (1.0 + max(abs(d_plus), abs(d_minus))):
                excluded.append(key)
                continue
            numeric = (fp - fm) / (2.0 * eps)
            a = float(analytic[key])
            if abs(a) < 1e-8:
                err = abs(a - numeric)
            else:
                err = abs(a - numeric) / max(abs(a), abs(numeric))
            n_checked += 1
            if err > max_err:
                max_err = err
                worst = key
    return GradCheckReport(max_rel_err=max_err, passed=max_err <= tol,
                           n_checked=n_checked, n_excluded=len(excluded),
                           worst_index=worst, excluded=excluded)


def check_parameters(build_loss: Callable[[], Tensor], params: dict[str, Tensor],
                     eps: float = 1e-5, tol: float = 1e-4) -> dict[str, GradCheckReport]:
    """Run grad_check for every named parameter of a model.

    build_loss rebuilds the forward pass from the live parameter tensors, so
    each parameter is checked by in-place perturbation of its values.
    """
    reports = {}
    for name, p in params.items():
        for other in params.values():
            other.grad = None
        reports[name] = grad_check(lambda _: build_loss(), p, eps=eps, tol=tol)
    return reports
