"""Proportion loss and its per-level sum: the only training signals."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import DomainError, InfiniteLossError


def bag_estimate(instance_probs: ad.Tensor) -> ad.Tensor:
    """Bag-level class estimate: the mean of per-instance probability columns."""
    p = instance_probs if isinstance(instance_probs, ad.Tensor) else ad.Tensor(instance_probs)
    sums = p.data.sum(axis=0)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise DomainError(f"instance probability columns must sum to 1, worst "
                          f"{float(np.max(np.abs(sums - 1.0))):.2e} off")
    return ad.mean_cols(p)


def proportion_loss(target: np.ndarray, estimate: ad.Tensor) -> ad.Tensor:
    """Cross-entropy -sum_c p_c log p_hat_c between a bag's true and estimated
    proportions; by Gibbs it is at least the entropy of the target."""
    target = np.asarray(target, dtype=np.float64)
    if np.any(target < 0.0) or abs(float(target.sum()) - 1.0) > 1e-9:
        raise DomainError("target proportions must lie on the simplex")
    est = estimate if isinstance(estimate, ad.Tensor) else ad.Tensor(estimate)
    flat = est.data.ravel()
    if flat.shape != target.shape:
        raise DomainError(f"estimate shape {est.data.shape} does not match "
                          f"{target.shape} targets")
    support = np.flatnonzero(target > 0.0)
    if np.any(flat[support] <= 0.0):
        bad = int(support[np.argmax(flat[support] <= 0.0)])
        raise InfiniteLossError(
            f"estimated proportion is 0 for category {bad} with target "
            f"{target[bad]:.3g}; the estimate path must stay strictly positive")
    col = est if est.data.ndim == 2 else ad.reshape(est, (len(flat), 1))
    picked = ad.gather_rows(col, support)
    weighted = ad.mul(ad.log(picked), ad.Tensor(target[support][:, None]))
    return ad.neg(ad.sum_all(weighted))


def hierarchical_proportion_loss(targets: dict[int, np.ndarray],
                                 estimates: dict[int, ad.Tensor],
                                 weights: dict[int, float] | None = None) -> ad.Tensor:
    """Sum of per-level proportion losses over every level present in targets.

    Levels are unweighted by default; optional weights are exposed as hooks
    and default to 1.
    """
    if not targets:
        raise ValueError("no target levels given")
    total = None
    for level in sorted(targets):
        if level not in estimates:
            raise ValueError(f"missing estimate for level {level}")
        term = proportion_loss(targets[level], estimates[level])
        w = 1.0 if weights is None else float(weights.get(level, 1.0))
        if w != 1.0:
            term = ad.mul(term, ad.Tensor(w))
        total = term if total is None else ad.add(total, term)
    return total
