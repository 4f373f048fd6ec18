"""Category-blocked dictionary, unrolled proximal encoding, and the ISTA oracle.

The unrolled encoder iterates, for t = 1..L,

    Z <- shrink( (I - G/mu) Z + (D^T F)/mu,  lambda/mu )     G = D^T D

with D column-masked per the active schedule entry before each layer's
recomputation; masking also zeroes the corresponding code rows so masked
blocks carry exact zeros from the transition onward. The threshold is
lambda/mu so each layer is the exact proximal-gradient step of the
reconstruction objective 0.5*||F - D Z||^2 + lambda*||Z||_1 with stepsize
1/mu. ``ista_oracle`` runs the same mathematics as a plain numpy loop,
independent of the differentiable path, for validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from .errors import DivergenceError, DomainError, ShapeError, StepsizeError
from .hierarchy import Hierarchy


def gram_spectral_norm(D: np.ndarray, iterations: int = 100, seed: int = 0) -> float:
    """Largest eigenvalue of D^T D by power iteration (the valid-stepsize bound)."""
    G = D.T @ D
    rng = np.random.default_rng(seed)
    v = rng.normal(size=G.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(iterations):
        w = G @ v
        n = np.linalg.norm(w)
        if n == 0.0:
            return 0.0
        v = w / n
    return float(v @ (G @ v))


@dataclass
class CategoryDictionary:
    """Dictionary with one block of ``n_atoms`` columns per fine category.

    ``weights`` is d_feat x (C * n_atoms); block c occupies columns
    [c * n_atoms, (c+1) * n_atoms). ``mu`` is the learnable stepsize scalar.
    """

    weights: ad.Tensor
    mu: ad.Tensor
    n_atoms: int
    n_categories: int

    @classmethod
    def init_random(cls, d_feat: int, n_categories: int, n_atoms: int,
                    rng: np.random.Generator) -> "CategoryDictionary":
        """Unit-normalized Gaussian columns; mu starts at the gram spectral norm."""
        D = rng.normal(size=(d_feat, n_categories * n_atoms))
        kernels.normalize_columns(D)
        mu0 = gram_spectral_norm(D)
        return cls(weights=ad.Tensor(D, requires_grad=True),
                   mu=ad.Tensor(mu0, requires_grad=True),
                   n_atoms=n_atoms, n_categories=n_categories)

    @property
    def n_columns(self) -> int:
        return self.weights.data.shape[1]

    def block(self, c: int) -> slice:
        return slice(c * self.n_atoms, (c + 1) * self.n_atoms)

    def renormalize(self) -> None:
        """Project every column back to unit norm (applied after optimizer steps)."""
        kernels.normalize_columns(self.weights.data)

    def check_invariants(self) -> None:
        if self.n_columns != self.n_categories * self.n_atoms:
            raise ShapeError(f"dictionary has {self.n_columns} columns, expected "
                             f"{self.n_categories} x {self.n_atoms}")
        if float(self.mu.data) <= 0.0:
            raise DomainError(f"stepsize mu must be positive, got {float(self.mu.data)}")


@dataclass(frozen=True)
class MaskSchedule:
    """Unrolled-layer schedule: at layer t the level ``transitions[t]`` mask
    engages and stays active until the next transition. Levels must be
    nondecreasing in t (progressive coarse-to-fine refinement)."""

    transitions: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        last_level = 0
        for t in sorted(self.transitions):
            if t < 1:
                raise ValueError(f"transition layer {t} must be >= 1")
            level = self.transitions[t]
            if level < last_level:
                raise ValueError("mask levels must be nondecreasing across layers")
            last_level = level

    @classmethod
    def spread(cls, layers: int, levels) -> "MaskSchedule":
        """Spread the given mask levels over equal trailing segments of the unroll.

        With L=9 and levels (1, 2) this yields transitions {4: 1, 7: 2}:
        a third unmasked, a third coarse, a third medium. Each level needs its
        own layer, so layers must be at least len(levels) + 1.
        """
        levels = sorted(levels)
        k = len(levels)
        if layers < k + 1:
            raise ValueError(f"{k} mask levels need at least {k + 1} unrolled layers, "
                             f"got {layers}")
        transitions = {}
        prev = 1
        for i, level in enumerate(levels, start=1):
            t = max(layers * i // (k + 1) + 1, prev + 1)
            transitions[t] = level
            prev = t
        return cls(transitions=transitions)


def build_mask(level_probs: np.ndarray, hierarchy: Hierarchy, level: int,
               n_atoms: int) -> np.ndarray:
    """Column mask over C*n_atoms atoms: 1 where the fine category's level-`level`
    ancestor has positive probability, else 0."""
    level_probs = np.asarray(level_probs, dtype=np.float64).ravel()
    if level_probs.shape != (hierarchy.sizes[level - 1],):
        raise ShapeError(f"level {level} probabilities have shape {level_probs.shape}, "
                         f"hierarchy expects {hierarchy.sizes[level - 1]}")
    allowed = level_probs[hierarchy.fine_ancestors(level)] > 0.0
    return np.repeat(allowed.astype(np.float64), n_atoms)


def unrolled_encode(F: ad.Tensor, dictionary: CategoryDictionary, lambda_bag,
                    layers: int, schedule: MaskSchedule | None = None,
                    masks: dict[int, np.ndarray] | None = None,
                    mask_provider=None) -> tuple[ad.Tensor, dict[int, ad.Tensor]]:
    """Run L unrolled proximal layers; returns the final code and the code
    snapshot taken at each mask-transition layer (keyed by level).

    Masks come either from ``masks`` (precomputed per level) or from
    ``mask_provider(level, code_snapshot)`` invoked at each transition; the
    provider path is how the level classifiers hook in. A mask is a vector
    over atom columns shared by the whole bag, or a matrix with one column
    per instance (per-instance suppression); either way it is a constant in
    the backward pass. Differentiable w.r.t. the dictionary, mu, lambda
    and F.
    """
    if layers < 1:
        raise ValueError(f"need at least one unrolled layer, got {layers}")
    F = F if isinstance(F, ad.Tensor) else ad.Tensor(F)
    if F.data.ndim != 2 or F.data.shape[0] != dictionary.weights.data.shape[0]:
        raise ShapeError(f"features {F.data.shape} do not match dictionary rows "
                         f"{dictionary.weights.data.shape[0]}")
    lam = lambda_bag if isinstance(lambda_bag, ad.Tensor) else ad.Tensor(float(lambda_bag))
    if float(lam.data) < 0.0:
        raise DomainError(f"lambda must be nonnegative, got {float(lam.data)}")

    transitions = schedule.transitions if schedule is not None else {}
    n_cols = dictionary.n_columns
    n_inst = F.data.shape[1]
    D = dictionary.weights
    inv_mu = ad.reciprocal(dictionary.mu)
    thresh = ad.mul(lam, inv_mu)
    eye = ad.Tensor(np.eye(n_cols))

    # one graph node set per distinct mask: recomputing the masked gram for
    # every layer of a segment would rebuild the identical subgraph (same D,
    # same mask), so reuse it; gradient accumulation sums the per-layer
    # contributions exactly as explicit recomputation would
    gram_cache: dict[bytes, tuple[ad.Tensor, ad.Tensor]] = {}

    def prox_step(vec: np.ndarray | None, Z_sel: ad.Tensor, F_sel_fn,
                  key_extra: bytes = b"") -> ad.Tensor:
        key = (b"none" if vec is None else vec.tobytes()) + key_extra
        if key not in gram_cache:
            D_sel = D if vec is None or np.all(vec == 1.0) else ad.scale_columns(D, vec)
            D_T = ad.transpose(D_sel)
            W_t = ad.sub(eye, ad.mul(ad.matmul(D_T, D_sel), inv_mu))
            drive = ad.mul(ad.matmul(D_T, F_sel_fn()), inv_mu)
            gram_cache[key] = (W_t, drive)
        W_t, drive = gram_cache[key]
        return ad.soft_threshold(ad.add(ad.matmul(W_t, Z_sel), drive), thresh)

    def column_groups(mask: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        by_mask: dict[bytes, list[int]] = {}
        for j in range(mask.shape[1]):
            by_mask.setdefault(mask[:, j].tobytes(), []).append(j)
        return [(mask[:, cols[0]], np.asarray(cols, dtype=np.intp))
                for cols in by_mask.values()]

    Z = ad.Tensor(np.zeros((n_cols, n_inst)))
    stages: dict[int, ad.Tensor] = {}
    active_mask: np.ndarray | None = None
    active_groups: list[tuple[np.ndarray, np.ndarray]] | None = None
    for t in range(1, layers + 1):
        if t in transitions:
            level = transitions[t]
            stages.setdefault(level, Z)
            if mask_provider is not None:
                mask = np.asarray(mask_provider(level, Z), dtype=np.float64)
            elif masks is not None and level in masks:
                mask = np.asarray(masks[level], dtype=np.float64)
            else:
                raise ValueError(f"no mask available for level {level} at layer {t}")
            if mask.shape not in ((n_cols,), (n_cols, n_inst)):
                raise ShapeError(f"mask for level {level} has shape {mask.shape}, "
                                 f"expected ({n_cols},) or ({n_cols}, {n_inst})")
            active_mask = mask
            active_groups = (column_groups(mask) if mask.ndim == 2 else None)
            # masked blocks go exactly to zero from this layer on
            Z = (ad.scale_rows(Z, active_mask) if active_mask.ndim == 1
                 else ad.mul(Z, ad.Tensor(active_mask)))
        if active_mask is None:
            Z = prox_step(None, Z, lambda: F, b"full")
        elif active_mask.ndim == 1:
            Z = prox_step(active_mask, Z, lambda: F, b"full")
        elif len(active_groups) == 1:
            Z = prox_step(active_groups[0][0], Z, lambda: F, b"full")
        else:
            # per-instance masks: update instances in groups sharing a mask
            total = None
            for vec, cols in active_groups:
                Z_g = prox_step(vec, ad.gather_cols(Z, cols),
                                lambda c=cols: ad.gather_cols(F, c), cols.tobytes())
                piece = ad.scatter_cols(Z_g, cols, n_inst)
                total = piece if total is None else ad.add(total, piece)
            Z = total
        if not np.all(np.isfinite(Z.data)):
            raise DivergenceError(t)
    return Z, stages


def ista_oracle(F: np.ndarray, D: np.ndarray, lam: float, mu: float,
                iterations: int) -> tuple[np.ndarray, np.ndarray]:
    """Classical ISTA with D fixed: the validation oracle for the unrolled path.

    Returns the code and the objective value after every iteration, and
    raises StepsizeError if the objective ever increases beyond roundoff
    (the symptom of mu below the gram spectral norm).
    """
    F = np.asarray(F, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    if F.ndim != 2 or D.ndim != 2 or F.shape[0] != D.shape[0]:
        raise ShapeError(f"signal {F.shape} does not match dictionary {D.shape}")
    if lam < 0.0:
        raise DomainError(f"lambda must be nonnegative, got {lam}")
    if mu <= 0.0:
        raise DomainError(f"mu must be positive, got {mu}")
    if iterations < 1:
        raise ValueError(f"need at least one iteration, got {iterations}")
    Z, obj = kernels.ista(D, F, float(lam), float(mu), int(iterations))
    worst = np.maximum.accumulate(-obj)  # running minimum via max of negatives
    rises = obj[1:] - (-worst[:-1])
    if np.any(rises > 1e-9 * (1.0 + np.abs(obj[1:]))):
        bad = int(np.argmax(rises > 1e-9 * (1.0 + np.abs(obj[1:])))) + 1
        raise StepsizeError(f"objective increased at iteration {bad}: "
                            f"stepsize 1/mu={1.0 / mu:.3g} too large for this dictionary")
    return Z, obj
