"""Coarse-to-fine category tree and proportion coarsening.

Levels are 1-based (1 = coarsest, H = finest); category indices are 0-based
in memory. Serialized files carry 1-based categories (see datasets).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class Hierarchy:
    """Category tree given by per-level sizes and explicit parent maps.

    parent_maps[i] maps each category of level i+2 to its parent at level
    i+1 (both 0-based indices into the respective level's categories).
    """

    sizes: tuple[int, ...]
    parent_maps: tuple[np.ndarray, ...] = field(default_factory=tuple)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        if len(sizes) < 1 or any(s < 1 for s in sizes):
            raise ValueError(f"per-level sizes must be positive, got {sizes}")
        maps = tuple(np.asarray(m, dtype=np.int64) for m in self.parent_maps)
        object.__setattr__(self, "parent_maps", maps)
        if len(maps) != len(sizes) - 1:
            raise ValueError(f"expected {len(sizes) - 1} parent maps for {len(sizes)} levels, "
                             f"got {len(maps)}")
        for i, m in enumerate(maps):
            child_n, parent_n = sizes[i + 1], sizes[i]
            if parent_n > child_n:
                raise ValueError(f"level {i + 1} has {parent_n} categories but level "
                                 f"{i + 2} has only {child_n}")
            if m.shape != (child_n,):
                raise ValueError(f"parent map {i} must have length {child_n}, got {m.shape}")
            if m.min() < 0 or m.max() >= parent_n:
                raise ValueError(f"parent map {i} has entries outside [0, {parent_n})")
            if len(np.unique(m)) != parent_n:
                raise ValueError(f"parent map {i} is not surjective onto level {i + 1}")
            m.flags.writeable = False

    @property
    def levels(self) -> int:
        return len(self.sizes)

    @property
    def n_fine(self) -> int:
        return self.sizes[-1]

    def _check_level(self, level: int) -> None:
        if not 1 <= level <= self.levels:
            raise ValueError(f"level must be in [1, {self.levels}], got {level}")

    def ancestor(self, fine_category: int, level: int) -> int:
        """Level-`level` ancestor of a fine category (identity at the fine level)."""
        self._check_level(level)
        if not 0 <= fine_category < self.n_fine:
            raise ValueError(f"fine category {fine_category} outside [0, {self.n_fine})")
        cur = fine_category
        for lev in range(self.levels - 1, level - 1, -1):
            cur = int(self.parent_maps[lev - 1][cur])
        return cur

    def fine_ancestors(self, level: int) -> np.ndarray:
        """Vector of level-`level` ancestors for all fine categories."""
        self._check_level(level)
        anc = np.arange(self.n_fine, dtype=np.int64)
        for lev in range(self.levels - 1, level - 1, -1):
            anc = self.parent_maps[lev - 1][anc]
        return anc

    def coarsen_mass(self, v, level: int) -> np.ndarray:
        """Sum a nonnegative fine-level vector into level-`level` buckets."""
        self._check_level(level)
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n_fine,):
            raise ShapeError(f"expected a vector over {self.n_fine} fine categories, "
                             f"got shape {v.shape}")
        if np.any(v < 0.0):
            raise ValueError("coarsening expects nonnegative entries")
        out = np.zeros(self.sizes[level - 1])
        np.add.at(out, self.fine_ancestors(level), v)
        return out

    def coarsen_proportions(self, p_fine, level: int) -> np.ndarray:
        """Coarsen a fine-level probability vector to any ancestor level."""
        p_fine = np.asarray(p_fine, dtype=np.float64)
        if p_fine.shape == (self.n_fine,) and abs(float(p_fine.sum()) - 1.0) > 1e-9:
            raise ValueError(f"proportions must sum to 1, got {float(p_fine.sum())!r}")
        return self.coarsen_mass(p_fine, level)


def balanced_hierarchy(sizes) -> Hierarchy:
    """Build a tree with contiguous, evenly sized sibling groups at each level."""
    sizes = tuple(int(s) for s in sizes)
    maps = []
    for parent_n, child_n in zip(sizes[:-1], sizes[1:]):
        maps.append(np.arange(child_n, dtype=np.int64) * parent_n // child_n)
    return Hierarchy(sizes=sizes, parent_maps=tuple(maps))
