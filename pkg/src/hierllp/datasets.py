"""Desk-scale instance datasets: synthetic hierarchical clusters and file I/O.

The dataset file is a self-describing text container (version ``LLPDS v1``):

    LLPDS v1
    <N> <d_in> <H>
    <per-level sizes, H ints>
    <H-1 parent-map lines, child-level length, 1-based parent ids>
    test_ids <k> <k 0-based row ids>
    <N records: fine label (1-based), then d_in floats>

Floats are written with 17 significant digits so save->load is lossless.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass

import numpy as np

from .errors import ParseError
from .hierarchy import Hierarchy, balanced_hierarchy

_MAGIC = "LLPDS v1"


@dataclass
class InstanceDataset:
    features: np.ndarray        # N x d_in
    labels_fine: np.ndarray     # N ints, 0-based in memory (files carry 1-based)
    hierarchy: Hierarchy
    train_ids: np.ndarray
    test_ids: np.ndarray
    source_path: str | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels_fine = np.asarray(self.labels_fine, dtype=np.int64)
        self.train_ids = np.asarray(self.train_ids, dtype=np.int64)
        self.test_ids = np.asarray(self.test_ids, dtype=np.int64)
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise ValueError(f"features must be a matrix, got shape {self.features.shape}")
        if self.labels_fine.shape != (n,):
            raise ValueError(f"expected {n} labels, got {self.labels_fine.shape}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        C = self.hierarchy.n_fine
        if n and (self.labels_fine.min() < 0 or self.labels_fine.max() >= C):
            raise ValueError(f"labels must lie in [0, {C})")
        ids = np.concatenate([self.train_ids, self.test_ids])
        if len(np.unique(ids)) != len(ids) or (len(ids) and (ids.min() < 0 or ids.max() >= n)):
            raise ValueError("train/test ids must be disjoint valid row indices")
        for name, split in (("train", self.train_ids), ("test", self.test_ids)):
            present = np.unique(self.labels_fine[split])
            if len(present) != C:
                raise ValueError(f"every fine category must appear in the {name} split")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d_in(self) -> int:
        return self.features.shape[1]


def level_separations(coarse_sep: float, fine_sep: float, levels: int) -> list[float]:
    """Per-level offset norms, geometrically interpolated coarse -> fine."""
    if levels == 1:
        return [coarse_sep]
    return [float(coarse_sep ** ((levels - l) / (levels - 1)) *
                  fine_sep ** ((l - 1) / (levels - 1))) for l in range(1, levels + 1)]


def generate_synthetic(seed: int, C: int, per_level_sizes, n_per_class: int, d_in: int,
                       coarse_sep: float, fine_sep: float, noise_sigma: float,
                       test_ratio: float = 0.25) -> InstanceDataset:
    """Hierarchical Gaussian clusters with one geometric scale per level.

    Coarse classes sit at exactly pairwise distance coarse_sep (orthogonal
    placement). Each finer level adds a sibling offset whose norm
    interpolates geometrically between coarse_sep and fine_sep, so every
    level is easier to separate than the next: siblings at the finest level
    differ by sqrt(2)*fine_sep while cousins differ by the parent level's
    larger scale. Sibling offset directions are orthonormal within each
    parent and orthogonal to the coarse span. Instances add
    N(0, noise_sigma^2 I). Deterministic given the seed.
    """
    sizes = tuple(int(s) for s in per_level_sizes)
    if sizes[-1] != C:
        raise ValueError(f"per_level_sizes must end in C={C}, got {sizes}")
    hierarchy = balanced_hierarchy(sizes)
    if not fine_sep < coarse_sep:
        raise ValueError(f"fine_sep ({fine_sep}) must be smaller than coarse_sep ({coarse_sep})")
    if n_per_class < 4:
        raise ValueError(f"n_per_class must be at least 4, got {n_per_class}")
    if not 0.0 < test_ratio < 1.0:
        raise ValueError(f"test_ratio must be in (0, 1), got {test_ratio}")
    k_coarse = sizes[0]
    max_children = max(int(np.bincount(m).max()) for m in hierarchy.parent_maps) \
        if hierarchy.parent_maps else 1
    if d_in < k_coarse + max_children:
        raise ValueError(f"d_in={d_in} too small for {k_coarse} coarse classes with up to "
                         f"{max_children} children per branch")

    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(d_in, k_coarse)))
    seps = level_separations(coarse_sep, fine_sep, len(sizes))
    centroids = q.T * (seps[0] / np.sqrt(2.0))

    for depth in range(1, len(sizes)):
        parent_map = hierarchy.parent_maps[depth - 1]
        child_centroids = np.empty((sizes[depth], d_in))
        for g in range(sizes[depth - 1]):
            children = np.flatnonzero(parent_map == g)
            raw = rng.normal(size=(d_in, len(children)))
            raw -= q @ (q.T @ raw)  # keep offsets orthogonal to the coarse span
            dirs, _ = np.linalg.qr(raw)
            child_centroids[children] = centroids[g] + seps[depth] * dirs.T
        centroids = child_centroids
    fine_centroids = centroids

    n = C * n_per_class
    features = np.empty((n, d_in))
    labels = np.repeat(np.arange(C, dtype=np.int64), n_per_class)
    for c in range(C):
        block = slice(c * n_per_class, (c + 1) * n_per_class)
        noise = rng.normal(size=(n_per_class, d_in)) * noise_sigma
        features[block] = fine_centroids[c] + noise

    k_test = int(round(n_per_class * test_ratio))
    k_test = min(max(k_test, 1), n_per_class - 1)
    train_ids, test_ids = [], []
    for c in range(C):
        perm = c * n_per_class + rng.permutation(n_per_class)
        test_ids.append(perm[:k_test])
        train_ids.append(perm[k_test:])
    return InstanceDataset(features=features, labels_fine=labels, hierarchy=hierarchy,
                           train_ids=np.sort(np.concatenate(train_ids)),
                           test_ids=np.sort(np.concatenate(test_ids)))


def nearest_centroid_accuracy(ds: InstanceDataset) -> float:
    """Fine accuracy of the nearest train-split-centroid rule on the test split."""
    C = ds.hierarchy.n_fine
    centroids = np.empty((C, ds.d_in))
    train_labels = ds.labels_fine[ds.train_ids]
    train_feats = ds.features[ds.train_ids]
    for c in range(C):
        centroids[c] = train_feats[train_labels == c].mean(axis=0)
    test_feats = ds.features[ds.test_ids]
    d2 = ((test_feats[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    pred = np.argmin(d2, axis=1)
    return float(np.mean(pred == ds.labels_fine[ds.test_ids]))


# ---------------------------------------------------------------------------
# serialization

def _fmt(x: float) -> str:
    return "%.17g" % x


def dumps_dataset(ds: InstanceDataset) -> str:
    h = ds.hierarchy
    out = io.StringIO()
    out.write(f"{_MAGIC}\n")
    out.write(f"{ds.n} {ds.d_in} {h.levels}\n")
    out.write(" ".join(str(s) for s in h.sizes) + "\n")
    for m in h.parent_maps:
        out.write(" ".join(str(int(p) + 1) for p in m) + "\n")
    out.write("test_ids " + " ".join([str(len(ds.test_ids))] +
                                     [str(int(i)) for i in ds.test_ids]) + "\n")
    for i in range(ds.n):
        row = " ".join(_fmt(v) for v in ds.features[i])
        out.write(f"{int(ds.labels_fine[i]) + 1} {row}\n")
    return out.getvalue()


def dataset_hash(ds: InstanceDataset) -> str:
    return hashlib.sha256(dumps_dataset(ds).encode("utf-8")).hexdigest()


def save_dataset(ds: InstanceDataset, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_dataset(ds))
    ds.source_path = str(path)


class _LineCursor:
    """Line reader over raw bytes that tracks the byte offset of each line."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def next_line(self, what: str) -> tuple[str, int]:
        if self.pos >= len(self.data):
            raise ParseError(f"unexpected end of file while reading {what}", self.pos)
        start = self.pos
        nl = self.data.find(b"\n", self.pos)
        if nl == -1:
            raw, self.pos = self.data[self.pos:], len(self.data)
        else:
            raw, self.pos = self.data[self.pos:nl], nl + 1
        try:
            return raw.decode("utf-8"), start
        except UnicodeDecodeError as e:
            raise ParseError(f"undecodable bytes in {what}", start) from e


def _ints(line: str, n: int, what: str, offset: int) -> list[int]:
    parts = line.split()
    if len(parts) != n:
        raise ParseError(f"expected {n} integers for {what}, got {len(parts)}", offset)
    try:
        return [int(p) for p in parts]
    except ValueError as e:
        raise ParseError(f"bad integer in {what}: {e}", offset) from e


def loads_dataset(text: bytes | str, source_path: str | None = None) -> InstanceDataset:
    data = text.encode("utf-8") if isinstance(text, str) else text
    cur = _LineCursor(data)

    line, off = cur.next_line("header")
    if line.strip() != _MAGIC:
        raise ParseError(f"unknown dataset header {line.strip()!r}, expected {_MAGIC!r}", off)
    line, off = cur.next_line("dimensions")
    n, d_in, levels = _ints(line, 3, "dimensions (N d_in H)", off)
    if n < 0 or d_in < 1 or levels < 1:
        raise ParseError(f"invalid dimensions N={n} d_in={d_in} H={levels}", off)

    line, off = cur.next_line("per-level sizes")
    sizes = _ints(line, levels, "per-level sizes", off)
    maps = []
    for l in range(levels - 1):
        line, off = cur.next_line(f"parent map {l + 1}")
        vals = _ints(line, sizes[l + 1], f"parent map {l + 1}", off)
        maps.append(np.array(vals, dtype=np.int64) - 1)
    try:
        hierarchy = Hierarchy(sizes=tuple(sizes), parent_maps=tuple(maps))
    except ValueError as e:
        raise ParseError(f"invalid hierarchy: {e}", off) from e

    line, off = cur.next_line("test id list")
    parts = line.split()
    if not parts or parts[0] != "test_ids":
        raise ParseError("expected 'test_ids' line", off)
    vals = _ints(line[len("test_ids"):], len(parts) - 1, "test ids", off)
    if not vals or vals[0] != len(vals) - 1:
        raise ParseError("test id count does not match the list", off)
    test_ids = np.array(vals[1:], dtype=np.int64)
    if len(test_ids) and (test_ids.min() < 0 or test_ids.max() >= n):
        raise ParseError(f"test ids outside [0, {n})", off)

    features = np.empty((n, d_in))
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        line, off = cur.next_line(f"record {i}")
        parts = line.split()
        if len(parts) != d_in + 1:
            raise ParseError(f"record {i}: expected label plus {d_in} features, "
                             f"got {len(parts)} fields", off)
        try:
            labels[i] = int(parts[0]) - 1
            features[i] = [float(p) for p in parts[1:]]
        except ValueError as e:
            raise ParseError(f"record {i}: {e}", off) from e
        if not np.all(np.isfinite(features[i])):
            raise ParseError(f"record {i}: non-finite feature", off)

    mask = np.ones(n, dtype=bool)
    mask[test_ids] = False
    train_ids = np.flatnonzero(mask)
    try:
        return InstanceDataset(features=features, labels_fine=labels, hierarchy=hierarchy,
                               train_ids=train_ids, test_ids=test_ids,
                               source_path=source_path)
    except ValueError as e:
        raise ParseError(f"inconsistent dataset: {e}", 0) from e


def load_dataset(path: str) -> InstanceDataset:
    with open(path, "rb") as f:
        return loads_dataset(f.read(), source_path=str(path))
