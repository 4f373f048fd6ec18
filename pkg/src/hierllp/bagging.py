"""Packing train instances into fixed-size bags with per-level proportions.

Bags carry instance ids and one proportion vector per hierarchy level; the
instance labels themselves never cross into training, which sees only the
``TrainView`` built here (features plus proportions).

Manifest file (version ``LLPBAGS v1``): header lines ``dataset_hash``,
``dataset_path``, ``bag_size``, ``dropped``, ``bags``; then per bag one
``ids`` line and H ``p <level> ...`` lines (floats at 17 significant digits).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import InstanceDataset, dataset_hash
from .errors import ParseError, StaleManifestError
from .hierarchy import Hierarchy

_MAGIC = "LLPBAGS v1"


@dataclass
class Bag:
    instance_ids: np.ndarray
    proportions: list[np.ndarray]  # index l-1 holds the level-l vector


@dataclass
class BagManifest:
    dataset_path: str
    dataset_hash: str
    bag_size: int
    dropped: int
    bags: list[Bag]


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "manifest ok: 0 violations"
        return "\n".join([f"{len(self.violations)} violation(s):"] +
                         [f"  - {v}" for v in self.violations])


def bag_proportions(labels: np.ndarray, hierarchy: Hierarchy, bag_size: int) -> list[np.ndarray]:
    """Per-level proportion vectors for one bag's fine labels.

    Coarser levels are derived by coarsening the fine vector so the stored
    values equal coarsen_proportions output bitwise.
    """
    counts = np.bincount(labels, minlength=hierarchy.n_fine)
    p_fine = counts / float(bag_size)
    out = []
    for level in range(1, hierarchy.levels):
        out.append(hierarchy.coarsen_mass(p_fine, level))
    out.append(p_fine)
    return out


def make_bags(ds: InstanceDataset, bag_size: int, seed: int) -> BagManifest:
    """Chunk a seeded permutation of the train split into disjoint bags.

    Leftover instances (N mod bag_size) are dropped; their count is recorded.
    """
    if bag_size < 2:
        raise ValueError(f"bag_size must be at least 2, got {bag_size}")
    n_train = len(ds.train_ids)
    if n_train < bag_size:
        raise ValueError(f"train split has {n_train} instances, need at least {bag_size}")
    rng = np.random.default_rng(seed)
    perm = ds.train_ids[rng.permutation(n_train)]
    n_bags = n_train // bag_size
    bags = []
    for b in range(n_bags):
        ids = np.sort(perm[b * bag_size:(b + 1) * bag_size])
        props = bag_proportions(ds.labels_fine[ids], ds.hierarchy, bag_size)
        bags.append(Bag(instance_ids=ids, proportions=props))
    return BagManifest(dataset_path=ds.source_path or "", dataset_hash=dataset_hash(ds),
                       bag_size=bag_size, dropped=n_train % bag_size, bags=bags)


def validate_manifest(manifest: BagManifest, ds: InstanceDataset) -> ValidationReport:
    """Check every bag/manifest invariant; hash mismatch raises, the rest report."""
    if manifest.dataset_hash != dataset_hash(ds):
        raise StaleManifestError(
            f"manifest references dataset {manifest.dataset_hash[:12]}..., "
            f"got {dataset_hash(ds)[:12]}...")
    h = ds.hierarchy
    report = ValidationReport()
    seen: dict[int, int] = {}
    for b, bag in enumerate(manifest.bags):
        ids = np.asarray(bag.instance_ids)
        if len(ids) != manifest.bag_size:
            report.violations.append(f"bag {b}: has {len(ids)} members, expected "
                                     f"{manifest.bag_size}")
        if len(ids) and (ids.min() < 0 or ids.max() >= ds.n):
            report.violations.append(f"bag {b}: instance id outside the dataset")
            continue
        for i in ids:
            if int(i) in seen:
                report.violations.append(f"bags {seen[int(i)]} and {b}: shared instance {int(i)}")
            else:
                seen[int(i)] = b
        if len(bag.proportions) != h.levels:
            report.violations.append(f"bag {b}: {len(bag.proportions)} proportion vectors "
                                     f"for {h.levels} levels")
            continue
        for l, p in enumerate(bag.proportions, start=1):
            p = np.asarray(p)
            if p.shape != (h.sizes[l - 1],):
                report.violations.append(f"bag {b} level {l}: vector length {p.shape} "
                                         f"vs {h.sizes[l - 1]} categories")
                continue
            if np.any(p < 0.0) or abs(float(p.sum()) - 1.0) > 1e-9:
                report.violations.append(f"bag {b} level {l}: not a probability vector")
            mult = p * manifest.bag_size
            if np.any(np.abs(mult - np.round(mult)) > 1e-9):
                report.violations.append(f"bag {b} level {l}: entries are not multiples "
                                         f"of 1/{manifest.bag_size}")
        p_fine = np.asarray(bag.proportions[-1])
        if p_fine.shape == (h.n_fine,) and np.all(p_fine >= 0.0):
            for l in range(1, h.levels):
                stored = np.asarray(bag.proportions[l - 1])
                if stored.shape == (h.sizes[l - 1],) and not np.array_equal(
                        h.coarsen_mass(p_fine, l), stored):
                    report.violations.append(f"bag {b} level {l}: inconsistent with "
                                             "coarsened fine proportions")
    return report


# ---------------------------------------------------------------------------
# trainer-facing view (label privacy boundary)

@dataclass
class TrainView:
    """What training is allowed to see: features and proportions, no labels."""
    bag_features: list[np.ndarray]          # each d_in x bag_size (instance columns)
    bag_targets: list[dict[int, np.ndarray]]  # per bag: level -> proportion vector
    bag_size: int
    levels: int


def training_view(ds: InstanceDataset, manifest: BagManifest) -> TrainView:
    feats, targets = [], []
    for bag in manifest.bags:
        feats.append(ds.features[bag.instance_ids].T.copy())
        targets.append({l: np.asarray(p) for l, p in enumerate(bag.proportions, start=1)})
    return TrainView(bag_features=feats, bag_targets=targets,
                     bag_size=manifest.bag_size, levels=ds.hierarchy.levels)


# ---------------------------------------------------------------------------
# serialization

def _fmt(x: float) -> str:
    return "%.17g" % x


def dumps_manifest(m: BagManifest) -> str:
    lines = [_MAGIC,
             f"dataset_hash {m.dataset_hash}",
             f"dataset_path {m.dataset_path}",
             f"bag_size {m.bag_size}",
             f"dropped {m.dropped}",
             f"bags {len(m.bags)}"]
    for bag in m.bags:
        lines.append("ids " + " ".join(str(int(i)) for i in bag.instance_ids))
        for l, p in enumerate(bag.proportions, start=1):
            lines.append(f"p {l} " + " ".join(_fmt(v) for v in p))
    return "\n".join(lines) + "\n"


def save_manifest(m: BagManifest, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_manifest(m))


def loads_manifest(text: str) -> BagManifest:
    lines = text.splitlines()
    offsets = []
    pos = 0
    for line in lines:
        offsets.append(pos)
        pos += len(line.encode("utf-8")) + 1

    def fail(i: int, msg: str):
        raise ParseError(msg, offsets[i] if i < len(offsets) else pos)

    if not lines or lines[0].strip() != _MAGIC:
        fail(0, f"unknown manifest header, expected {_MAGIC!r}")

    def header(i: int, key: str) -> str:
        if i >= len(lines) or not lines[i].startswith(key + " "):
            fail(i, f"expected '{key}' line")
        return lines[i][len(key) + 1:]

    ds_hash = header(1, "dataset_hash").strip()
    ds_path = header(2, "dataset_path")
    try:
        bag_size = int(header(3, "bag_size"))
        dropped = int(header(4, "dropped"))
        n_bags = int(header(5, "bags"))
    except ValueError:
        fail(3, "bad integer in manifest header")

    bags = []
    i = 6
    for b in range(n_bags):
        if i >= len(lines) or not lines[i].startswith("ids "):
            fail(i, f"bag {b}: expected 'ids' line")
        try:
            ids = np.array([int(v) for v in lines[i].split()[1:]], dtype=np.int64)
        except ValueError:
            fail(i, f"bag {b}: bad instance id")
        i += 1
        props = []
        level = 1
        while i < len(lines) and lines[i].startswith("p "):
            parts = lines[i].split()
            if int(parts[1]) != level:
                fail(i, f"bag {b}: proportion levels out of order")
            try:
                props.append(np.array([float(v) for v in parts[2:]]))
            except ValueError:
                fail(i, f"bag {b}: bad proportion value")
            level += 1
            i += 1
        if not props:
            fail(i, f"bag {b}: missing proportion vectors")
        bags.append(Bag(instance_ids=ids, proportions=props))
    return BagManifest(dataset_path=ds_path, dataset_hash=ds_hash, bag_size=bag_size,
                       dropped=dropped, bags=bags)


def load_manifest(path: str) -> BagManifest:
    with open(path, "r", encoding="utf-8") as f:
        return loads_manifest(f.read())
