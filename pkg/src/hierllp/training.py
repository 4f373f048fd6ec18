"""Momentum-SGD training over bag batches, evaluation, checkpoints, ablation.

The loop is deterministic given the config seed: model init draws from one
seeded generator, each epoch shuffles bags with a generator seeded by
(seed, epoch), and batches reduce in a fixed order.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from .bagging import BagManifest, training_view, validate_manifest
from .datasets import InstanceDataset
from .errors import ConfigError, DivergenceError, ParseError
from .losses import bag_estimate, hierarchical_proportion_loss
from .model import Model, ModelConfig

_CKPT_MAGIC = b"LLPCKPT v1\n"


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.005
    epochs: int = 100
    weight_decay: float = 5e-4
    momentum: float = 0.9
    bags_per_batch: int = 4
    seed: int = 0
    layers: int = 9
    n_atoms: int = 4
    d_feat: int = 32
    hidden: int = 64
    lambda_hidden: int = 32
    dictionary: bool = True
    mask_levels: tuple[int, ...] = (1, 2)
    activation: str = "sparsemax"
    mask_rule: str = "instance"
    classifier_scale: float = 2.0
    level_classifier_scale: float = 0.05
    feature_gain: float = 3.0
    level_loss_weights: tuple[tuple[int, float], ...] | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        for name in ("lr0", "bags_per_batch", "layers", "n_atoms", "d_feat",
                     "hidden", "lambda_hidden"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("weight_decay", "momentum"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        object.__setattr__(self, "mask_levels", tuple(int(l) for l in self.mask_levels))
        if self.level_loss_weights is not None:
            object.__setattr__(self, "level_loss_weights",
                               tuple((int(l), float(w)) for l, w in self.level_loss_weights))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mask_levels"] = list(self.mask_levels)
        if self.level_loss_weights is not None:
            d["level_loss_weights"] = [[l, w] for l, w in self.level_loss_weights]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["mask_levels"] = tuple(d.get("mask_levels", ()))
        if d.get("level_loss_weights") is not None:
            d["level_loss_weights"] = tuple((int(l), float(w))
                                            for l, w in d["level_loss_weights"])
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def cosine_lr(t: int, config: TrainConfig) -> float:
    """Cosine annealing from lr0 at t=0 to exactly 0 at t=epochs."""
    if not 0 <= t <= config.epochs:
        raise ValueError(f"epoch {t} outside [0, {config.epochs}]")
    return 0.5 * config.lr0 * (1.0 + math.cos(math.pi * t / config.epochs))


def model_config(config: TrainConfig, d_in: int) -> ModelConfig:
    return ModelConfig(d_in=d_in, d_feat=config.d_feat, hidden=config.hidden,
                       lambda_hidden=config.lambda_hidden, n_atoms=config.n_atoms,
                       layers=config.layers, dictionary=config.dictionary,
                       mask_levels=config.mask_levels, activation=config.activation,
                       mask_rule=config.mask_rule,
                       classifier_scale=config.classifier_scale,
                       level_classifier_scale=config.level_classifier_scale,
                       feature_gain=config.feature_gain)


# ---------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    config: TrainConfig
    config_hash: str
    epoch: int
    params: dict[str, np.ndarray]
    velocities: dict[str, np.ndarray]
    history: list[dict] = field(default_factory=list)

    @classmethod
    def from_model(cls, model: Model, config: TrainConfig, epoch: int = 0,
                   velocities: dict[str, np.ndarray] | None = None,
                   history: list[dict] | None = None) -> "Checkpoint":
        vel = velocities if velocities is not None else {
            name: np.zeros_like(p.data) for name, p in model.parameters().items()}
        return cls(config=config, config_hash=config.hash(), epoch=epoch,
                   params=model.state(), velocities={k: np.array(v) for k, v in vel.items()},
                   history=list(history or []))

    def save(self, path: str) -> None:
        arrays = ([("param", k, self.params[k]) for k in sorted(self.params)] +
                  [("velocity", k, self.velocities[k]) for k in sorted(self.velocities)])
        meta = {"config": self.config.to_dict(), "config_hash": self.config_hash,
                "epoch": self.epoch, "history": self.history,
                "arrays": [{"kind": kind, "name": name, "shape": list(a.shape)}
                           for kind, name, a in arrays]}
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        with open(path, "wb") as f:
            f.write(_CKPT_MAGIC)
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)
            for _, _, a in arrays:
                f.write(np.ascontiguousarray(a, dtype=np.float64).tobytes())

    @classmethod
    def load(cls, path: str) -> "Checkpoint":
        with open(path, "rb") as f:
            data = f.read()
        if not data.startswith(_CKPT_MAGIC):
            raise ParseError(f"not a checkpoint file (expected {_CKPT_MAGIC!r} header)", 0)
        pos = len(_CKPT_MAGIC)
        if len(data) < pos + 8:
            raise ParseError("truncated checkpoint header", pos)
        (meta_len,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        try:
            meta = json.loads(data[pos:pos + meta_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ParseError(f"bad checkpoint metadata: {e}", pos) from e
        pos += meta_len
        params: dict[str, np.ndarray] = {}
        velocities: dict[str, np.ndarray] = {}
        for spec in meta["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            nbytes = count * 8
            if pos + nbytes > len(data):
                raise ParseError(f"truncated checkpoint array {spec['name']}", pos)
            a = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
            pos += nbytes
            (params if spec["kind"] == "param" else velocities)[spec["name"]] = a
        config = TrainConfig.from_dict(meta["config"])
        return cls(config=config, config_hash=meta["config_hash"], epoch=int(meta["epoch"]),
                   params=params, velocities=velocities, history=list(meta["history"]))


def model_from_checkpoint(ckpt: Checkpoint, ds: InstanceDataset) -> Model:
    model = Model(model_config(ckpt.config, ds.d_in), ds.hierarchy, seed=ckpt.config.seed)
    model.load_state(ckpt.params)
    return model


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class EvalResult:
    fine_accuracy: float
    level_accuracies: dict[int, float]
    confusion: np.ndarray

    def __str__(self) -> str:
        lines = [f"level {l}: accuracy {a:.4f}" for l, a in sorted(self.level_accuracies.items())]
        return "\n".join(lines)


def evaluate_model(model: Model, ds: InstanceDataset) -> EvalResult:
    """Instance-level accuracy on the test split; coarser levels score the
    ancestor of the fine prediction."""
    if len(ds.test_ids) == 0:
        raise ValueError("test split is empty")
    truth = ds.labels_fine[ds.test_ids]
    preds = model.predict_batch(ds.features[ds.test_ids])
    h = ds.hierarchy
    levels = {}
    for level in range(1, h.levels + 1):
        anc = h.fine_ancestors(level)
        levels[level] = float(np.mean(anc[preds] == anc[truth]))
    C = h.n_fine
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (truth, preds), 1)
    return EvalResult(fine_accuracy=levels[h.levels], level_accuracies=levels,
                      confusion=confusion)


def evaluate(ckpt: Checkpoint, ds: InstanceDataset) -> EvalResult:
    return evaluate_model(model_from_checkpoint(ckpt, ds), ds)


# ---------------------------------------------------------------------------
# training loop

def _bag_loss(model: Model, feats: np.ndarray, targets: dict[int, np.ndarray],
              weights: dict[int, float] | None) -> ad.Tensor:
    fwd = model.forward_bag(feats)
    estimates = {model.hierarchy.levels: bag_estimate(ad.softmax_cols(fwd.fine_logits))}
    for level, logits in fwd.level_logits.items():
        estimates[level] = bag_estimate(ad.softmax_cols(logits))
    return hierarchical_proportion_loss(targets, estimates, weights=weights)


def _optimizer_step(model: Model, velocities: dict[str, np.ndarray], lr: float,
                    config: TrainConfig) -> None:
    decays = model.decays()
    for name, p in model.parameters().items():
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        wd = config.weight_decay if decays[name] else 0.0
        kernels.momentum_step(p.data.reshape(-1), velocities[name].reshape(-1),
                              np.ascontiguousarray(grad, dtype=np.float64).reshape(-1),
                              lr, config.momentum, wd)
    if model.dictionary is not None:
        model.dictionary.renormalize()
        if float(model.dictionary.mu.data) < 1e-6:
            model.dictionary.mu.data = np.asarray(1e-6)


def train(ds: InstanceDataset, manifest: BagManifest, config: TrainConfig,
          resume_from: Checkpoint | None = None,
          metrics_path: str | None = None,
          stop_after_epoch: int | None = None) -> Checkpoint:
    """Training run; returns the final checkpoint (history included).

    Per epoch: shuffled bag batches, forward -> hierarchical proportion loss
    -> backward -> momentum step with weight decay -> dictionary column
    renormalization; then test-split evaluation. ``stop_after_epoch`` cuts
    the run short with a resumable checkpoint (the schedule still spans
    config.epochs).
    """
    report = validate_manifest(manifest, ds)
    if not report.ok:
        raise ValueError(f"manifest failed validation:\n{report}")
    view = training_view(ds, manifest)
    h = ds.hierarchy

    loss_levels = ((*(l for l in sorted(config.mask_levels)), h.levels)
                   if config.dictionary else (h.levels,))
    weights = dict(config.level_loss_weights) if config.level_loss_weights else None

    model = Model(model_config(config, ds.d_in), h, seed=config.seed)
    velocities = {name: np.zeros_like(p.data) for name, p in model.parameters().items()}
    history: list[dict] = []
    start_epoch = 0
    if resume_from is not None:
        if resume_from.config_hash != config.hash():
            raise ConfigError(f"checkpoint config hash {resume_from.config_hash[:12]}... "
                              f"does not match this config {config.hash()[:12]}...")
        model.load_state(resume_from.params)
        velocities = {k: np.array(v) for k, v in resume_from.velocities.items()}
        history = list(resume_from.history)
        start_epoch = resume_from.epoch

    targets = [{l: bag[l] for l in loss_levels} for bag in view.bag_targets]
    n_bags = len(view.bag_features)
    end_epoch = config.epochs if stop_after_epoch is None else min(stop_after_epoch,
                                                                   config.epochs)

    for epoch in range(start_epoch, end_epoch):
        lr = cosine_lr(epoch, config)
        order = np.random.default_rng([config.seed, epoch]).permutation(n_bags)
        epoch_losses = []
        for b0 in range(0, n_bags, config.bags_per_batch):
            batch = order[b0:b0 + config.bags_per_batch]
            model.zero_grads()
            losses = []
            for bi in batch:
                try:
                    losses.append(_bag_loss(model, view.bag_features[bi],
                                            targets[bi], weights))
                except DivergenceError as e:
                    raise DivergenceError(
                        e.layer, f"epoch {epoch + 1}, bag {bi}: {e}") from e
            total = losses[0]
            for extra in losses[1:]:
                total = ad.add(total, extra)
            mean_loss = ad.mul(total, ad.Tensor(1.0 / len(losses)))
            if not np.isfinite(float(mean_loss.data)):
                raise DivergenceError(0, f"non-finite loss at epoch {epoch + 1}, "
                                         f"batch starting {b0}")
            mean_loss.backward()
            _optimizer_step(model, velocities, lr, config)
            epoch_losses.extend(float(l.data) for l in losses)
        result = evaluate_model(model, ds)
        history.append({"epoch": epoch + 1, "lr": lr,
                        "train_loss": float(np.mean(epoch_losses)),
                        "accuracy": {str(l): a for l, a in result.level_accuracies.items()}})

    ckpt = Checkpoint.from_model(model, config, epoch=end_epoch,
                                 velocities=velocities, history=history)
    if metrics_path is not None:
        write_metrics_csv(history, h.levels, metrics_path)
    return ckpt


def write_metrics_csv(history: list[dict], levels: int, path: str) -> None:
    """One row per epoch; floats via repr so identical runs are bitwise equal."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "lr", "train_loss"] +
                   [f"acc_l{l}" for l in range(1, levels + 1)])
        for row in history:
            w.writerow([row["epoch"], repr(row["lr"]), repr(row["train_loss"])] +
                       [repr(row["accuracy"][str(l)]) for l in range(1, levels + 1)])


# ---------------------------------------------------------------------------
# ablation harness

@dataclass
class AblationRow:
    arm: str
    accuracies: list[float]
    mean: float
    std: float


@dataclass
class AblationTable:
    rows: list[AblationRow]
    seeds: tuple[int, ...]
    dataset_hash: str

    def row(self, arm: str) -> AblationRow:
        for r in self.rows:
            if r.arm == arm:
                return r
        raise KeyError(arm)

    def to_text(self) -> str:
        width = max(len(r.arm) for r in self.rows)
        lines = [f"seeds: {', '.join(str(s) for s in self.seeds)}",
                 f"{'arm'.ljust(width)}  mean    std     per-seed"]
        for r in self.rows:
            accs = " ".join(f"{a:.4f}" for a in r.accuracies)
            lines.append(f"{r.arm.ljust(width)}  {r.mean:.4f}  {r.std:.4f}  {accs}")
        return "\n".join(lines)

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["arm", "mean", "std"] + [f"seed_{s}" for s in self.seeds])
            for r in self.rows:
                w.writerow([r.arm, repr(r.mean), repr(r.std)] +
                           [repr(a) for a in r.accuracies])


def default_arms(levels: int) -> list[tuple[str, dict]]:
    """The comparison grid: dictionary off/on, mask granularities, activation."""
    coarse, medium = 1, max(levels - 1, 1)
    arms = [("no_dict", {"dictionary": False, "mask_levels": ()}),
            ("dict_nomask", {"dictionary": True, "mask_levels": ()}),
            ("dict_coarse", {"dictionary": True, "mask_levels": (coarse,)})]
    if medium != coarse:
        arms.append(("dict_medium", {"dictionary": True, "mask_levels": (medium,)}))
    both = tuple(sorted({coarse, medium}))
    arms.append(("dict_both", {"dictionary": True, "mask_levels": both}))
    arms.append(("dict_both_softmax", {"dictionary": True, "mask_levels": both,
                                       "activation": "softmax"}))
    return arms


def run_ablation(ds: InstanceDataset, manifest: BagManifest, base_config: TrainConfig,
                 seeds: tuple[int, ...] = (0, 1, 2),
                 arms: list[tuple[str, dict]] | None = None,
                 progress=None) -> AblationTable:
    """Train every arm on the same dataset/manifest with the given seeds and
    report mean and standard deviation of final fine accuracy per arm."""
    from .datasets import dataset_hash  # local to avoid cycle at module import

    arms = arms if arms is not None else default_arms(ds.hierarchy.levels)
    rows = []
    for arm_name, overrides in arms:
        accs = []
        for seed in seeds:
            config = dataclasses.replace(base_config, seed=seed, **overrides)
            ckpt = train(ds, manifest, config)
            accs.append(ckpt.history[-1]["accuracy"][str(ds.hierarchy.levels)])
            if progress is not None:
                progress(arm_name, seed, accs[-1])
        rows.append(AblationRow(arm=arm_name, accuracies=accs,
                                mean=float(np.mean(accs)), std=float(np.std(accs))))
    return AblationTable(rows=rows, seeds=tuple(seeds), dataset_hash=dataset_hash(ds))
