"""Command-line surface.

Exit codes: 0 success, 2 usage/config error, 3 numerical failure,
4 validation failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys

import numpy as np

from . import autodiff as ad
from .bagging import load_manifest, make_bags, save_manifest, validate_manifest
from .config import load_experiment_config, parse_mask_levels, parse_on_off
from .datasets import (dataset_hash, generate_synthetic, load_dataset,
                       nearest_centroid_accuracy, save_dataset)
from .errors import ConfigError, NumericalError, ParseError, StaleManifestError
from .gradcheck import check_parameters, grad_check
from .hierarchy import balanced_hierarchy
from .losses import bag_estimate, hierarchical_proportion_loss, proportion_loss
from .model import Model, ModelConfig
from .training import (Checkpoint, TrainConfig, evaluate, model_config,
                       run_ablation, train, write_metrics_csv)

USAGE_ERROR, NUMERICAL_ERROR, VALIDATION_ERROR = 2, 3, 4


def derive_sizes(classes: int, levels: int) -> tuple[int, ...]:
    """Default per-level sizes: divide the class count by ceil(C^(1/H)) per level."""
    if levels < 1:
        raise ValueError("levels must be at least 1")
    b = max(2, math.ceil(classes ** (1.0 / levels)))
    sizes = [classes]
    for _ in range(levels - 1):
        sizes.append(max(1, math.ceil(sizes[-1] / b)))
    return tuple(reversed(sizes))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hierllp",
                                description="Bag-level training of instance classifiers "
                                            "with unrolled masked sparse coding")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic hierarchical dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--classes", type=int, default=12, help="fine categories (default 12)")
    g.add_argument("--levels", type=int, default=3, help="hierarchy depth (default 3)")
    g.add_argument("--sizes", type=str, default=None,
                   help="explicit per-level sizes, e.g. 2,4,12 (overrides --levels)")
    g.add_argument("--n-per-class", type=int, default=60)
    g.add_argument("--dim", type=int, default=16, help="feature dimension (default 16)")
    g.add_argument("--coarse-sep", type=float, default=6.0)
    g.add_argument("--fine-sep", type=float, default=1.0)
    g.add_argument("--noise", type=float, default=0.5)
    g.add_argument("--test-ratio", type=float, default=0.25)
    g.add_argument("--out", type=str, required=True)

    b = sub.add_parser("make-bags", help="pack train instances into bags")
    b.add_argument("--dataset", type=str, required=True)
    b.add_argument("--bag-size", type=int, default=10)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", type=str, required=True)

    v = sub.add_parser("validate", help="check all manifest invariants against a dataset")
    v.add_argument("--dataset", type=str, required=True)
    v.add_argument("--manifest", type=str, required=True)

    t = sub.add_parser("train", help="train from a config file (flags override)")
    _train_flags(t)
    t.add_argument("--resume", type=str, default=None, help="checkpoint to resume from")
    t.add_argument("--stop-after", type=int, default=None,
                   help="stop after this many epochs (resumable)")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset's test split")
    e.add_argument("--checkpoint", type=str, required=True)
    e.add_argument("--dataset", type=str, required=True)
    e.add_argument("--confusion", action="store_true", help="also print the confusion matrix")

    o = sub.add_parser("eval-oracle", help="nearest-centroid baseline on the test split")
    o.add_argument("--dataset", type=str, required=True)

    a = sub.add_parser("ablate", help="run the comparison grid over three seeds")
    _train_flags(a)
    a.add_argument("--seeds", type=str, default="0,1,2")

    c = sub.add_parser("gradcheck", help="finite-difference check of every "
                                         "differentiable operation and the full model")
    c.add_argument("--tol", type=float, default=1e-4)
    c.add_argument("--eps", type=float, default=1e-5)
    return p


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="experiment config file")
    p.add_argument("--dataset", type=str, default=None)
    p.add_argument("--manifest", type=str, default=None)
    p.add_argument("--out-dir", type=str, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr0", type=float, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--n-atoms", type=int, default=None)
    p.add_argument("--d-feat", type=int, default=None)
    p.add_argument("--dict", type=str, default=None, metavar="on|off")
    p.add_argument("--masks", type=str, default=None, metavar="coarse,medium|none")
    p.add_argument("--activation", type=str, default=None, choices=["sparsemax", "softmax"])


def _resolve_experiment(args) -> tuple[str, str, str, TrainConfig]:
    if args.config is not None:
        exp = load_experiment_config(args.config)
        dataset, manifest, out_dir, cfg = exp.dataset, exp.manifest, exp.out_dir, exp.train
    else:
        dataset = manifest = out_dir = None
        cfg = TrainConfig()
    dataset = args.dataset or dataset
    manifest = args.manifest or manifest
    out_dir = args.out_dir or out_dir
    overrides = {}
    for flag, key in (("seed", "seed"), ("epochs", "epochs"), ("lr0", "lr0"),
                      ("layers", "layers"), ("n_atoms", "n_atoms"), ("d_feat", "d_feat")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    if args.dict is not None:
        overrides["dictionary"] = parse_on_off(args.dict)
    if args.masks is not None:
        overrides["mask_levels"] = parse_mask_levels(args.masks)
    if args.activation is not None:
        overrides["activation"] = args.activation
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    if dataset is None:
        raise ConfigError("no dataset given (use --dataset or a config file)")
    if manifest is None:
        raise ConfigError("no manifest given (use --manifest or a config file)")
    if out_dir is None:
        raise ConfigError("no output directory given (use --out-dir or a config file)")
    return dataset, manifest, out_dir, cfg


def cmd_generate(args) -> int:
    sizes = (tuple(int(s) for s in args.sizes.split(","))
             if args.sizes else derive_sizes(args.classes, args.levels))
    ds = generate_synthetic(seed=args.seed, C=args.classes, per_level_sizes=sizes,
                            n_per_class=args.n_per_class, d_in=args.dim,
                            coarse_sep=args.coarse_sep, fine_sep=args.fine_sep,
                            noise_sigma=args.noise, test_ratio=args.test_ratio)
    save_dataset(ds, args.out)
    print(f"wrote {args.out}: N={ds.n} d_in={ds.d_in} sizes={sizes} "
          f"hash={dataset_hash(ds)[:16]}")
    return 0


def cmd_make_bags(args) -> int:
    ds = load_dataset(args.dataset)
    manifest = make_bags(ds, bag_size=args.bag_size, seed=args.seed)
    save_manifest(manifest, args.out)
    print(f"wrote {args.out}: {len(manifest.bags)} bags of {manifest.bag_size}, "
          f"{manifest.dropped} dropped")
    return 0


def cmd_validate(args) -> int:
    ds = load_dataset(args.dataset)
    manifest = load_manifest(args.manifest)
    report = validate_manifest(manifest, ds)
    print(report)
    return 0 if report.ok else VALIDATION_ERROR


def cmd_train(args) -> int:
    dataset, manifest_path, out_dir, cfg = _resolve_experiment(args)
    ds = load_dataset(dataset)
    manifest = load_manifest(manifest_path)
    resume = Checkpoint.load(args.resume) if args.resume else None
    os.makedirs(out_dir, exist_ok=True)
    ckpt = train(ds, manifest, cfg, resume_from=resume,
                 metrics_path=os.path.join(out_dir, "metrics.csv"),
                 stop_after_epoch=args.stop_after)
    ckpt_path = os.path.join(out_dir, "checkpoint.llpckpt")
    ckpt.save(ckpt_path)
    last = ckpt.history[-1]
    accs = " ".join(f"l{l}={last['accuracy'][str(l)]:.4f}"
                    for l in range(1, ds.hierarchy.levels + 1))
    print(f"trained {ckpt.epoch} epochs: loss={last['train_loss']:.4f} {accs}")
    print(f"wrote {ckpt_path} and metrics.csv")
    return 0


def cmd_eval(args) -> int:
    ds = load_dataset(args.dataset)
    ckpt = Checkpoint.load(args.checkpoint)
    result = evaluate(ckpt, ds)
    print(result)
    if args.confusion:
        print(result.confusion)
    return 0


def cmd_eval_oracle(args) -> int:
    ds = load_dataset(args.dataset)
    acc = nearest_centroid_accuracy(ds)
    print(f"nearest-centroid fine accuracy: {acc:.4f}")
    return 0


def cmd_ablate(args) -> int:
    dataset, manifest_path, out_dir, cfg = _resolve_experiment(args)
    ds = load_dataset(dataset)
    manifest = load_manifest(manifest_path)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    os.makedirs(out_dir, exist_ok=True)

    def progress(arm, seed, acc):
        print(f"  {arm} seed={seed}: fine accuracy {acc:.4f}", flush=True)

    table = run_ablation(ds, manifest, cfg, seeds=seeds, progress=progress)
    table.to_csv(os.path.join(out_dir, "ablation.csv"))
    text = table.to_text()
    with open(os.path.join(out_dir, "ablation.txt"), "w") as f:
        f.write(text + "\n")
    print(text)
    return 0


def cmd_gradcheck(args) -> int:
    checks: list[tuple[str, bool, str]] = []

    def record(name, report):
        checks.append((name, report.passed, str(report)))

    rng = np.random.default_rng(0)

    x = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = rng.normal(size=(4, 2))
    out_w = rng.normal(size=(3, 2))
    record("matmul", grad_check(
        lambda t: ad.sum_all(ad.mul(ad.matmul(t, ad.Tensor(w)), ad.Tensor(out_w))),
        x, eps=args.eps, tol=args.tol))

    y = ad.Tensor(rng.normal(size=(6,)), requires_grad=True)
    record("elementwise", grad_check(
        lambda t: ad.sum_all(ad.mul(ad.exp(ad.mul(t, 0.3)), ad.tanh(t))),
        y, eps=args.eps, tol=args.tol))

    st_x = ad.Tensor(rng.normal(size=(8,)) * 2.0, requires_grad=True)
    record("soft_threshold/x", grad_check(
        lambda t: ad.sum_all(ad.soft_threshold(t, 0.7)), st_x, eps=args.eps, tol=args.tol))
    lam = ad.Tensor(0.7, requires_grad=True)
    base = rng.normal(size=(8,)) * 2.0
    record("soft_threshold/lambda", grad_check(
        lambda t: ad.sum_all(ad.soft_threshold(ad.Tensor(base), t)),
        lam, eps=args.eps, tol=args.tol))

    z = ad.Tensor(rng.normal(size=(6,)), requires_grad=True)
    zw = rng.normal(size=(6,))
    record("sparsemax", grad_check(
        lambda t: ad.sum_all(ad.mul(ad.sparsemax(t), ad.Tensor(zw))),
        z, eps=args.eps, tol=args.tol))

    est = ad.Tensor(rng.uniform(0.2, 0.8, size=4), requires_grad=True)
    target = np.array([0.3, 0.2, 0.4, 0.1])
    record("proportion_loss", grad_check(
        lambda t: proportion_loss(target, t), est, eps=args.eps, tol=args.tol))

    # full model on a two-bag micro problem
    tree = balanced_hierarchy((2, 4))
    model = Model(ModelConfig(d_in=5, d_feat=4, hidden=6, lambda_hidden=4, n_atoms=2,
                              layers=3, mask_levels=(1,)), tree, seed=0)
    bags = [rng.normal(size=(5, 2)), rng.normal(size=(5, 2))]
    bag_targets = [{1: np.array([0.5, 0.5]), 2: np.array([0.5, 0.0, 0.5, 0.0])},
                   {1: np.array([1.0, 0.0]), 2: np.array([0.5, 0.5, 0.0, 0.0])}]

    def full_loss():
        total = None
        for feats, targets in zip(bags, bag_targets):
            fwd = model.forward_bag(feats)
            estimates = {2: bag_estimate(ad.softmax_cols(fwd.fine_logits))}
            for level, logits in fwd.level_logits.items():
                estimates[level] = bag_estimate(ad.softmax_cols(logits))
            term = hierarchical_proportion_loss(targets, estimates)
            total = term if total is None else ad.add(total, term)
        return total

    lam_feats = rng.normal(size=(4, 3))  # already-extracted features, d_feat x |B|
    lam_params = {n: p for n, p in model.parameters().items() if n.startswith("lambda.")}
    for name, report in check_parameters(
            lambda: model.lambda_strength(ad.Tensor(lam_feats)), lam_params,
            eps=args.eps, tol=args.tol).items():
        record(f"lambda_learner/{name}", report)
    for name, report in check_parameters(full_loss, model.parameters(),
                                         eps=args.eps, tol=args.tol).items():
        record(f"model/{name}", report)

    failed = 0
    for name, passed, detail in checks:
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        failed += 0 if passed else 1
    print(f"{len(checks) - failed}/{len(checks)} gradient checks passed")
    return 0 if failed == 0 else NUMERICAL_ERROR


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"generate": cmd_generate, "make-bags": cmd_make_bags,
                "validate": cmd_validate, "train": cmd_train, "eval": cmd_eval,
                "eval-oracle": cmd_eval_oracle, "ablate": cmd_ablate,
                "gradcheck": cmd_gradcheck}
    try:
        return handlers[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except (ParseError, StaleManifestError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return VALIDATION_ERROR
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return NUMERICAL_ERROR
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
