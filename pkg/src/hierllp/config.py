"""Experiment configuration files: flat ``key = value`` text.

Unknown keys are rejected with their line number; paths resolve relative to
the config file's directory. CLI flags override file values.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .errors import ConfigError
from .training import TrainConfig

_LEVEL_NAMES = {"coarse": 1, "medium": 2}

_TRAIN_KEYS = {
    "lr0": float, "epochs": int, "weight_decay": float, "momentum": float,
    "bags_per_batch": int, "seed": int, "layers": int, "n_atoms": int,
    "d_feat": int, "hidden": int, "lambda_hidden": int,
    "classifier_scale": float, "level_classifier_scale": float, "feature_gain": float,
}
_PATH_KEYS = ("dataset", "manifest", "out_dir")


@dataclass
class ExperimentConfig:
    dataset: str | None
    manifest: str | None
    out_dir: str | None
    train: TrainConfig


def parse_mask_levels(text: str) -> tuple[int, ...]:
    """Accept 'none', level names (coarse, medium), or integer levels."""
    text = text.strip().lower()
    if text in ("none", ""):
        return ()
    levels = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok in _LEVEL_NAMES:
            levels.append(_LEVEL_NAMES[tok])
        elif tok.isdigit():
            levels.append(int(tok))
        else:
            raise ValueError(f"bad mask level {tok!r} (use coarse, medium, an "
                             "integer, or none)")
    return tuple(sorted(set(levels)))


def parse_on_off(text: str) -> bool:
    text = text.strip().lower()
    if text in ("on", "true", "1", "yes"):
        return True
    if text in ("off", "false", "0", "no"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def load_experiment_config(path: str) -> ExperimentConfig:
    base = os.path.dirname(os.path.abspath(path))
    values: dict[str, object] = {}
    paths = {k: None for k in _PATH_KEYS}
    try:
        lines = open(path, "r", encoding="utf-8").read().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    for i, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw!r}", line=i)
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        try:
            if key in _PATH_KEYS:
                paths[key] = os.path.normpath(os.path.join(base, value))
            elif key in _TRAIN_KEYS:
                values[key] = _TRAIN_KEYS[key](value)
            elif key == "dictionary":
                values["dictionary"] = parse_on_off(value)
            elif key == "masks":
                values["mask_levels"] = parse_mask_levels(value)
            elif key == "activation":
                if value not in ("sparsemax", "softmax"):
                    raise ValueError(f"activation must be sparsemax or softmax, "
                                     f"got {value!r}")
                values["activation"] = value
            elif key == "mask_rule":
                if value not in ("union", "pooled"):
                    raise ValueError(f"mask_rule must be union or pooled, got {value!r}")
                values["mask_rule"] = value
            else:
                raise ConfigError(f"unknown key {key!r}", line=i)
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(f"bad value for {key}: {e}", line=i) from e
    try:
        train = TrainConfig(**values)
    except (TypeError, ConfigError) as e:
        raise ConfigError(f"invalid training configuration: {e}") from e
    return ExperimentConfig(dataset=paths["dataset"], manifest=paths["manifest"],
                            out_dir=paths["out_dir"], train=train)
