"""Bag-level-supervised instance classification with unrolled, hierarchically
masked sparse dictionary coding."""

from .autodiff import Tensor, no_grad
from .bagging import (Bag, BagManifest, load_manifest, make_bags, save_manifest,
                      training_view, validate_manifest)
from .coding import (CategoryDictionary, MaskSchedule, build_mask, gram_spectral_norm,
                     ista_oracle, unrolled_encode)
from .datasets import (InstanceDataset, dataset_hash, generate_synthetic, load_dataset,
                       nearest_centroid_accuracy, save_dataset)
from .gradcheck import GradCheckReport, check_parameters, grad_check
from .hierarchy import Hierarchy, balanced_hierarchy
from .losses import bag_estimate, hierarchical_proportion_loss, proportion_loss
from .model import Model, ModelConfig
from .training import (Checkpoint, EvalResult, TrainConfig, cosine_lr, evaluate,
                       evaluate_model, run_ablation, train)

__version__ = "0.1.0"

__all__ = [
    "Tensor", "no_grad",
    "Bag", "BagManifest", "load_manifest", "make_bags", "save_manifest",
    "training_view", "validate_manifest",
    "CategoryDictionary", "MaskSchedule", "build_mask", "gram_spectral_norm",
    "ista_oracle", "unrolled_encode",
    "InstanceDataset", "dataset_hash", "generate_synthetic", "load_dataset",
    "nearest_centroid_accuracy", "save_dataset",
    "GradCheckReport", "check_parameters", "grad_check",
    "Hierarchy", "balanced_hierarchy",
    "bag_estimate", "hierarchical_proportion_loss", "proportion_loss",
    "Model", "ModelConfig",
    "Checkpoint", "EvalResult", "TrainConfig", "cosine_lr", "evaluate",
    "evaluate_model", "run_ablation", "train",
]
