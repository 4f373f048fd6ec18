"""Full pipeline: feature extractor, per-bag sparsity-strength regressor,
unrolled masked encoding with per-level classifiers, instance predictions.

A bag flows through extractor -> lambda regressor -> unrolled encoder; at
each mask transition the level classifier reads the bag-pooled code, its
sparsemax (or softmax, under ablation) output builds the dictionary mask,
and the same classifier's per-instance logits on that snapshot feed the
level's proportion loss. The fine classifier reads the final code columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .coding import CategoryDictionary, MaskSchedule, build_mask, unrolled_encode
from .hierarchy import Hierarchy


class Dense:
    """Linear map on instance columns: W x + b."""

    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int,
                 scale: float | None = None):
        std = (1.0 / np.sqrt(n_in)) if scale is None else scale / np.sqrt(n_in)
        self.w = ad.Tensor(rng.normal(size=(n_out, n_in)) * std, requires_grad=True)
        self.b = ad.Tensor(np.zeros((n_out, 1)), requires_grad=True)

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return ad.add_colvec(ad.matmul(self.w, x), self.b)


@dataclass
class ModelConfig:
    d_in: int
    d_feat: int = 32
    hidden: int = 64
    lambda_hidden: int = 32
    n_atoms: int = 4
    layers: int = 9
    dictionary: bool = True
    mask_levels: tuple[int, ...] = (1, 2)
    activation: str = "sparsemax"
    mask_rule: str = "instance"
    classifier_scale: float = 2.0
    level_classifier_scale: float = 0.05
    feature_gain: float = 3.0

    def __post_init__(self):
        if self.activation not in ("sparsemax", "softmax"):
            raise ValueError(f"activation must be sparsemax or softmax, got {self.activation}")
        if self.mask_rule not in ("instance", "union", "pooled"):
            raise ValueError(f"mask_rule must be instance, union or pooled, "
                             f"got {self.mask_rule}")
        if self.layers < 1:
            raise ValueError("need at least one unrolled layer")


@dataclass
class BagForward:
    """Outputs of one bag's forward pass."""
    fine_logits: ad.Tensor                      # C x |B|
    level_logits: dict[int, ad.Tensor]          # level -> K_l x |B| (mask levels only)
    mask_probs: dict[int, ad.Tensor]            # level -> pooled sparsemax/softmax column
    masks: dict[int, np.ndarray]                # level -> 0/1 atom mask actually applied
    z_final: ad.Tensor | None
    lam: ad.Tensor | None


class Model:
    """All learnable pieces plus the bag-level forward pass."""

    def __init__(self, cfg: ModelConfig, hierarchy: Hierarchy, seed: int):
        self.cfg = cfg
        self.hierarchy = hierarchy
        if cfg.dictionary:
            bad = [l for l in cfg.mask_levels if not 1 <= l < hierarchy.levels]
            if bad:
                raise ValueError(f"mask levels {bad} outside [1, {hierarchy.levels})")
            self.mask_levels = tuple(sorted(cfg.mask_levels))
        else:
            self.mask_levels = ()
        rng = np.random.default_rng(seed)

        self.extractor = [Dense(rng, cfg.d_in, cfg.hidden),
                          Dense(rng, cfg.hidden, cfg.d_feat)]
        if cfg.dictionary:
            self.lambda_net = [Dense(rng, cfg.d_feat, cfg.lambda_hidden),
                               Dense(rng, cfg.lambda_hidden, 1)]
            self.dictionary = CategoryDictionary.init_random(
                cfg.d_feat, hierarchy.n_fine, cfg.n_atoms, rng)
            self.schedule = MaskSchedule.spread(cfg.layers, self.mask_levels)
            code_dim = self.dictionary.n_columns
        else:
            self.lambda_net = None
            self.dictionary = None
            self.schedule = MaskSchedule()
            code_dim = cfg.d_feat
        # mask-level heads start near-uniform so early masks stay all-ones;
        # the fine head starts larger so its logits train at a useful rate
        self.classifiers = {
            level: Dense(rng, code_dim, hierarchy.sizes[level - 1],
                         scale=(cfg.classifier_scale if level == hierarchy.levels
                                else cfg.level_classifier_scale))
            for level in (*self.mask_levels, hierarchy.levels)}

    # -- parameter registry -------------------------------------------------

    def parameters(self) -> dict[str, ad.Tensor]:
        params: dict[str, ad.Tensor] = {}
        for i, layer in enumerate(self.extractor):
            params[f"extractor.{i}.w"] = layer.w
            params[f"extractor.{i}.b"] = layer.b
        if self.lambda_net is not None:
            for i, layer in enumerate(self.lambda_net):
                params[f"lambda.{i}.w"] = layer.w
                params[f"lambda.{i}.b"] = layer.b
        if self.dictionary is not None:
            params["dict.D"] = self.dictionary.weights
            params["dict.mu"] = self.dictionary.mu
        for level, cls in self.classifiers.items():
            params[f"cls{level}.w"] = cls.w
            params[f"cls{level}.b"] = cls.b
        return params

    def decays(self) -> dict[str, bool]:
        """Weight decay applies to matrices only; biases and mu are exempt."""
        return {name: name.endswith(".w") or name == "dict.D"
                for name in self.parameters()}

    def zero_grads(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(state) != set(params):
            raise ValueError("parameter names do not match this model")
        for name, value in state.items():
            if params[name].data.shape != value.shape:
                raise ValueError(f"{name}: shape {value.shape} does not match "
                                 f"{params[name].data.shape}")
            params[name].data = np.array(value, dtype=np.float64)

    def state(self) -> dict[str, np.ndarray]:
        return {name: np.array(p.data, copy=True) for name, p in self.parameters().items()}

    # -- forward ------------------------------------------------------------

    def extract(self, x: ad.Tensor) -> ad.Tensor:
        """Two dense layers, tanh inside, linear output with a fixed gain.

        The gain puts code magnitudes in a range where the classifier heads
        train at a useful rate under the small configured learning rates.
        """
        h = ad.tanh(self.extractor[0](x))
        out = self.extractor[1](h)
        if self.cfg.feature_gain != 1.0:
            out = ad.mul(out, self.cfg.feature_gain)
        return out

    def lambda_strength(self, feats: ad.Tensor) -> ad.Tensor:
        """Per-bag sparsity strength: mean-pooled features through a small net,
        softplus keeps it positive. Permutation-invariant by pooling."""
        pooled = ad.mean_cols(feats)
        h = ad.tanh(self.lambda_net[0](pooled))
        out = self.lambda_net[1](h)
        return ad.softplus(ad.reshape(out, ()))

    def _mask_activation(self, logits: ad.Tensor) -> ad.Tensor:
        if self.cfg.activation == "sparsemax":
            return ad.sparsemax(logits)
        return ad.softmax_cols(logits)

    def forward_bag(self, bag_features) -> BagForward:
        x = bag_features if isinstance(bag_features, ad.Tensor) else ad.Tensor(bag_features)
        feats = self.extract(x)
        fine_level = self.hierarchy.levels
        if self.dictionary is None:
            return BagForward(fine_logits=self.classifiers[fine_level](feats),
                              level_logits={}, mask_probs={}, masks={},
                              z_final=None, lam=None)

        lam = self.lambda_strength(feats)
        mask_probs: dict[int, ad.Tensor] = {}
        masks: dict[int, np.ndarray] = {}

        def provider(level: int, code: ad.Tensor) -> np.ndarray:
            # masks are constants in the backward pass; the classifiers learn
            # only through their per-instance proportion losses
            with ad.no_grad():
                logits = self.classifiers[level](code.detach())
                acts = [self._mask_activation(ad.Tensor(logits.data[:, j:j + 1]))
                        .data.ravel() for j in range(logits.data.shape[1])]
                if self.cfg.mask_rule == "pooled":
                    support = self._mask_activation(ad.mean_cols(logits)).data.ravel()
                else:
                    # bag-level summary: mean of per-instance activations; its
                    # support is the union of the instance supports
                    support = np.mean(acts, axis=0)
            mask_probs[level] = ad.Tensor(support[:, None])
            if self.cfg.mask_rule == "instance":
                mask = np.stack([build_mask(a, self.hierarchy, level, self.cfg.n_atoms)
                                 for a in acts], axis=1)
            else:
                mask = build_mask(support, self.hierarchy, level, self.cfg.n_atoms)
            masks[level] = mask
            return mask

        z_final, stages = unrolled_encode(feats, self.dictionary, lam,
                                          layers=self.cfg.layers, schedule=self.schedule,
                                          mask_provider=provider)
        level_logits = {level: self.classifiers[level](code)
                        for level, code in stages.items()}
        return BagForward(fine_logits=self.classifiers[fine_level](z_final),
                          level_logits=level_logits, mask_probs=mask_probs,
                          masks=masks, z_final=z_final, lam=lam)

    # -- inference ----------------------------------------------------------

    def predict_batch(self, instances: np.ndarray) -> np.ndarray:
        """Fine-category predictions for instance rows; each instance runs as a
        singleton bag. Ties break toward the lower index."""
        instances = np.asarray(instances, dtype=np.float64)
        preds = np.empty(len(instances), dtype=np.int64)
        with ad.no_grad():
            for i, row in enumerate(instances):
                logits = self.forward_bag(row[:, None]).fine_logits
                preds[i] = int(np.argmax(logits.data[:, 0]))
        return preds

    def predict_instance(self, instance: np.ndarray) -> int:
        return int(self.predict_batch(np.asarray(instance)[None, :])[0])
