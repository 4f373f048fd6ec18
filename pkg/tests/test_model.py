import numpy as np
import pytest

import hierllp.autodiff as ad
from hierllp.gradcheck import check_parameters, grad_check
from hierllp.hierarchy import Hierarchy, balanced_hierarchy
from hierllp.losses import bag_estimate, hierarchical_proportion_loss
from hierllp.model import Model, ModelConfig

LN2 = 0.6931471805599453


@pytest.fixture
def tree_4():
    return balanced_hierarchy((2, 4))


@pytest.fixture
def micro_model(tree_4):
    cfg = ModelConfig(d_in=5, d_feat=4, hidden=6, lambda_hidden=4, n_atoms=2,
                      layers=3, mask_levels=(1,))
    return Model(cfg, tree_4, seed=0)


def bag_loss(model: Model, x: np.ndarray, targets: dict[int, np.ndarray]) -> ad.Tensor:
    fwd = model.forward_bag(x)
    fine = model.hierarchy.levels
    estimates = {fine: bag_estimate(ad.softmax_cols(fwd.fine_logits))}
    for level, logits in fwd.level_logits.items():
        estimates[level] = bag_estimate(ad.softmax_cols(logits))
    return hierarchical_proportion_loss(targets, estimates)


def test_singleton_bag_pooled_equals_instance(micro_model):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 1))
    fwd = micro_model.forward_bag(x)
    assert fwd.fine_logits.data.shape == (4, 1)
    # pooled mask logits equal the single instance's logits on the snapshot
    level = 1
    snap_logits = fwd.level_logits[level].data
    pooled_probs = fwd.mask_probs[level].data
    direct = micro_model._mask_activation(ad.Tensor(snap_logits)).data
    np.testing.assert_allclose(pooled_probs, direct, atol=1e-12)


def test_instance_permutation_equivariance(micro_model):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(5, 6))
    perm = rng.permutation(6)
    a = micro_model.forward_bag(x)
    b = micro_model.forward_bag(x[:, perm])
    np.testing.assert_allclose(b.fine_logits.data, a.fine_logits.data[:, perm], atol=1e-12)
    assert float(a.lam.data) == pytest.approx(float(b.lam.data), abs=1e-12)
    for level in a.masks:
        np.testing.assert_array_equal(a.masks[level], b.masks[level])


def test_lambda_zero_params_gives_ln2(micro_model):
    for layer in micro_model.lambda_net:
        layer.w.data[:] = 0.0
        layer.b.data[:] = 0.0
    rng = np.random.default_rng(2)
    feats = ad.Tensor(rng.normal(size=(4, 3)))
    assert float(micro_model.lambda_strength(feats).data) == pytest.approx(LN2)


def test_lambda_is_permutation_invariant(micro_model):
    rng = np.random.default_rng(3)
    feats = rng.normal(size=(4, 8))
    a = micro_model.lambda_strength(ad.Tensor(feats))
    b = micro_model.lambda_strength(ad.Tensor(feats[:, rng.permutation(8)]))
    assert float(a.data) == pytest.approx(float(b.data), abs=1e-12)
    assert float(a.data) > 0.0


def test_full_model_grad_check(micro_model, tree_4):
    rng = np.random.default_rng(4)
    x1 = rng.normal(size=(5, 2))
    x2 = rng.normal(size=(5, 2))
    t1 = {1: np.array([0.5, 0.5]), 2: np.array([0.5, 0.0, 0.5, 0.0])}
    t2 = {1: np.array([1.0, 0.0]), 2: np.array([0.5, 0.5, 0.0, 0.0])}

    def build_loss():
        return ad.add(bag_loss(micro_model, x1, t1), bag_loss(micro_model, x2, t2))

    reports = check_parameters(build_loss, micro_model.parameters(), eps=1e-5, tol=1e-4)
    failed = {n: r for n, r in reports.items() if not r.passed}
    assert not failed, f"gradient mismatches: { {n: str(r) for n, r in failed.items()} }"


def test_lambda_learner_grad_check(micro_model):
    rng = np.random.default_rng(5)
    feats = rng.normal(size=(4, 3))
    params = {n: p for n, p in micro_model.parameters().items() if n.startswith("lambda.")}
    reports = check_parameters(
        lambda: micro_model.lambda_strength(ad.Tensor(feats)), params)
    assert all(r.passed for r in reports.values())


def test_no_dictionary_reduces_to_plain_pipeline(tree_4):
    cfg = ModelConfig(d_in=5, d_feat=4, hidden=6, dictionary=False)
    model = Model(cfg, tree_4, seed=7)
    assert model.dictionary is None and model.lambda_net is None
    assert list(model.classifiers) == [2]
    rng = np.random.default_rng(8)
    x = rng.normal(size=(5, 3))
    fwd = model.forward_bag(x)
    manual = model.classifiers[2](model.extract(ad.Tensor(x)))
    np.testing.assert_array_equal(fwd.fine_logits.data, manual.data)
    assert fwd.z_final is None and fwd.lam is None and not fwd.masks


def test_dict_without_masks_matches_flat_hierarchy_model():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(5, 4))
    cfg3 = ModelConfig(d_in=5, d_feat=4, hidden=6, n_atoms=2, layers=3, mask_levels=())
    m3 = Model(cfg3, balanced_hierarchy((2, 4)), seed=11)
    cfg1 = ModelConfig(d_in=5, d_feat=4, hidden=6, n_atoms=2, layers=3, mask_levels=())
    m1 = Model(cfg1, Hierarchy(sizes=(4,)), seed=11)
    np.testing.assert_array_equal(m3.forward_bag(x).fine_logits.data,
                                  m1.forward_bag(x).fine_logits.data)


def test_masks_ignored_when_dictionary_off(tree_4):
    cfg = ModelConfig(d_in=5, dictionary=False, mask_levels=(1,))
    model = Model(cfg, tree_4, seed=0)
    assert model.mask_levels == ()


def test_invalid_mask_level_rejected(tree_4):
    with pytest.raises(ValueError, match="mask levels"):
        Model(ModelConfig(d_in=5, mask_levels=(2,)), tree_4, seed=0)


def test_predictions_deterministic(micro_model):
    rng = np.random.default_rng(10)
    rows = rng.normal(size=(6, 5))
    a = micro_model.predict_batch(rows)
    b = micro_model.predict_batch(rows)
    np.testing.assert_array_equal(a, b)
    assert micro_model.predict_instance(rows[0]) == a[0]


def test_prediction_invariant_to_logit_shift(micro_model):
    # adding a constant to all fine logits never changes the argmax
    rng = np.random.default_rng(11)
    x = rng.normal(size=(5, 1))
    logits = micro_model.forward_bag(x).fine_logits.data[:, 0]
    assert int(np.argmax(logits)) == int(np.argmax(logits + 10.0))


def test_state_round_trip(micro_model):
    state = micro_model.state()
    cfg = micro_model.cfg
    other = Model(cfg, micro_model.hierarchy, seed=99)
    before = other.state()
    assert any(not np.array_equal(before[k], state[k]) for k in state)
    other.load_state(state)
    after = other.state()
    for k in state:
        np.testing.assert_array_equal(after[k], state[k])
    rng = np.random.default_rng(12)
    rows = rng.normal(size=(3, 5))
    np.testing.assert_array_equal(other.predict_batch(rows),
                                  micro_model.predict_batch(rows))


def test_decay_flags(micro_model):
    decays = micro_model.decays()
    assert decays["dict.D"] is True
    assert decays["dict.mu"] is False
    assert decays["extractor.0.w"] is True
    assert decays["extractor.0.b"] is False
    assert decays["lambda.1.b"] is False
