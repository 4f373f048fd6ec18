import numpy as np
import pytest

from hierllp.hierarchy import Hierarchy, balanced_hierarchy


@pytest.fixture
def tree_4_2():
    # fine {0,1} -> coarse 0, fine {2,3} -> coarse 1
    return Hierarchy(sizes=(2, 4), parent_maps=(np.array([0, 0, 1, 1]),))


@pytest.fixture
def tree_12_4_2():
    return balanced_hierarchy((2, 4, 12))


def test_coarsen_additivity(tree_4_2):
    out = tree_4_2.coarsen_proportions([0.1, 0.2, 0.3, 0.4], 1)
    np.testing.assert_allclose(out, [0.3, 0.7])


def test_coarsen_fine_level_is_identity(tree_4_2):
    p = np.array([0.25, 0.25, 0.1, 0.4])
    np.testing.assert_array_equal(tree_4_2.coarsen_proportions(p, 2), p)


def test_coarsen_path_independence():
    rng = np.random.default_rng(5)
    h = balanced_hierarchy((4, 10, 20))
    p = rng.random(20)
    p /= p.sum()
    via_medium = np.zeros(4)
    medium = h.coarsen_proportions(p, 2)
    # direct summation over the medium->coarse map as the oracle
    for m, mass in enumerate(medium):
        via_medium[h.parent_maps[0][m]] += mass
    np.testing.assert_allclose(via_medium, h.coarsen_proportions(p, 1), atol=1e-12)


def test_coarsen_rejects_bad_inputs(tree_4_2):
    with pytest.raises(ValueError, match="level"):
        tree_4_2.coarsen_proportions([0.5, 0.5, 0.0, 0.0], 3)
    with pytest.raises(ValueError, match="sum"):
        tree_4_2.coarsen_proportions([0.5, 0.5, 0.5, 0.0], 1)


def test_ancestor_examples(tree_4_2):
    # fine category 2 (1-based: 3) sits under coarse class 1 (1-based: B)
    assert tree_4_2.ancestor(2, 1) == 1
    for c in range(4):
        assert tree_4_2.ancestor(c, 2) == c


def test_ancestor_balanced_12_4_2(tree_12_4_2):
    # 1-based maps are c -> ceil(c/3) and m -> ceil(m/2): fine 7 -> medium 3 -> coarse 2
    assert tree_12_4_2.ancestor(7 - 1, 2) == 3 - 1
    assert tree_12_4_2.ancestor(7 - 1, 1) == 2 - 1
    for c in range(12):
        assert tree_12_4_2.ancestor(c, 2) == c // 3
        assert tree_12_4_2.ancestor(c, 1) == c // 6


def test_ancestor_rejects_out_of_range(tree_4_2):
    with pytest.raises(ValueError):
        tree_4_2.ancestor(4, 1)
    with pytest.raises(ValueError):
        tree_4_2.ancestor(0, 0)


def test_coarsen_is_linear(tree_12_4_2):
    rng = np.random.default_rng(6)
    p = rng.random(12)
    p /= p.sum()
    q = rng.random(12)
    q /= q.sum()
    a, b = 0.3, 0.7
    np.testing.assert_allclose(
        tree_12_4_2.coarsen_proportions(a * p + b * q, 1),
        a * tree_12_4_2.coarsen_proportions(p, 1) + b * tree_12_4_2.coarsen_proportions(q, 1),
        atol=1e-12)


def test_mass_conservation_unnormalized(tree_12_4_2):
    rng = np.random.default_rng(7)
    v = rng.random(12) * 5.0
    for level in (1, 2, 3):
        assert tree_12_4_2.coarsen_mass(v, level).sum() == pytest.approx(v.sum(), rel=1e-12)


def test_validation_rejects_non_surjective():
    with pytest.raises(ValueError, match="surjective"):
        Hierarchy(sizes=(2, 4), parent_maps=(np.array([0, 0, 0, 0]),))


def test_validation_rejects_decreasing_sizes():
    with pytest.raises(ValueError):
        Hierarchy(sizes=(4, 2), parent_maps=(np.array([0, 1]),))


def test_single_level_tree():
    h = Hierarchy(sizes=(5,))
    assert h.levels == 1
    assert h.ancestor(3, 1) == 3
