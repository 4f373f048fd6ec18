import numpy as np
import pytest

from hierllp.datasets import (InstanceDataset, dataset_hash, dumps_dataset,
                              generate_synthetic, load_dataset, loads_dataset,
                              nearest_centroid_accuracy, save_dataset)
from hierllp.errors import ParseError
from hierllp.hierarchy import Hierarchy


def small_ds(**kw):
    args = dict(seed=0, C=12, per_level_sizes=(2, 4, 12), n_per_class=60, d_in=16,
                coarse_sep=6.0, fine_sep=1.0, noise_sigma=0.5)
    args.update(kw)
    return generate_synthetic(**args)


def test_zero_noise_instances_sit_on_centroids():
    ds = small_ds(noise_sigma=0.0)
    assert nearest_centroid_accuracy(ds) == 1.0
    # all instances of one class are identical vectors
    for c in (0, 5, 11):
        rows = ds.features[ds.labels_fine == c]
        np.testing.assert_array_equal(rows, np.tile(rows[0], (len(rows), 1)))


def test_same_seed_bitwise_identical():
    a, b = small_ds(), small_ds()
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels_fine, b.labels_fine)
    np.testing.assert_array_equal(a.train_ids, b.train_ids)
    assert dataset_hash(a) == dataset_hash(b)


def test_nearest_centroid_on_default_knobs():
    # oracle-computed floor at these separations; the dominant confusions are
    # the two same-parent siblings at sqrt(2)*fine_sep with sigma 0.5
    accs = [nearest_centroid_accuracy(small_ds(seed=s)) for s in (0, 1, 2)]
    assert min(accs) >= 0.80
    assert nearest_centroid_accuracy(small_ds(seed=0)) == pytest.approx(0.8722222222222222)


def test_cluster_geometry():
    ds = small_ds(noise_sigma=0.0)
    h = ds.hierarchy
    fine_centroids = np.array([ds.features[ds.labels_fine == c][0] for c in range(12)])
    # orthonormal sibling offsets of norm fine_sep: same-parent fine classes
    # sit exactly sqrt(2)*fine_sep apart
    medium = h.fine_ancestors(2)
    for m in range(4):
        sib = fine_centroids[np.flatnonzero(medium == m)]
        for i in range(len(sib)):
            for j in range(i + 1, len(sib)):
                assert np.linalg.norm(sib[i] - sib[j]) == pytest.approx(np.sqrt(2.0), rel=1e-9)
    # same-coarse cousins are farther apart than siblings (the medium scale
    # dominates), and different-coarse classes are farther still
    coarse = h.fine_ancestors(1)
    sib_d = np.linalg.norm(fine_centroids[0] - fine_centroids[1])
    cousin_d = np.linalg.norm(fine_centroids[0] - fine_centroids[3])  # same coarse
    cross = np.linalg.norm(fine_centroids[0] - fine_centroids[6])     # other coarse
    assert coarse[0] == coarse[3] and coarse[0] != coarse[6]
    assert sib_d < cousin_d < cross
    # coarse group means sit near the coarse centroids: distance is about coarse_sep
    mus = [fine_centroids[np.flatnonzero(coarse == g)].mean(axis=0) for g in (0, 1)]
    assert abs(np.linalg.norm(mus[0] - mus[1]) - 6.0) < 1.5


def test_split_stratified():
    ds = small_ds()
    for c in range(12):
        n_test = int(np.sum(ds.labels_fine[ds.test_ids] == c))
        assert abs(n_test - 60 * 0.25) <= 1
        assert np.sum(ds.labels_fine[ds.train_ids] == c) + n_test == 60


def test_generate_validates_inputs():
    with pytest.raises(ValueError, match="fine_sep"):
        small_ds(fine_sep=7.0)
    with pytest.raises(ValueError, match="n_per_class"):
        small_ds(n_per_class=3)
    with pytest.raises(ValueError, match="end in C"):
        small_ds(per_level_sizes=(2, 4, 10))
    with pytest.raises(ValueError, match="too small"):
        small_ds(d_in=4)


def test_round_trip(tmp_path):
    ds = small_ds(n_per_class=5)
    path = tmp_path / "ds.llpds"
    save_dataset(ds, str(path))
    back = load_dataset(str(path))
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels_fine, ds.labels_fine)
    np.testing.assert_array_equal(back.train_ids, ds.train_ids)
    np.testing.assert_array_equal(back.test_ids, ds.test_ids)
    assert back.hierarchy.sizes == ds.hierarchy.sizes
    for a, b in zip(back.hierarchy.parent_maps, ds.hierarchy.parent_maps):
        np.testing.assert_array_equal(a, b)
    assert dataset_hash(back) == dataset_hash(ds)


def test_truncated_file_is_parse_error(tmp_path):
    ds = small_ds(n_per_class=5)
    text = dumps_dataset(ds)
    with pytest.raises(ParseError) as e:
        loads_dataset(text[: len(text) // 2])
    assert e.value.offset > 0


def test_unknown_version_rejected():
    with pytest.raises(ParseError, match="header"):
        loads_dataset("LLPDS v9\n1 1 1\n")


def test_dimension_mismatch_reports_offset():
    good = ("LLPDS v1\n"
            "4 2 1\n"
            "2\n"
            "test_ids 2 2 3\n"
            "1 0.5 1.5\n"
            "2 -1 2\n"
            "1 0 0\n"
            "2 3 4\n")
    loads_dataset(good)
    bad = good.replace("2 -1 2\n", "2 -1\n")
    with pytest.raises(ParseError, match="record 1") as e:
        loads_dataset(bad)
    assert e.value.offset == bad.index("2 -1\n")


def test_hand_written_fixture_values():
    text = ("LLPDS v1\n"
            "4 3 2\n"
            "1 2\n"
            "1 1\n"
            "test_ids 2 2 3\n"
            "1 0.25 -3.5 1e-3\n"
            "2 1 2 3\n"
            "1 4 5 6\n"
            "2 0.1 0.2 0.30000000000000004\n")
    ds = loads_dataset(text)
    assert ds.n == 4 and ds.d_in == 3
    np.testing.assert_array_equal(ds.labels_fine, [0, 1, 0, 1])
    np.testing.assert_array_equal(ds.features[0], [0.25, -3.5, 0.001])
    assert ds.features[3, 2] == 0.30000000000000004
    np.testing.assert_array_equal(ds.train_ids, [0, 1])


def test_seventeen_digits_round_trip():
    rng = np.random.default_rng(8)
    feats = rng.normal(size=(4, 2)) * 1e3
    h = Hierarchy(sizes=(2,))
    ds = InstanceDataset(features=feats, labels_fine=[0, 1, 0, 1], hierarchy=h,
                         train_ids=[0, 1], test_ids=[2, 3])
    back = loads_dataset(dumps_dataset(ds))
    np.testing.assert_array_equal(back.features, feats)
