import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from zoneids.data import Dataset
from zoneids.errors import SingleClassError
from zoneids.featsel import (
    SelectionConfig,
    mutual_information,
    read_feature_list,
    rfe_rank,
    select_features,
    stratified_splits,
    write_feature_list,
)

FAST = SelectionConfig(n_splits=2, ensemble_trees=5)


def labelled(x, y):
    fams = np.where(np.asarray(y) == 1, "attack", "benign")
    return Dataset(np.asarray(x, dtype=float), fams, [f"f{j}" for j in range(np.shape(x)[1])])


def test_splits_exact_stratification_on_ten_samples():
    y = np.array([0, 1] * 5)
    for train, test in stratified_splits(y, SelectionConfig(n_splits=4, test_fraction=0.2), seed=1):
        assert sorted(y[test]) == [0, 1]
        assert not set(train) & set(test)
        assert len(train) + len(test) == 10


def test_splits_differ_across_split_index():
    y = np.array([0] * 30 + [1] * 20)
    splits = stratified_splits(y, SelectionConfig(n_splits=3), seed=0)
    tests = [tuple(t) for _, t in splits]
    assert len(set(tests)) >= 2


def test_splits_single_class():
    with pytest.raises(SingleClassError):
        stratified_splits(np.zeros(10), SelectionConfig(), seed=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(4, 120), st.floats(0.1, 0.5))
def test_split_class_ratio_within_one_sample(seed, n, frac):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    y[:2] = [0, 1]
    for train, test in stratified_splits(y, SelectionConfig(n_splits=2, test_fraction=frac), seed):
        assert abs(y[test].sum() - y.mean() * len(test)) <= 1
        assert len(np.intersect1d(train, test)) == 0


def test_rfe_label_copy_beats_noise():
    rng = np.random.default_rng(0)
    y = np.array([0, 1] * 25)
    x = np.column_stack([y.astype(float), rng.normal(size=50)])
    ranks = rfe_rank(labelled(x, y), np.arange(50), FAST, seed=0)
    assert_array_equal(ranks, [1, 2])


def test_rfe_needs_two_features():
    y = np.array([0, 1] * 5)
    with pytest.raises(ValueError):
        rfe_rank(labelled(np.zeros((10, 1)), y), np.arange(10), FAST, seed=0)


def test_rfe_ties_keep_lowest_index():
    y = np.array([0, 1] * 10)
    ranks = rfe_rank(labelled(np.ones((20, 4)), y), np.arange(20), FAST, seed=0)
    assert_array_equal(ranks, [1, 2, 3, 4])


def test_rfe_identical_copies_give_permutation():
    rng = np.random.default_rng(1)
    y = np.array([0, 1] * 20)
    col = y + rng.normal(0, 0.5, size=40)
    ranks = rfe_rank(labelled(np.column_stack([col] * 4), y), np.arange(40), FAST, seed=3)
    assert sorted(ranks) == [1, 2, 3, 4]


def test_mi_label_copy_is_ln2():
    y = np.array([0, 1] * 500)
    assert abs(mutual_information(y.astype(float), y) - math.log(2)) < 1e-9


def test_mi_constant_feature_is_zero():
    y = np.array([0, 1] * 50)
    assert mutual_information(np.full(100, 3.0), y) == 0.0


def test_mi_independent_feature_is_small():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        assert mutual_information(rng.normal(size=10_000), rng.integers(0, 2, 10_000), 10) < 0.02


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(10, 300))
def test_mi_symmetry_and_monotone_invariance(seed, n):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    x = rng.normal(size=n) + y
    base = mutual_information(x, y)
    assert base >= 0
    assert mutual_information(x, 1 - y) == pytest.approx(base, abs=1e-12)
    assert mutual_information(np.exp(3 * x) + 7, y) == pytest.approx(base, abs=1e-12)


def test_select_all_when_quantile_is_one():
    rng = np.random.default_rng(2)
    y = np.array([0, 1] * 30)
    x = rng.normal(size=(60, 6))
    res = select_features(labelled(x, y), SelectionConfig(n_splits=1, ensemble_trees=3, quantile=1.0), 0)
    assert sorted(res.selected) == [f"f{j}" for j in range(6)]


def test_select_keeps_ties_at_cutoff():
    y = np.array([0, 1] * 20)
    x = np.column_stack([y.astype(float)] * 5)
    res = select_features(labelled(x, y), SelectionConfig(n_splits=1, ensemble_trees=3), 0)
    assert len(res.selected) == 5


def test_select_orders_by_mean_rank_and_is_deterministic():
    rng = np.random.default_rng(4)
    y = np.array([0, 1] * 100)
    x = rng.normal(size=(200, 10))
    x[:, 3] += 2 * y
    x[:, 7] += y
    data = labelled(x, y)
    a = select_features(data, FAST, seed=9)
    b = select_features(data, FAST, seed=9)
    assert a.selected == b.selected
    assert_array_equal(a.ranking.per_split_ranks, b.ranking.per_split_ranks)
    mean = a.ranking.mean_rank
    pos = [data.feature_names.index(n) for n in a.selected]
    assert list(mean[pos]) == sorted(mean[pos])
    assert {"f3", "f7"} <= set(a.selected)
    for row in a.ranking.per_split_ranks:
        assert sorted(row) == list(range(1, 11))
    assert_array_equal(mean, a.ranking.per_split_ranks.mean(axis=0))


def test_feature_list_file_round_trip(tmp_path):
    write_feature_list(["b", "a", "c"], tmp_path / "f.txt")
    assert read_feature_list(tmp_path / "f.txt") == ["b", "a", "c"]
