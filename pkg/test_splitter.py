"""
Tests for split search: best splits, competing splits, surrogates and extra-randomized cut points.
"""

import logging

import numpy as np
import pytest
from scipy.stats import kstest

from cart import grow_maximal, predict_dataset
from dataset import dataset_from_arrays
from models import Split, TreeParams
from splitter import (SplitContext, _gains, _sorted_units, best_split_at, extra_randomized_split, find_splits,
                      summarize_node, surrogate_splits_at)
from utils import make_rng

logging.basicConfig(level=logging.INFO,
                    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


def all_rows(ds):
    return np.arange(ds.n)


def test_perfect_regression_split():
    ds = dataset_from_arrays([[1.0], [2.0], [3.0], [4.0]], [0.0, 0.0, 10.0, 10.0])
    split = best_split_at(ds, all_rows(ds))
    assert split.variable == 0
    assert split.threshold == 2.5
    # SSE drops from 100 to 0 over 4 rows
    assert split.decrease == pytest.approx(25.0)


def test_pure_node_has_no_split():
    ds = dataset_from_arrays([[1.0], [2.0], [3.0]], [7.0, 7.0, 7.0])
    assert best_split_at(ds, all_rows(ds)) is None


def test_gini_of_parent():
    ds = dataset_from_arrays([[1.0], [2.0], [3.0], [4.0]], [0, 1, 1, 1], classification=True)
    summary = summarize_node(SplitContext.from_dataset(ds), all_rows(ds))
    assert summary.impurity == pytest.approx(0.375)
    assert summary.proportions == pytest.approx((0.25, 0.75))
    assert summary.prediction == 1.0


def test_min_child_size_makes_splits_inadmissible():
    ds = dataset_from_arrays([[1.0], [2.0], [3.0], [4.0]], [0.0, 10.0, 10.0, 10.0])
    assert best_split_at(ds, all_rows(ds)).threshold == 1.5
    split = best_split_at(ds, all_rows(ds), min_child_size=2.0)
    assert split.threshold == 2.5


def test_competing_splits_ranked_with_informative_first():
    rng = make_rng(4)
    x = rng.uniform(size=(60, 3))
    y = (x[:, 1] > 0.5).astype(np.float64)
    ds = dataset_from_arrays(x, y)
    ranked = find_splits(SplitContext.from_dataset(ds), all_rows(ds), range(3))
    assert ranked[0].variable == 1
    decreases = [s.decrease for s in ranked]
    assert decreases == sorted(decreases, reverse=True)


def test_equal_decrease_prefers_lower_index():
    x = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]])
    ds = dataset_from_arrays(x, [0.0, 1.0, 5.0, 6.0])
    ranked = find_splits(SplitContext.from_dataset(ds), all_rows(ds), [1, 0])
    assert [s.variable for s in ranked] == [0, 1]
    assert ranked[0].decrease == ranked[1].decrease


def test_categorical_regression_split():
    # level means: 0 -> 4, 1 -> 0, 2 -> 10
    x = [[0], [0], [1], [1], [2], [2]]
    y = [4.0, 4.0, 0.0, 0.0, 10.0, 10.0]
    ds = dataset_from_arrays(x, y, categorical={0: 3})
    split = best_split_at(ds, all_rows(ds))
    assert split.is_categorical
    assert split.left_levels == frozenset({0, 1})
    assert split.goes_left(np.array([0.0, 1.0, 2.0])).tolist() == [True, True, False]


def test_multiclass_categorical_split_is_canonical():
    x = [[0], [1], [2], [3], [0], [1], [2], [3]]
    y = [0, 1, 2, 2, 0, 1, 2, 2]
    ds = dataset_from_arrays(x, y, categorical={0: 4}, classification=True)
    split = best_split_at(ds, all_rows(ds))
    assert 0 in split.left_levels
    assert split.left_levels < frozenset({0, 1, 2, 3})
    # levels 2 and 3 share a class, so they never end up on different sides
    assert (2 in split.left_levels) == (3 in split.left_levels)


def test_duplicated_column_is_perfect_surrogate():
    rng = make_rng(0)
    base = rng.uniform(size=40)
    noise = rng.uniform(size=40)
    ds = dataset_from_arrays(np.column_stack([base, base, noise]), (base > 0.5).astype(np.float64))
    ctx = SplitContext.from_dataset(ds)
    primary = best_split_at(ds, all_rows(ds))
    assert primary.variable == 0
    surrogates = surrogate_splits_at(ctx, all_rows(ds), primary, max_surrogates=2)
    assert surrogates[0].variable == 1
    assert surrogates[0].agreement == 40.0
    assert not surrogates[0].reverse


def test_uninformative_surrogate_is_dropped():
    x0 = np.arange(20, dtype=np.float64)
    x1 = (np.arange(20) % 2).astype(np.float64)
    ds = dataset_from_arrays(np.column_stack([x0, x1]), (x0 >= 10).astype(np.float64))
    ctx = SplitContext.from_dataset(ds)
    primary = Split(0, threshold=9.5)
    # x1 sends 5 of each half each way: agreement 10 equals the baseline
    assert surrogate_splits_at(ctx, all_rows(ds), primary, max_surrogates=3) == []


def test_reversed_surrogate():
    x0 = np.arange(10, dtype=np.float64)
    ds = dataset_from_arrays(np.column_stack([x0, -x0]), (x0 >= 5).astype(np.float64))
    ctx = SplitContext.from_dataset(ds)
    surrogates = surrogate_splits_at(ctx, all_rows(ds), Split(0, threshold=4.5), max_surrogates=1)
    assert surrogates[0].reverse
    assert surrogates[0].agreement == 10.0
    assert surrogates[0].goes_left(-x0).tolist() == (x0 <= 4.5).tolist()


def test_zero_surrogates_requested():
    ds = dataset_from_arrays(np.column_stack([np.arange(6.0), np.arange(6.0)]), [0.0, 0, 0, 1, 1, 1])
    ctx = SplitContext.from_dataset(ds)
    assert surrogate_splits_at(ctx, all_rows(ds), Split(0, threshold=2.5), max_surrogates=0) == []


def test_extra_randomized_threshold_inside_range():
    rng = make_rng(9)
    x = rng.uniform(2.0, 3.0, size=(30, 2))
    x[:, 1] = 1.0
    ds = dataset_from_arrays(x, x[:, 0] * 2.0)
    ctx = SplitContext.from_dataset(ds)
    split = extra_randomized_split(ctx, all_rows(ds), [0, 1], n_thresholds=3, rng=make_rng(1))
    assert split.variable == 0
    assert x[:, 0].min() <= split.threshold < x[:, 0].max()
    again = extra_randomized_split(ctx, all_rows(ds), [0, 1], n_thresholds=3, rng=make_rng(1))
    assert again == split


def test_extra_randomized_constant_variables():
    ds = dataset_from_arrays(np.ones((5, 2)), [0.0, 1.0, 2.0, 3.0, 4.0])
    ctx = SplitContext.from_dataset(ds)
    assert extra_randomized_split(ctx, all_rows(ds), [0, 1], n_thresholds=2, rng=make_rng(0)) is None


def test_weights_act_as_multiplicities():
    x = np.array([[1.0], [2.0], [3.0]])
    weighted = dataset_from_arrays(x, [0, 1, 1], classification=True)
    expanded = dataset_from_arrays(np.array([[1.0], [1.0], [2.0], [3.0]]), [0, 0, 1, 1], classification=True)
    a = best_split_at(weighted, all_rows(weighted), weights=np.array([2.0, 1.0, 1.0]))
    b = best_split_at(expanded, all_rows(expanded))
    assert a == b


def test_split_is_invariant_under_monotone_transform():
    rng = make_rng(11)
    x = rng.uniform(size=(80, 3))
    y = ((x[:, 0] + 0.3 * rng.normal(size=80)) > 0.5).astype(np.int64)
    stretched = x.copy()
    stretched[:, 0] = np.exp(3.0 * x[:, 0])
    stretched[:, 2] = x[:, 2] ** 3
    original = dataset_from_arrays(x, y, classification=True)
    transformed = dataset_from_arrays(stretched, y, classification=True)

    a = find_splits(SplitContext.from_dataset(original), all_rows(original), range(3))
    b = find_splits(SplitContext.from_dataset(transformed), all_rows(transformed), range(3))
    assert [s.variable for s in a] == [s.variable for s in b]
    assert [s.decrease for s in a] == [s.decrease for s in b]
    for first, second in zip(a, b):
        j = first.variable
        assert np.array_equal(first.goes_left(x[:, j]), second.goes_left(stretched[:, j]))

    params = TreeParams(min_node_size=1)
    tree_a, tree_b = grow_maximal(original, params), grow_maximal(transformed, params)
    assert tree_a.leaf_count == tree_b.leaf_count
    assert np.array_equal(predict_dataset(tree_a, original), predict_dataset(tree_b, transformed))


def test_incremental_gini_matches_direct_computation():
    rng = make_rng(12)
    x = rng.integers(0, 15, size=50).astype(np.float64)
    weights = rng.integers(1, 4, size=50).astype(np.float64)
    ds = dataset_from_arrays(x[:, None], rng.integers(0, 3, size=50), classification=True)
    ctx = SplitContext.from_dataset(ds, weights)
    rows = all_rows(ds)

    def weighted_gini(mask):
        counts = np.bincount(ds.y[mask], weights=weights[mask], minlength=3)
        return counts.sum() - np.sum(counts ** 2) / counts.sum()

    xs, w, stats = _sorted_units(ctx, rows, 0)
    boundaries = np.flatnonzero(xs[:-1] < xs[1:])
    gains, parent = _gains(ctx, np.cumsum(w)[boundaries], np.cumsum(stats, axis=0)[boundaries],
                           float(w.sum()), stats.sum(axis=0))
    everything = np.ones(ds.n, dtype=bool)
    assert parent == pytest.approx(weighted_gini(everything), rel=1e-12)
    direct = []
    for gain, i in zip(gains, boundaries):
        left = x <= (xs[i] + xs[i + 1]) / 2.0
        direct.append(weighted_gini(everything) - weighted_gini(left) - weighted_gini(~left))
        assert gain == pytest.approx(direct[-1], rel=1e-12, abs=1e-12)
    split = best_split_at(ds, rows, weights=weights)
    assert split.decrease == pytest.approx(max(direct) / weights.sum(), rel=1e-12)


def test_extra_randomized_thresholds_are_uniform():
    x = np.linspace(0.0, 1.0, 51)
    ds = dataset_from_arrays(x[:, None], x.copy())
    ctx = SplitContext.from_dataset(ds)
    thresholds = np.array([extra_randomized_split(ctx, all_rows(ds), [0], n_thresholds=1, rng=make_rng(seed)).threshold
                           for seed in range(2000)])
    assert thresholds.min() >= 0.0
    assert thresholds.max() < 1.0
    assert kstest(thresholds, "uniform").pvalue > 1e-3
