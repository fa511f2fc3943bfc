"""
Tests for maximal tree growth, prediction with missing values, pruning and cross-validated selection.

The pruning sequence is checked against a brute-force enumeration of every
rooted pruned subtree of small trees.
"""

import itertools
import logging

import numpy as np
import pytest

from cart import (MIN_RULE, ONE_SE_RULE, competing_splits_at, grow_maximal, predict_dataset, predict_tree,
                  prune_sequence, select_subtree_cv, surrogate_splits_for, tree_summary)
from dataset import dataset_from_arrays
from exceptions import ArgumentError
from models import TreeParams
from synthetic_data import additive_model, duplicated_columns, small_random, step_function, with_missing

logging.basicConfig(level=logging.INFO,
                    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


def enumerate_pruned(tree, node_id=0):
    """Every rooted pruned subtree below node_id, as the set of internal nodes it keeps"""
    node = tree[node_id]
    options = [frozenset()]
    if node.is_leaf:
        return options
    for left, right in itertools.product(enumerate_pruned(tree, node.left), enumerate_pruned(tree, node.right)):
        options.append(frozenset({node_id}) | left | right)
    return options


def criterion(tree, internal, alpha):
    pruned = tree.subtree(internal)
    return pruned.training_error() + alpha * pruned.leaf_count, pruned.leaf_count


def test_root_only_when_min_node_size_exceeds_n():
    ds = additive_model(n=30, seed=1)
    tree = grow_maximal(ds, TreeParams(min_node_size=31))
    assert tree.leaf_count == 1
    assert tree.root.prediction == pytest.approx(ds.y.mean())


def test_single_row_dataset():
    ds = dataset_from_arrays([[3.0, 4.0]], [2.5])
    tree = grow_maximal(ds, TreeParams(min_node_size=1))
    assert tree.leaf_count == 1
    assert predict_tree(tree, [0.0, 0.0]) == 2.5


def test_empty_dataset_is_rejected():
    ds = dataset_from_arrays(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(ArgumentError):
        grow_maximal(ds)


def test_maximal_tree_has_zero_training_error():
    ds = additive_model(n=150, classification=True, seed=2)
    tree = grow_maximal(ds, TreeParams(min_node_size=1))
    assert tree.training_error() == 0.0
    assert np.array_equal(predict_dataset(tree, ds), ds.y)


def test_children_partition_parent_rows():
    ds = with_missing(additive_model(n=120, seed=3), 0.2, seed=4)
    tree = grow_maximal(ds, TreeParams(min_node_size=5, max_surrogates=3))
    for node in tree.nodes.values():
        if node.is_leaf:
            continue
        left, right = tree[node.left].rows, tree[node.right].rows
        assert len(np.intersect1d(left, right)) == 0
        assert np.array_equal(np.sort(np.concatenate([left, right])), np.sort(node.rows))


def test_step_function_root_split():
    ds = step_function(n=100, seed=5)
    tree = grow_maximal(ds, TreeParams(min_node_size=1))
    assert tree.root.split.variable == 0
    assert tree.leaf_count == 2
    assert predict_tree(tree, [0.9, 0.1]) == 1.0
    assert predict_tree(tree, [0.1, 0.9]) == 0.0


def test_competing_and_surrogate_lists():
    ds = duplicated_columns(n=200, copies=2, n_noise=2, seed=6)
    tree = grow_maximal(ds, TreeParams(min_node_size=1, max_surrogates=2))
    ranked = competing_splits_at(tree, 0)
    assert ranked[0] == tree.root.split
    assert ranked[0].variable == 0
    assert tree.root.surrogates[0].variable == 1
    recomputed = surrogate_splits_for(tree, ds, 0, max_surrogates=2)
    assert recomputed == list(tree.root.surrogates)
    assert competing_splits_at(tree, tree.leaves()[0].id) == []


def test_all_missing_row_follows_majority_directions():
    ds = additive_model(n=200, classification=True, seed=7)
    tree = grow_maximal(ds, TreeParams(min_node_size=10, max_surrogates=2))
    node = tree.root
    while not node.is_leaf:
        node = tree[node.left if node.majority_left else node.right]
    label, proportions = predict_tree(tree, [np.nan] * ds.p)
    assert label == int(node.prediction)
    assert proportions == node.proportions
    assert sum(proportions) == pytest.approx(1.0)


def test_two_leaf_stump_pruning():
    ds = dataset_from_arrays([[1.0], [2.0], [3.0], [4.0]], [0, 0, 1, 1], classification=True)
    sequence = prune_sequence(grow_maximal(ds, TreeParams(min_node_size=1)))
    assert sequence.alphas == (0.0, 0.5)
    assert sequence.leaf_counts == (2, 1)
    assert sequence.subtree(1).leaf_count == 1


def test_root_only_pruning():
    ds = dataset_from_arrays([[1.0], [2.0]], [1.0, 1.0])
    sequence = prune_sequence(grow_maximal(ds))
    assert sequence.alphas == (0.0,)
    assert len(sequence) == 1


@pytest.mark.parametrize("classification", [True, False])
def test_pruning_matches_exhaustive_enumeration(classification):
    checked = 0
    for seed in range(60):
        rng = np.random.default_rng(seed)
        n, p = int(rng.integers(8, 41)), int(rng.integers(1, 5))
        ds = small_random(n, p, classification=classification, seed=seed)
        t_max = grow_maximal(ds, TreeParams(min_node_size=1))
        if t_max.leaf_count > 12:
            continue
        sequence = prune_sequence(t_max)
        candidates = enumerate_pruned(t_max)

        alphas = np.asarray(sequence.alphas)
        assert alphas[0] == 0.0
        assert np.all(np.diff(alphas) > 0)
        assert all(a > b for a, b in zip(sequence.leaf_counts, sequence.leaf_counts[1:]))
        assert sequence.internal_sets[-1] == frozenset()
        for outer, inner in zip(sequence.internal_sets, sequence.internal_sets[1:]):
            assert inner <= outer

        for k, alpha in enumerate(sequence.alphas):
            best = min(criterion(t_max, internal, alpha)[0] for internal in candidates)
            smallest = min(criterion(t_max, internal, alpha)[1] for internal in candidates
                           if criterion(t_max, internal, alpha)[0] <= best + 1e-10)
            value, leaves = criterion(t_max, sequence.internal_sets[k], alpha)
            assert value <= best + 1e-10
            assert leaves == smallest
        checked += 1
    assert checked >= 5


def test_subtree_for_penalty():
    ds = small_random(30, 2, classification=True, seed=3)
    sequence = prune_sequence(grow_maximal(ds, TreeParams(min_node_size=1)))
    for k, alpha in enumerate(sequence.alphas):
        assert sequence.index_for(alpha) == k
    assert sequence.subtree_for(1e9).leaf_count == 1


def test_cv_selection_rules():
    ds = additive_model(n=120, classification=True, seed=8)
    params = TreeParams(min_node_size=1)
    one_se, curve = select_subtree_cv(ds, params, folds=5, rule=ONE_SE_RULE, seed=1)
    minimal, min_curve = select_subtree_cv(ds, params, folds=5, rule=MIN_RULE, seed=1)
    assert one_se.leaf_count <= minimal.leaf_count
    assert curve.cv_error[curve.k_one_se] <= curve.cv_error[curve.k_min] + curve.cv_se[curve.k_min]
    assert np.array_equal(curve.cv_error, min_curve.cv_error)
    assert curve.cv_error[curve.k_min] == curve.cv_error.min()
    frame = curve.to_frame()
    assert list(frame.columns) == ["k", "alpha", "leaves", "train_error", "beta", "cv_error", "cv_se",
                                   "min_rule", "one_se_rule"]
    assert frame["one_se_rule"].sum() == 1


def test_cv_is_deterministic_across_workers():
    ds = additive_model(n=80, seed=9)
    params = TreeParams(min_node_size=3)
    _, serial = select_subtree_cv(ds, params, folds=4, seed=2, workers=1)
    _, parallel = select_subtree_cv(ds, params, folds=4, seed=2, workers=2)
    assert np.array_equal(serial.cv_error, parallel.cv_error)
    assert np.array_equal(serial.cv_se, parallel.cv_se)


def test_cv_fold_count_validation():
    ds = additive_model(n=20, seed=0)
    with pytest.raises(ArgumentError):
        select_subtree_cv(ds, folds=1)
    with pytest.raises(ArgumentError):
        select_subtree_cv(ds, folds=21)


def test_tree_summary():
    ds = step_function(n=60, seed=1)
    summary = tree_summary(grow_maximal(ds, TreeParams(min_node_size=1)), ds.names)
    assert summary["leaves"] == 2
    assert summary["split_variables"] == ["x1"]
    assert summary["training_error"] == 0.0
