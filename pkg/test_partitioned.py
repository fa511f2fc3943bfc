"""
Tests for block partitions, partitioned (map/reduce) training and bag-of-little-bootstraps forests.
"""

import json
import logging
import os
from dataclasses import replace

import numpy as np
import pytest

from cart import grow_maximal
from exceptions import ArgumentError
from forest import Forest, ForestParams, predict_forest_dataset, train_forest
from partitioned import (CONTIGUOUS, RANDOM, STRATIFIED, block_heterogeneity, make_partition,
                         per_block_importance, train_blb, train_partitioned, write_map_outputs)
from serialization import load_model
from synthetic_data import additive_model, class_sorted
from utils import derive_seed

logging.basicConfig(level=logging.INFO,
                    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


@pytest.mark.parametrize("strategy", [CONTIGUOUS, RANDOM, STRATIFIED])
def test_partition_blocks_cover_rows(strategy):
    ds = additive_model(n=103, classification=True, seed=1)
    plan = make_partition(ds, 4, strategy, seed=2)
    assert plan.Q == 4
    assert max(plan.sizes()) - min(plan.sizes()) <= 1
    assert np.array_equal(np.sort(np.concatenate(plan.blocks)), np.arange(ds.n))
    assert (plan.block_of(ds.n) >= 0).all()


def test_stratified_blocks_share_classes_evenly():
    ds = class_sorted(n=402, n_classes=3, seed=3)
    plan = make_partition(ds, 4, STRATIFIED, seed=1)
    counts = np.array([np.bincount(ds.y[block], minlength=3) for block in plan.blocks])
    assert (counts.max(axis=0) - counts.min(axis=0) <= 1).all()


def test_partition_validation():
    ds = additive_model(n=10, seed=0)
    with pytest.raises(ArgumentError):
        make_partition(ds, 0)
    with pytest.raises(ArgumentError):
        make_partition(ds, 11)
    with pytest.raises(ArgumentError):
        make_partition(ds, 2, "alphabetical")


def test_contiguous_blocks_of_sorted_data_are_heterogeneous():
    ds = class_sorted(n=400, n_classes=4, seed=4)
    diagnostics = block_heterogeneity(ds, make_partition(ds, 4, CONTIGUOUS))
    assert diagnostics.heterogeneous
    assert len(diagnostics.warnings) == 4
    assert diagnostics.frame["tv_distance"].tolist() == pytest.approx([0.75] * 4)
    assert diagnostics.chi2_pvalue < 1e-6

    balanced = block_heterogeneity(ds, make_partition(ds, 4, STRATIFIED, seed=4))
    assert not balanced.heterogeneous


def test_regression_heterogeneity_uses_mean_gap():
    ds = additive_model(n=200, seed=5)
    order = np.argsort(ds.y)
    sorted_ds = ds.take(order)
    diagnostics = block_heterogeneity(sorted_ds, make_partition(sorted_ds, 2, CONTIGUOUS))
    assert diagnostics.chi2_pvalue is None
    assert diagnostics.heterogeneous
    assert list(diagnostics.frame.columns) == ["block", "rows", "mean", "mean_gap_sd"]


def test_single_block_equals_plain_training():
    ds = additive_model(n=80, seed=6)
    params = ForestParams(ntree=6, workers=1)
    result = train_partitioned(ds, make_partition(ds, 1, CONTIGUOUS), params, seed=9)
    plain = train_forest(ds, replace(params, seed=derive_seed(9, 0)))
    assert np.array_equal(predict_forest_dataset(result.forest, ds), predict_forest_dataset(plain, ds))
    assert result.mean_block_oob_error == pytest.approx(result.outputs[0].oob_error)


def test_partitioned_training_merges_blocks():
    ds = additive_model(n=120, classification=True, seed=7)
    plan = make_partition(ds, 3, RANDOM, seed=1)
    params = ForestParams(ntree=4)
    serial = train_partitioned(ds, plan, params, seed=2, workers=1)
    parallel = train_partitioned(ds, plan, params, seed=2, workers=3)
    assert serial.forest.ntree == 12
    assert not serial.forest.oob_available
    assert [output.block_id for output in serial.outputs] == [0, 1, 2]
    assert all(output.key == 1 for output in serial.outputs)
    for output, block in zip(serial.outputs, plan.blocks):
        assert np.array_equal(output.forest.train_rows, block)
    assert np.array_equal(predict_forest_dataset(serial.forest, ds), predict_forest_dataset(parallel.forest, ds))
    assert serial.block_oob_errors == parallel.block_oob_errors


def test_map_outputs_and_block_importance(tmp_path):
    ds = additive_model(n=90, n_informative=2, n_noise=1, seed=8)
    result = train_partitioned(ds, make_partition(ds, 2, RANDOM), ForestParams(ntree=3), seed=1)
    manifest_path = write_map_outputs(result.outputs, str(tmp_path / "blocks"))
    with open(manifest_path) as f:
        manifest = json.load(f)["blocks"]
    assert [entry["block_id"] for entry in manifest] == [0, 1]
    assert sum(entry["rows"] for entry in manifest) == ds.n
    reloaded = load_model(os.path.join(tmp_path, "blocks", manifest[0]["model"]))
    assert isinstance(reloaded, Forest)
    assert reloaded.ntree == 3

    frame = per_block_importance(result.outputs, ds, seed=3)
    assert list(frame.columns) == ["variable", "block_0", "block_1"]
    assert frame["variable"].tolist() == list(ds.names)


def test_bag_of_little_bootstraps():
    ds = additive_model(n=200, seed=10)
    result = train_blb(ds, m=40, n_subsamples=3, params=ForestParams(ntree=5), seed=4)
    assert result.forest.ntree == 15
    assert all(len(support) == 40 for support in result.supports)
    assert not result.forest.oob_available
    for sub_forest, support in zip(result.sub_forests, result.supports):
        assert np.array_equal(sub_forest.train_rows, support)
        for record in sub_forest.records:
            assert record.plan.multiplicities.sum() == ds.n
            assert set(record.plan.in_bag_rows.tolist()) <= set(support.tolist())
    again = train_blb(ds, m=40, n_subsamples=3, params=ForestParams(ntree=5), seed=4, workers=2)
    assert np.array_equal(predict_forest_dataset(again.forest, ds), predict_forest_dataset(result.forest, ds))
    with pytest.raises(ArgumentError):
        train_blb(ds, m=201)


def test_blb_trees_equal_trees_on_expanded_rows():
    ds = additive_model(n=200, classification=True, seed=11)
    result = train_blb(ds, m=20, n_subsamples=2, params=ForestParams(ntree=3, mtry=ds.p), seed=5)
    tree_params = result.forest.params.tree_params(ds.p, classification=True)
    for record in result.forest.records:
        expanded = ds.take(record.plan.expanded_rows())
        assert expanded.n == ds.n
        assert record.tree.same_structure(grow_maximal(expanded, tree_params))
