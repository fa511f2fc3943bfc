"""
Tests for forest training, prediction aggregation, out-of-bag error and forest merging.
"""

import logging
from dataclasses import replace

import numpy as np
import pytest

from cart import grow_maximal, predict_tree
from config import Config
from dataset import BLB, SUBSAMPLE, ResampleSpec, draw_resample
from exceptions import ArgumentError, DegenerateError
from forest import (ForestParams, evaluate, merge_forests, oob_error, oob_error_curve, predict_forest,
                    predict_forest_dataset, train_forest)
from models import TreeParams
from synthetic_data import additive_model, pure_noise, with_missing
from utils import parallel_pool

logging.basicConfig(level=logging.INFO,
                    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


def test_forest_is_reproducible_and_worker_independent():
    ds = additive_model(n=120, seed=1)
    serial = train_forest(ds, ForestParams(ntree=12, seed=5, workers=1))
    parallel = train_forest(ds, ForestParams(ntree=12, seed=5, workers=2))
    assert np.array_equal(predict_forest_dataset(serial, ds), predict_forest_dataset(parallel, ds))
    assert np.array_equal(serial.oob.totals, parallel.oob.totals)
    for a, b in zip(serial.trees, parallel.trees):
        assert a.same_structure(b)


def test_default_parameters_follow_task():
    params = ForestParams()
    assert params.resolved_mtry(57, classification=True) == 7
    assert params.resolved_mtry(10, classification=False) == 3
    assert params.resolved_mtry(2, classification=False) == 1
    assert params.resolved_nodesize(classification=True) == 1
    assert params.resolved_nodesize(classification=False) == 5
    assert ForestParams(mtry=10).describe(10, classification=True) == "bagging"
    assert ForestParams(split_mode="extra").resample_spec().kind == "identity"


def test_invalid_parameters():
    ds = additive_model(n=30, seed=0)
    with pytest.raises(ArgumentError):
        train_forest(ds, ForestParams(ntree=0))
    with pytest.raises(ArgumentError):
        train_forest(ds, ForestParams(mtry=ds.p + 1))


def test_single_tree_forest_is_flagged():
    ds = additive_model(n=50, seed=2)
    forest = train_forest(ds, ForestParams(ntree=1))
    assert forest.ntree == 1
    assert any("high variance" in note for note in forest.notes)


def test_regression_prediction_is_tree_mean():
    ds = additive_model(n=60, seed=3)
    forest = train_forest(ds, ForestParams(ntree=5, seed=1))
    row = ds.X[0]
    expected = np.mean([predict_tree(tree, row) for tree in forest.trees])
    assert predict_forest(forest, row) == pytest.approx(expected)


def test_classification_vote_fractions():
    ds = additive_model(n=80, classification=True, seed=4)
    forest = train_forest(ds, ForestParams(ntree=7, seed=2))
    label, fractions = predict_forest(forest, ds.X[3])
    assert sum(fractions) == pytest.approx(1.0)
    assert label == int(np.argmax(fractions))
    assert all(round(f * 7) == pytest.approx(f * 7) for f in fractions)


def test_oob_error_on_pure_noise_is_near_one_half():
    errors = []
    for seed in range(20):
        ds = pure_noise(n=500, p=5, seed=seed)
        report = oob_error(train_forest(ds, ForestParams(ntree=40, seed=seed)), ds)
        assert report.n_excluded == 0
        errors.append(report.error)
    assert abs(np.mean(errors) - 0.5) <= 0.03
    assert max(abs(e - 0.5) for e in errors) <= 0.1


def test_oob_error_tracks_test_error():
    gaps = []
    for seed in range(20):
        ds = additive_model(n=2500, classification=True, seed=100 + seed)
        train, test = ds.take(np.arange(500)), ds.take(np.arange(500, 2500))
        forest = train_forest(train, ForestParams(ntree=80, seed=seed, workers=2))
        gaps.append(oob_error(forest, train).error - evaluate(forest, test).error)
    gaps = np.abs(gaps)
    logger.info(f"OOB/test gaps: mean {gaps.mean():.4f}, max {gaps.max():.4f}")
    assert gaps.mean() <= 0.03
    assert gaps.max() <= 0.08


def test_oob_error_requires_training_data():
    ds = additive_model(n=60, seed=7)
    other = additive_model(n=60, seed=8)
    forest = train_forest(ds, ForestParams(ntree=5))
    with pytest.raises(ArgumentError):
        oob_error(forest, other)


def test_extra_trees_have_no_out_of_bag_rows():
    ds = additive_model(n=60, seed=9)
    forest = train_forest(ds, ForestParams(ntree=4, split_mode="extra", n_thresholds=2))
    assert forest.params.describe(ds.p, False) == "extra-trees"
    with pytest.raises(DegenerateError):
        oob_error(forest, ds)


def test_subsample_forest():
    ds = additive_model(n=80, seed=10)
    forest = train_forest(ds, ForestParams(ntree=6, resample=ResampleSpec(SUBSAMPLE, size=40)))
    for record in forest.records:
        assert record.plan.multiplicities.sum() == 40
        assert len(record.plan.oob_rows) == 40
    assert np.isfinite(oob_error(forest, ds).error)


def test_oob_error_curve_ends_at_forest_oob_error():
    ds = additive_model(n=100, classification=True, seed=11)
    forest = train_forest(ds, ForestParams(ntree=25, seed=6))
    curve = oob_error_curve(forest, ds, step=10)
    assert curve["ntree"].tolist() == [10, 20, 25]
    assert curve["oob_error"].iloc[-1] == oob_error(forest, ds).error


def test_merging_own_trees_reproduces_predictions():
    ds = additive_model(n=90, seed=12)
    forest = train_forest(ds, ForestParams(ntree=10, seed=7))
    merged = merge_forests([forest.take_trees(range(0, 4)), forest.take_trees(range(4, 10))], ds)
    assert np.array_equal(predict_forest_dataset(merged, ds), predict_forest_dataset(forest, ds))
    assert oob_error(merged, ds).error == oob_error(forest, ds).error


def test_merging_sub_forests_of_same_data_sums_oob():
    ds = additive_model(n=70, classification=True, seed=13)
    a = train_forest(ds, ForestParams(ntree=3, seed=1))
    b = train_forest(ds, ForestParams(ntree=4, seed=2))
    merged = merge_forests([a, b])
    assert merged.ntree == 7
    assert np.array_equal(merged.oob.counts, a.oob.counts + b.oob.counts)


def test_merging_disjoint_blocks_drops_oob():
    ds = additive_model(n=60, seed=14)
    a = train_forest(ds, ForestParams(ntree=3), rows=np.arange(30))
    b = train_forest(ds, ForestParams(ntree=3), rows=np.arange(30, 60))
    merged = merge_forests([a, b])
    assert not merged.oob_available
    assert np.array_equal(merged.train_rows, np.arange(60))
    with pytest.raises(DegenerateError):
        oob_error(merged, ds)


def test_merge_rejects_incompatible_schemas():
    a = train_forest(additive_model(n=40, seed=0), ForestParams(ntree=2))
    b = train_forest(additive_model(n=40, n_noise=3, seed=0), ForestParams(ntree=2))
    with pytest.raises(ArgumentError):
        merge_forests([a, b])


def test_block_forest_oob_rows_stay_in_block():
    ds = additive_model(n=80, seed=15)
    rows = np.arange(20, 60)
    forest = train_forest(ds, ForestParams(ntree=5), rows=rows)
    for record in forest.records:
        assert set(record.plan.oob_rows.tolist()) <= set(rows.tolist())
        assert set(record.plan.in_bag_rows.tolist()) <= set(rows.tolist())


def test_weighted_tree_equals_expanded_tree():
    ds = additive_model(n=200, classification=True, seed=16)
    params = TreeParams(min_node_size=1)
    plan = draw_resample(ds.n, ResampleSpec(BLB, size=20), seed=3)
    weighted = grow_maximal(ds, params, weights=plan.multiplicities)
    expanded = grow_maximal(ds.take(plan.expanded_rows()), params)
    assert weighted.same_structure(expanded)


def test_prediction_with_missing_values():
    ds = with_missing(additive_model(n=100, seed=17), 0.1, seed=1)
    forest = train_forest(ds, ForestParams(ntree=5))
    value = predict_forest(forest, [np.nan] * ds.p)
    assert np.isfinite(value)
    assert value == predict_forest(forest, [np.nan] * ds.p)


def test_merged_forest_pools_votes_and_tree_means():
    ds = additive_model(n=70, classification=True, seed=18)
    a = train_forest(ds, ForestParams(ntree=3, seed=1))
    b = train_forest(ds, ForestParams(ntree=4, seed=2))
    merged = merge_forests([a, b])
    for row in ds.X[:10]:
        _, fa = predict_forest(a, row)
        _, fb = predict_forest(b, row)
        _, fm = predict_forest(merged, row)
        assert np.allclose(fm, (3 * np.asarray(fa) + 4 * np.asarray(fb)) / 7)

    ds = additive_model(n=70, seed=19)
    a = train_forest(ds, ForestParams(ntree=2, seed=3))
    b = train_forest(ds, ForestParams(ntree=5, seed=4))
    merged = merge_forests([a, b])
    for row in ds.X[:10]:
        expected = (2 * predict_forest(a, row) + 5 * predict_forest(b, row)) / 7
        assert predict_forest(merged, row) == pytest.approx(expected)


def test_parallel_backend_comes_from_profile(monkeypatch):
    ds = additive_model(n=80, seed=20)
    params = ForestParams(ntree=6, seed=2)
    serial = train_forest(ds, params)
    monkeypatch.setattr(Config, "PARALLEL_BACKEND", "threading")
    pool = parallel_pool(2)
    assert pool.n_jobs == 2
    threaded = train_forest(ds, replace(params, workers=2))
    assert np.array_equal(predict_forest_dataset(serial, ds), predict_forest_dataset(threaded, ds))
