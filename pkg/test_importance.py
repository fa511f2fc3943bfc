"""
Tests for permutation importance, grouped importance and replicated importance reports.
"""

import logging

import numpy as np
import pytest

from exceptions import ArgumentError, DegenerateError
from forest import ForestParams, train_forest
from importance import grouped_importance, replicated_importance, routing_variables, variable_importance
from synthetic_data import additive_model, duplicated_columns, step_function

logging.basicConfig(level=logging.INFO,
                    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


def trained(ds, ntree=30, seed=0, **kwargs):
    return train_forest(ds, ForestParams(ntree=ntree, seed=seed, **kwargs))


def test_unused_variable_has_zero_importance():
    ds = step_function(n=200, p=2, seed=1)
    forest = trained(ds, ntree=20, mtry=2)
    assert all(routing_variables(tree) == {0} for tree in forest.trees)
    result = variable_importance(forest, ds, seed=3)
    assert result.values[1] == 0.0
    assert result.values[0] > 0.0
    assert result.trees_used == 20
    assert result.trees_skipped == 0


def test_informative_variables_rank_above_noise():
    ds = additive_model(n=300, n_informative=3, n_noise=5, seed=2)
    result = variable_importance(trained(ds, ntree=60, seed=1), ds, seed=1)
    assert result.names == ds.names
    assert result.values[0] > result.values[3:].max()


def test_importance_is_deterministic():
    ds = additive_model(n=120, classification=True, seed=3)
    forest = trained(ds, ntree=15)
    first = variable_importance(forest, ds, seed=7)
    second = variable_importance(forest, ds, seed=7, workers=2)
    assert np.array_equal(first.values, second.values)


def test_singleton_groups_match_per_variable_importance():
    ds = additive_model(n=100, n_informative=2, n_noise=2, seed=4)
    forest = trained(ds, ntree=10)
    single = variable_importance(forest, ds, seed=2)
    grouped = grouped_importance(forest, ds, [[j] for j in range(ds.p)], seed=2)
    assert np.array_equal(single.values, grouped.values)


def test_grouped_importance_names_and_validation():
    ds = additive_model(n=100, n_informative=2, n_noise=2, seed=5)
    forest = trained(ds, ntree=10)
    result = grouped_importance(forest, ds, [[0, 1], [2, 3]], seed=1)
    assert result.names == ("signal1+signal2", "noise1+noise2")
    named = grouped_importance(forest, ds, [[0, 1]], seed=1, group_names=["signals"])
    assert named.names == ("signals",)
    assert named.values[0] == result.values[0]
    with pytest.raises(ArgumentError):
        grouped_importance(forest, ds, [[0, 1], [1, 2]])
    with pytest.raises(ArgumentError):
        grouped_importance(forest, ds, [[]])
    with pytest.raises(ArgumentError):
        grouped_importance(forest, ds, [[0, 9]])


def test_importance_needs_out_of_bag_rows():
    ds = additive_model(n=60, seed=6)
    forest = trained(ds, ntree=3, split_mode="extra")
    with pytest.raises(DegenerateError):
        variable_importance(forest, ds)


def test_importance_rejects_other_data():
    ds = additive_model(n=60, seed=7)
    forest = trained(ds, ntree=3)
    with pytest.raises(ArgumentError):
        variable_importance(forest, additive_model(n=60, seed=8))


def test_replicated_importance_report():
    ds = additive_model(n=120, n_informative=2, n_noise=3, seed=9)
    report = replicated_importance(ds, ForestParams(ntree=15), nrep=3, seed=4)
    assert report.values.shape == (3, 5)
    assert len(set(report.seeds)) == 3
    assert np.all(report.sd >= 0)
    frame = report.to_frame()
    assert list(frame.columns) == ["variable", "mean_vi", "sd_vi", "rank"]
    assert frame["rank"].tolist() == [1, 2, 3, 4, 5]
    assert frame["mean_vi"].is_monotonic_decreasing
    again = replicated_importance(ds, ForestParams(ntree=15), nrep=3, seed=4)
    assert np.array_equal(again.values, report.values)


def test_single_replication_reports_zero_sd():
    ds = additive_model(n=80, n_informative=1, n_noise=2, seed=10)
    report = replicated_importance(ds, ForestParams(ntree=10), nrep=1)
    assert report.sd_undefined
    assert report.sd.tolist() == [0.0, 0.0, 0.0]
    with pytest.raises(ArgumentError):
        replicated_importance(ds, ForestParams(ntree=10), nrep=0)


def test_grouped_duplicates_outweigh_each_copy():
    ds = duplicated_columns(n=300, copies=2, n_noise=3, seed=1)
    forest = trained(ds, ntree=60, seed=2)
    single = variable_importance(forest, ds, seed=4)
    grouped = grouped_importance(forest, ds, [[0, 1]], seed=4)
    assert grouped.values[0] > single.values[0]
    assert grouped.values[0] > single.values[1]


def test_informative_variables_outrank_noise_across_replications():
    wins = 0
    for replication in range(20):
        ds = additive_model(n=500, n_informative=3, n_noise=7, seed=200 + replication)
        report = replicated_importance(ds, ForestParams(ntree=60), nrep=2, seed=replication)
        if report.mean[:3].min() > report.mean[3:].max():
            wins += 1
    logger.info(f"Informative variables ranked first in {wins}/20 replications")
    assert wins >= 19
