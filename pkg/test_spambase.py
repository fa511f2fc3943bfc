"""
Reference runs on the Spambase email data (4601 rows, 57 features, spam/non-spam target).

Skipped unless FORESTKIT_SPAMBASE points to the data as a CSV with a header
row; FORESTKIT_SPAMBASE_TARGET names the target column (default "spam") and
FORESTKIT_WORKERS the number of worker processes (default 4). Tolerances
absorb the variance of the random 2300/2301 train/test split.
"""

import logging
import os

import numpy as np
import pytest

from cart import MIN_RULE, ONE_SE_RULE, grow_maximal, select_subtree_cv
from dataset import CLASSIFICATION, load_csv, split_train_test
from forest import ForestParams, evaluate, merge_forests, oob_error, train_forest
from models import TreeParams
from partitioned import RANDOM, make_partition, train_partitioned
from reports import error_of
from selection import subset_params, vsurf

logging.basicConfig(level=logging.INFO,
                    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

SPAMBASE = os.environ.get("FORESTKIT_SPAMBASE")
TARGET = os.environ.get("FORESTKIT_SPAMBASE_TARGET", "spam")
WORKERS = int(os.environ.get("FORESTKIT_WORKERS", "4"))
SEED = 2300

pytestmark = pytest.mark.skipif(not SPAMBASE or not os.path.exists(SPAMBASE),
                                reason="FORESTKIT_SPAMBASE does not point to a Spambase CSV")


@pytest.fixture(scope="module")
def spam():
    ds = load_csv(SPAMBASE, target=TARGET, task=CLASSIFICATION)
    assert (ds.n, ds.p) == (4601, 57)
    return split_train_test(ds, 2300, seed=SEED)


@pytest.fixture(scope="module")
def default_forest(spam):
    train, _ = spam
    return train_forest(train, ForestParams(ntree=500, seed=SEED, workers=WORKERS))


def test_cart_trees(spam):
    train, test = spam
    maximal = grow_maximal(train, TreeParams(min_node_size=1))
    assert error_of(maximal, train) == 0.0

    params = TreeParams(min_node_size=1)
    one_se, _ = select_subtree_cv(train, params, folds=10, rule=ONE_SE_RULE, seed=SEED, workers=WORKERS)
    smallest_error, _ = select_subtree_cv(train, params, folds=10, rule=MIN_RULE, seed=SEED, workers=WORKERS)
    logger.info(f"1-SE tree: {one_se.leaf_count} leaves, test error {error_of(one_se, test):.4f}; "
                f"min-rule tree: {smallest_error.leaf_count} leaves, test error {error_of(smallest_error, test):.4f}")
    assert 10 <= one_se.leaf_count <= 30
    assert abs(error_of(one_se, test) - 0.096) <= 0.02
    assert abs(error_of(smallest_error, test) - 0.086) <= 0.02


def test_random_forest_and_bagging(spam, default_forest):
    train, test = spam
    forest_error = evaluate(default_forest, test).error
    bagging = train_forest(train, ForestParams(ntree=500, mtry=train.p, seed=SEED, workers=WORKERS))
    bagging_error = evaluate(bagging, test).error
    logger.info(f"Test errors: random forest {forest_error:.4f}, bagging {bagging_error:.4f}")
    assert abs(forest_error - 0.052) <= 0.015
    assert abs(bagging_error - 0.060) <= 0.015
    assert abs(oob_error(default_forest, train).error - forest_error) <= 0.015


def test_variable_selection(spam):
    train, test = spam
    params = ForestParams(ntree=500, seed=SEED, workers=WORKERS)
    report = vsurf(train, params, nrep=10, nrep_interp=5, seed=SEED)
    sizes = (len(report.kept), len(report.interpretation_set), len(report.prediction_set))
    logger.info(f"Selected set sizes: {sizes}")
    assert 40 <= sizes[0] <= 57
    assert 20 <= sizes[1] <= 40
    assert 8 <= sizes[2] <= 25

    for variables, target in ((report.interpretation_set, 0.056), (report.prediction_set, 0.060)):
        subset = subset_params(params, len(variables), True, SEED)
        forest = train_forest(train.select(variables), subset)
        assert abs(evaluate(forest, test.select(variables)).error - target) <= 0.02


def test_partitioned_forest_matches_single_forest(spam, default_forest):
    train, test = spam
    plan = make_partition(train, 4, RANDOM, seed=SEED)
    result = train_partitioned(train, plan, ForestParams(ntree=125), seed=SEED, workers=WORKERS)
    assert result.forest.ntree == 500
    merged_error = evaluate(result.forest, test).error
    assert abs(merged_error - evaluate(default_forest, test).error) <= 0.015

    # re-merging the blocks' sub-forests gives the same forest
    again = merge_forests([output.forest for output in result.outputs])
    assert np.array_equal(evaluate(again, test).losses, evaluate(result.forest, test).losses)
