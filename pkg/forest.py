"""
Random forests: bagging, random-input forests and extra-randomized trees,
with out-of-bag bookkeeping, prediction aggregation and forest merging.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import delayed

from cart import grow_maximal, predict_rows, row_losses
from config import get_config
from dataset import BOOTSTRAP, IDENTITY, Dataset, ResamplePlan, ResampleSpec, Schema, draw_resample
from exceptions import ArgumentError, DegenerateError
from models import EXHAUSTIVE, EXTRA, SPLIT_MODES, Tree, TreeParams
from utils import default_mtry, make_rng, parallel_pool

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[int, int], None]


@dataclass(frozen=True)
class ForestParams:
    """
    Forest hyperparameters.

    ntree: number of trees q. mtry: candidate variables per node (None =
    sqrt(p) in classification, p/3 in regression). nodesize: minimum node
    size to split (None = 1 classification, 5 regression). resample: how each
    tree's sample is drawn (None = bootstrap of size n, identity in extra
    mode). split_mode: "exhaustive" or "extra" with n_thresholds cut points
    per candidate variable.
    """
    ntree: int = 500
    mtry: Optional[int] = None
    nodesize: Optional[int] = None
    resample: Optional[ResampleSpec] = None
    split_mode: str = EXHAUSTIVE
    n_thresholds: int = 1
    seed: int = 0
    workers: int = 1

    def validate(self, p: int) -> "ForestParams":
        if self.ntree < 1:
            raise ArgumentError(f"ntree must be at least 1, got {self.ntree}")
        if self.mtry is not None and not 1 <= self.mtry <= p:
            raise ArgumentError(f"mtry must lie in 1..{p}, got {self.mtry}")
        if self.nodesize is not None and self.nodesize < 1:
            raise ArgumentError(f"nodesize must be at least 1, got {self.nodesize}")
        if self.split_mode not in SPLIT_MODES:
            raise ArgumentError(f"Unknown split mode '{self.split_mode}'")
        if self.n_thresholds < 1:
            raise ArgumentError(f"n_thresholds must be at least 1, got {self.n_thresholds}")
        if self.workers < 1:
            raise ArgumentError(f"workers must be at least 1, got {self.workers}")
        return self

    def resolved_mtry(self, p: int, classification: bool) -> int:
        return self.mtry if self.mtry is not None else default_mtry(p, classification)

    def resolved_nodesize(self, classification: bool) -> int:
        if self.nodesize is not None:
            return self.nodesize
        config = get_config()
        return config.NODESIZE_CLASSIFICATION if classification else config.NODESIZE_REGRESSION

    def resample_spec(self) -> ResampleSpec:
        if self.resample is not None:
            return self.resample
        return ResampleSpec(IDENTITY) if self.split_mode == EXTRA else ResampleSpec(BOOTSTRAP)

    def tree_params(self, p: int, classification: bool) -> TreeParams:
        return TreeParams(
            min_node_size=self.resolved_nodesize(classification),
            mtry=self.resolved_mtry(p, classification),
            split_mode=self.split_mode,
            n_thresholds=self.n_thresholds,
            max_surrogates=0,
            keep_competing=False,
            keep_rows=False,
        )

    def describe(self, p: int, classification: bool) -> str:
        """Name of the ensemble method these parameters amount to"""
        if self.split_mode == EXTRA:
            return "extra-trees"
        if self.resolved_mtry(p, classification) == p:
            return "bagging"
        return "random-forest"


@dataclass(frozen=True, eq=False)
class TreeRecord:
    """A forest member: the tree, the plan it was grown on and its OOB error"""
    tree: Tree
    plan: ResamplePlan
    seed: int
    index: int
    oob_error: float = math.nan


@dataclass(eq=False)
class OOBCache:
    """Per-row aggregated out-of-bag predictions (sums or class votes) and tree counts"""
    totals: np.ndarray
    counts: np.ndarray

    def add(self, rows: np.ndarray, predictions: np.ndarray, classification: bool):
        if classification:
            np.add.at(self.totals, (rows, predictions), 1.0)
        else:
            self.totals[rows] += predictions
        self.counts[rows] += 1

    def copy(self) -> "OOBCache":
        return OOBCache(self.totals.copy(), self.counts.copy())


@dataclass(frozen=True, eq=False)
class Forest:
    """
    Trained forest.

    ``train_rows`` are the rows of the training dataset (identified by
    ``fingerprint``) the forest was trained on. ``oob`` is None when the
    out-of-bag aggregate is unavailable (forests merged across datasets or
    row blocks).
    """
    records: Tuple[TreeRecord, ...]
    params: ForestParams
    schema: Schema
    n_rows: int
    fingerprint: str
    train_rows: np.ndarray
    oob: Optional[OOBCache] = None
    notes: Tuple[str, ...] = field(default=())

    @property
    def trees(self) -> List[Tree]:
        return [record.tree for record in self.records]

    @property
    def ntree(self) -> int:
        return len(self.records)

    @property
    def classification(self) -> bool:
        return self.schema.task.is_classification

    @property
    def n_classes(self) -> int:
        return self.schema.task.n_classes

    @property
    def p(self) -> int:
        return self.schema.p

    @property
    def oob_available(self) -> bool:
        return self.oob is not None

    def per_tree_oob_errors(self) -> np.ndarray:
        return np.array([record.oob_error for record in self.records], dtype=np.float64)

    def take_trees(self, indices: Sequence[int]) -> "Forest":
        """Sub-forest made of some of this forest's trees (OOB aggregate dropped)"""
        records = tuple(self.records[i] for i in indices)
        return replace(self, records=records, params=replace(self.params, ntree=len(records)), oob=None)


def _empty_cache(n_rows: int, classification: bool, n_classes: int) -> OOBCache:
    shape = (n_rows, n_classes) if classification else (n_rows,)
    return OOBCache(np.zeros(shape, dtype=np.float64), np.zeros(n_rows, dtype=np.int64))


def _grow_member(ds: Dataset, rows: np.ndarray, spec: ResampleSpec, tree_params: TreeParams,
                 seed: int, index: int):
    """Grow tree ``index``: its plan is drawn first, then node draws follow on the same stream"""
    rng = make_rng(seed, index)
    plan = draw_resample(len(rows), spec, rng).embed(rows, ds.n)
    tree = grow_maximal(ds, tree_params, weights=plan.multiplicities, rng=rng)
    oob_rows = plan.oob_rows
    if len(oob_rows):
        predictions = predict_rows(tree, ds.X[oob_rows], ds.missing[oob_rows])
        oob_error = float(row_losses(predictions, ds.y[oob_rows], ds.task.is_classification).mean())
    else:
        predictions = np.empty(0)
        oob_error = math.nan
    return TreeRecord(tree, plan, seed, index, oob_error), oob_rows, predictions


def train_forest(ds: Dataset, params: Optional[ForestParams] = None, rows: Optional[Sequence[int]] = None,
                 progress: Optional[ProgressCallback] = None) -> Forest:
    """
    Train a forest of unpruned trees on (a subset of) a dataset.

    Tree l draws its resample and then its per-node candidate variables from
    the stream keyed by (seed, l), so the forest does not depend on the
    number of workers. In-bag multiplicities weight the rows instead of
    duplicating them.

    Parameters:
        ds: Training data
        params: Forest hyperparameters
        rows: Rows to train on (default all)
        progress: Called with (trees completed, ntree)

    Returns:
        Forest with its out-of-bag aggregate
    """
    params = (params or ForestParams()).validate(ds.p)
    if ds.n == 0 or ds.y is None:
        raise ArgumentError("Cannot train a forest on an empty dataset")
    rows = np.arange(ds.n) if rows is None else np.asarray(rows, dtype=np.int64)
    if len(rows) == 0:
        raise ArgumentError("Cannot train a forest on an empty row set")
    classification = ds.task.is_classification
    tree_params = params.tree_params(ds.p, classification)
    spec = params.resample_spec()
    method = params.describe(ds.p, classification)
    logger.info(f"Training {method} with {params.ntree} trees on {len(rows)} rows "
                f"(mtry={tree_params.mtry}, nodesize={tree_params.min_node_size}, resample={spec.kind})")

    q = params.ntree
    chunk = max(1, math.ceil(q / 10))
    records = []
    cache = _empty_cache(ds.n, classification, ds.task.n_classes)
    with parallel_pool(params.workers) as parallel:
        for start in range(0, q, chunk):
            batch = parallel(delayed(_grow_member)(ds, rows, spec, tree_params, params.seed, index)
                             for index in range(start, min(start + chunk, q)))
            for record, oob_rows, predictions in batch:
                records.append(record)
                if len(oob_rows):
                    cache.add(oob_rows, predictions, classification)
            logger.info(f"Trees completed: {len(records)}/{q}")
            if progress is not None:
                progress(len(records), q)

    empty = sum(1 for record in records if math.isnan(record.oob_error))
    if empty:
        logger.warning(f"{empty} of {q} trees have an empty out-of-bag set")
    notes = ()
    if q == 1:
        notes = ("single-tree forest: error estimates have high variance",)
    return Forest(tuple(records), params, ds.schema, ds.n, ds.fingerprint, rows, cache, notes)


def forest_totals(forest: Forest, X: np.ndarray, missing: np.ndarray) -> np.ndarray:
    """Class vote counts (n, L) or the running sum of tree predictions (n,), trees taken in order"""
    n = X.shape[0]
    if forest.classification:
        votes = np.zeros((n, forest.n_classes), dtype=np.float64)
        for tree in forest.trees:
            np.add.at(votes, (np.arange(n), predict_rows(tree, X, missing)), 1.0)
        return votes
    total = np.zeros(n, dtype=np.float64)
    for tree in forest.trees:
        total += predict_rows(tree, X, missing)
    return total


def _aggregate(totals: np.ndarray, counts, classification: bool) -> np.ndarray:
    if classification:
        return np.argmax(totals, axis=1).astype(np.int64)
    return totals / counts


def predict_forest_rows(forest: Forest, X: np.ndarray, missing: np.ndarray) -> np.ndarray:
    """Forest predictions: tree mean (regression) or majority vote, ties to the smallest class code"""
    if forest.ntree == 0:
        raise ArgumentError("Cannot predict with an empty forest")
    return _aggregate(forest_totals(forest, X, missing), forest.ntree, forest.classification)


def predict_forest(forest: Forest, row: Sequence[float], missing: Optional[Sequence[bool]] = None):
    """
    Prediction for one feature record (NaN = missing when no mask is given).

    Regression returns the mean of the tree predictions; classification
    returns (class code, vote fractions).
    """
    x = np.asarray(row, dtype=np.float64).reshape(1, -1)
    mask = np.isnan(x) if missing is None else np.asarray(missing, dtype=bool).reshape(1, -1)
    x = np.where(mask, 0.0, x)
    totals = forest_totals(forest, x, mask)
    if forest.classification:
        return int(np.argmax(totals[0])), tuple(float(v) for v in totals[0] / forest.ntree)
    return float(totals[0] / forest.ntree)


def predict_forest_dataset(forest: Forest, ds: Dataset) -> np.ndarray:
    _check_schema(forest, ds)
    return predict_forest_rows(forest, ds.X, ds.missing)


def _check_schema(forest: Forest, ds: Dataset):
    names_match = forest.schema.names == ds.names
    kinds_match = tuple(k.tag for k in forest.schema.kinds) == tuple(k.tag for k in ds.kinds)
    if not (names_match and kinds_match):
        raise ArgumentError("Dataset columns do not match the forest's training schema")


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Error of a set of predictions: MSE or misclassification rate, with per-row losses"""
    error: float
    losses: np.ndarray
    rows: np.ndarray
    classification: bool
    n_excluded: int = 0

    @property
    def n(self) -> int:
        return len(self.losses)


def evaluate(forest: Forest, ds: Dataset) -> EvalReport:
    """Error of the forest on a held-out dataset"""
    if ds.y is None:
        raise ArgumentError("Evaluation needs a dataset with a target")
    if ds.n == 0:
        raise DegenerateError("Cannot evaluate on an empty dataset")
    losses = row_losses(predict_forest_dataset(forest, ds), ds.y, forest.classification)
    return EvalReport(float(losses.mean()), losses, np.arange(ds.n), forest.classification)


def oob_error(forest: Forest, ds: Dataset) -> EvalReport:
    """
    Out-of-bag error.

    Each training row is predicted by the trees for which it is out of bag
    only; rows out of bag for no tree are excluded and counted.
    """
    if not forest.oob_available:
        raise DegenerateError("Out-of-bag aggregate unavailable for this forest")
    if ds.fingerprint != forest.fingerprint:
        raise ArgumentError("Dataset differs from the forest's training data")
    counts = forest.oob.counts[forest.train_rows]
    rows = forest.train_rows[counts > 0]
    n_excluded = int(np.sum(counts == 0))
    if len(rows) == 0:
        raise DegenerateError("No row is out of bag for any tree")
    predictions = _aggregate(forest.oob.totals[rows], forest.oob.counts[rows], forest.classification)
    losses = row_losses(predictions, ds.y[rows], forest.classification)
    if n_excluded:
        logger.debug(f"{n_excluded} rows are out of bag for no tree")
    return EvalReport(float(losses.mean()), losses, rows, forest.classification, n_excluded)


def compute_oob_cache(forest: Forest, ds: Dataset) -> OOBCache:
    """Rebuild the out-of-bag aggregate of a forest from its trees and plans"""
    cache = _empty_cache(ds.n, forest.classification, forest.n_classes)
    for record in forest.records:
        oob_rows = record.plan.oob_rows
        if len(oob_rows):
            cache.add(oob_rows, predict_rows(record.tree, ds.X[oob_rows], ds.missing[oob_rows]),
                      forest.classification)
    return cache


def oob_error_curve(forest: Forest, ds: Dataset, step: int = 10) -> pd.DataFrame:
    """OOB error of the first t trees, for t = step, 2*step, ..., ntree"""
    if ds.fingerprint != forest.fingerprint:
        raise ArgumentError("Dataset differs from the forest's training data")
    cache = _empty_cache(ds.n, forest.classification, forest.n_classes)
    points = []
    for t, record in enumerate(forest.records, start=1):
        oob_rows = record.plan.oob_rows
        if len(oob_rows):
            cache.add(oob_rows, predict_rows(record.tree, ds.X[oob_rows], ds.missing[oob_rows]),
                      forest.classification)
        if t % step == 0 or t == forest.ntree:
            rows = forest.train_rows[cache.counts[forest.train_rows] > 0]
            if len(rows) == 0:
                points.append((t, math.nan, 0))
                continue
            predictions = _aggregate(cache.totals[rows], cache.counts[rows], forest.classification)
            error = float(row_losses(predictions, ds.y[rows], forest.classification).mean())
            points.append((t, error, len(rows)))
    return pd.DataFrame(points, columns=["ntree", "oob_error", "oob_rows"])


def merge_forests(forests: Sequence[Forest], ds: Optional[Dataset] = None) -> Forest:
    """
    Concatenate the trees of several forests.

    The OOB aggregate survives only when every forest was trained on the same
    rows of the same dataset: it is summed from the sub-forest aggregates, or
    rebuilt from the trees when ``ds`` is given and an aggregate is missing.

    Raises:
        ArgumentError: forests with different tasks, columns or kinds
    """
    if not forests:
        raise ArgumentError("Nothing to merge")
    first = forests[0]
    for other in forests[1:]:
        if not first.schema.compatible_with(other.schema):
            raise ArgumentError("Cannot merge forests trained on incompatible schemas")

    records = tuple(record for forest in forests for record in forest.records)
    params = replace(first.params, ntree=len(records))
    same_data = all(f.fingerprint == first.fingerprint and f.n_rows == first.n_rows
                    and np.array_equal(f.train_rows, first.train_rows) for f in forests)
    merged = Forest(records, params, first.schema, first.n_rows, first.fingerprint, first.train_rows, None,
                    tuple(dict.fromkeys(note for f in forests for note in f.notes)))
    if not same_data:
        logger.info(f"Merged {len(forests)} forests ({len(records)} trees); OOB aggregate unavailable")
        return replace(merged, train_rows=np.unique(np.concatenate([f.train_rows for f in forests])))
    if all(f.oob_available for f in forests):
        cache = first.oob.copy()
        for other in forests[1:]:
            cache.totals += other.oob.totals
            cache.counts += other.oob.counts
        return replace(merged, oob=cache)
    if ds is not None and ds.fingerprint == first.fingerprint:
        return replace(merged, oob=compute_oob_cache(merged, ds))
    return merged
