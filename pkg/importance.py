"""
Permutation variable importance.

The importance of a variable is the mean over trees of the increase in the
tree's out-of-bag error after permuting that variable among the tree's
out-of-bag rows. Each (tree, variable) pair gets its own permutation
stream keyed by (seed, tree position, variable); grouped importance keys
by group position and permutes the rows of all group columns jointly.
"""

import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import delayed

from cart import predict_rows, row_losses
from dataset import Dataset
from exceptions import ArgumentError, DegenerateError
from forest import Forest, ForestParams, TreeRecord, train_forest
from models import Tree
from utils import check_disjoint, derive_seed, make_rng, parallel_pool

logger = logging.getLogger(__name__)


def routing_variables(tree: Tree) -> set:
    """Variables any routing rule of the tree reads (primary and surrogate splits)"""
    used = set()
    for node in tree.nodes.values():
        if not node.is_leaf:
            used.update(rule.variable for rule in node.routing_rules())
    return used


@dataclass(frozen=True, eq=False)
class VariableImportance:
    """Importance of every variable (or group) measured on one forest"""
    names: Tuple[str, ...]
    values: np.ndarray
    trees_used: int
    trees_skipped: int


def _tree_differences(record: TreeRecord, position: int, ds: Dataset,
                      column_sets: Sequence[Sequence[int]], seed: int) -> Optional[np.ndarray]:
    oob = record.plan.oob_rows
    if len(oob) == 0:
        return None
    classification = ds.task.is_classification
    X, missing, y = ds.X[oob], ds.missing[oob], ds.y[oob]
    base = float(row_losses(predict_rows(record.tree, X, missing), y, classification).mean())
    used = routing_variables(record.tree)
    differences = np.zeros(len(column_sets), dtype=np.float64)
    for g, columns in enumerate(column_sets):
        if not used.intersection(columns):
            continue
        permutation = make_rng(seed, position, g).permutation(len(oob))
        X_perm = X.copy()
        missing_perm = missing.copy()
        X_perm[:, columns] = X[permutation][:, columns]
        missing_perm[:, columns] = missing[permutation][:, columns]
        perturbed = float(row_losses(predict_rows(record.tree, X_perm, missing_perm), y, classification).mean())
        differences[g] = perturbed - base
    return differences


def _importance(forest: Forest, ds: Dataset, column_sets: List[List[int]], names: Tuple[str, ...],
                seed: int, workers: int) -> VariableImportance:
    if ds.fingerprint != forest.fingerprint:
        raise ArgumentError("Dataset differs from the forest's training data")
    results = parallel_pool(workers)(
        delayed(_tree_differences)(record, position, ds, column_sets, seed)
        for position, record in enumerate(forest.records))
    used = [r for r in results if r is not None]
    skipped = len(results) - len(used)
    if not used:
        raise DegenerateError("Every tree has an empty out-of-bag set")
    if skipped:
        logger.warning(f"Importance skipped {skipped} trees with an empty out-of-bag set")
    total = np.zeros(len(column_sets), dtype=np.float64)
    for differences in used:
        total += differences
    return VariableImportance(names, total / len(used), len(used), skipped)


def variable_importance(forest: Forest, ds: Dataset, seed: int = 0, workers: int = 1) -> VariableImportance:
    """
    Permutation importance of every variable, averaged over trees.

    Trees with an empty OOB set are skipped (and counted). Variables no
    routing rule reads get exactly 0.
    """
    return _importance(forest, ds, [[j] for j in range(ds.p)], ds.names, seed, workers)


def grouped_importance(forest: Forest, ds: Dataset, groups: Sequence[Sequence[int]],
                       seed: int = 0, workers: int = 1,
                       group_names: Optional[Sequence[str]] = None) -> VariableImportance:
    """
    Permutation importance of variable groups: one row permutation per
    (tree, group) applied jointly to the group's columns.

    Raises:
        ArgumentError: empty, out-of-range or overlapping groups
    """
    groups = [[int(j) for j in group] for group in groups]
    if not groups or any(len(group) == 0 for group in groups):
        raise ArgumentError("Groups must be non-empty")
    if any(not 0 <= j < ds.p for group in groups for j in group):
        raise ArgumentError("Group refers to a variable outside the dataset")
    if not check_disjoint(groups):
        raise ArgumentError("Variable groups overlap")
    if group_names is None:
        group_names = ["+".join(ds.names[j] for j in group) for group in groups]
    return _importance(forest, ds, groups, tuple(group_names), seed, workers)


@dataclass(frozen=True, eq=False)
class ImportanceReport:
    """Importance replicated over independently trained forests"""
    names: Tuple[str, ...]
    values: np.ndarray
    seeds: Tuple[int, ...]
    groups: Optional[Tuple[Tuple[int, ...], ...]] = None

    @property
    def nrep(self) -> int:
        return self.values.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    @property
    def sd(self) -> np.ndarray:
        if self.nrep < 2:
            return np.zeros(self.values.shape[1])
        return self.values.std(axis=0, ddof=1)

    @property
    def sd_undefined(self) -> bool:
        return self.nrep < 2

    @property
    def ranking(self) -> np.ndarray:
        """Indices by decreasing mean importance, ties to the lower index"""
        return np.argsort(-self.mean, kind="stable")

    def to_frame(self) -> pd.DataFrame:
        """variable, mean_vi, sd_vi, rank; one row per variable in rank order"""
        order = self.ranking
        mean, sd = self.mean, self.sd
        return pd.DataFrame({
            "variable": [self.names[j] for j in order],
            "mean_vi": mean[order],
            "sd_vi": sd[order],
            "rank": np.arange(1, len(order) + 1),
        })


def replicated_importance(ds: Dataset, params: Optional[ForestParams] = None, nrep: int = 50,
                          seed: int = 0, groups: Optional[Sequence[Sequence[int]]] = None,
                          group_names: Optional[Sequence[str]] = None) -> ImportanceReport:
    """
    Train ``nrep`` forests with derived seeds and measure raw importance on each.

    Parameters:
        ds: Training data
        params: Forest parameters (their seed is replaced per replication)
        nrep: Number of forests
        seed: Master seed
        groups: Optional variable groups for grouped importance

    Returns:
        ImportanceReport
    """
    if nrep < 1:
        raise ArgumentError(f"nrep must be at least 1, got {nrep}")
    params = params or ForestParams()
    seeds = tuple(derive_seed(seed, r) for r in range(nrep))
    rows = []
    names = ds.names
    for r, replicate_seed in enumerate(seeds):
        forest = train_forest(ds, replace(params, seed=replicate_seed))
        if groups is None:
            result = variable_importance(forest, ds, replicate_seed, params.workers)
        else:
            result = grouped_importance(forest, ds, groups, replicate_seed, params.workers, group_names)
        names = result.names
        rows.append(result.values)
        logger.info(f"Importance replication {r + 1}/{nrep} done")
    if nrep == 1:
        logger.warning("nrep=1: importance standard deviations are undefined and reported as 0")
    frozen_groups = None if groups is None else tuple(tuple(int(j) for j in g) for g in groups)
    return ImportanceReport(tuple(names), np.vstack(rows), seeds, frozen_groups)
