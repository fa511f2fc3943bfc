"""
CART: maximal tree growth, prediction with missing-value routing,
cost-complexity pruning and cross-validated subtree selection.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import delayed

from config import get_config
from dataset import Dataset
from exceptions import ArgumentError
from models import EXTRA, Node, Split, Surrogate, Tree, TreeParams
from splitter import (SplitContext, extra_randomized_split, find_splits, route_left,
                      summarize_node, surrogate_splits_at)
from utils import SeedLike, make_rng, parallel_pool, standard_error

logger = logging.getLogger(__name__)

MIN_RULE = "min"
ONE_SE_RULE = "one-se"


def grow_maximal(ds: Dataset, params: Optional[TreeParams] = None,
                 weights: Optional[np.ndarray] = None, rng: SeedLike = 0) -> Tree:
    """
    Grow a tree until every node is pure, lighter than min_node_size or unsplittable.

    Nodes are grown depth first (parent, left subtree, right subtree); with
    mtry set, each node draws its candidate variables from ``rng`` in that
    order. Rows whose split variable is missing follow the surrogates, then
    the side holding more observed weight.

    Parameters:
        ds: Training data (target required)
        params: Growth parameters
        weights: Per-row multiplicities; rows of weight 0 are ignored
        rng: Seed or generator for candidate-variable and threshold draws

    Returns:
        Tree
    """
    params = params or TreeParams()
    if ds.n == 0 or ds.y is None:
        raise ArgumentError("Cannot grow a tree on an empty dataset")
    ctx = SplitContext.from_dataset(ds, weights, params.min_child_size, params.max_exhaustive_levels)
    root_rows = np.flatnonzero(ctx.weights > 0)
    if len(root_rows) == 0:
        raise ArgumentError("Cannot grow a tree without positive-weight rows")
    rng = make_rng(rng)
    p = ds.p
    mtry = p if params.mtry is None else min(params.mtry, p)

    nodes: Dict[int, Node] = {}
    next_id = 1
    stack = [(0, root_rows, 0)]
    while stack:
        node_id, rows, depth = stack.pop()
        summary = summarize_node(ctx, rows)
        split = None
        ranked: List[Split] = []
        if not summary.pure and summary.weight >= params.min_node_size:
            if mtry < p:
                candidates = np.sort(rng.choice(p, size=mtry, replace=False))
            else:
                candidates = np.arange(p)
            if params.split_mode == EXTRA:
                split = extra_randomized_split(ctx, rows, candidates, params.n_thresholds, rng, summary.weight)
            else:
                ranked = find_splits(ctx, rows, candidates, summary.weight)
                split = ranked[0] if ranked else None

        base = dict(id=node_id, depth=depth, weight=summary.weight, prediction=summary.prediction,
                    impurity=summary.impurity, error=summary.error, proportions=summary.proportions,
                    rows=rows if params.keep_rows else None)
        if split is None:
            nodes[node_id] = Node(**base)
            continue

        surrogates = tuple(surrogate_splits_at(ctx, rows, split, params.max_surrogates))
        go_left, majority_left = _partition(ctx, rows, split, surrogates)
        left_id, right_id = next_id, next_id + 1
        next_id += 2
        nodes[node_id] = Node(split=split,
                              competing=tuple(ranked[1:]) if params.keep_competing else (),
                              surrogates=surrogates, left=left_id, right=right_id,
                              majority_left=majority_left, **base)
        stack.append((right_id, rows[~go_left], depth + 1))
        stack.append((left_id, rows[go_left], depth + 1))

    tree = Tree(nodes=nodes, classification=ctx.classification, n_classes=ctx.n_classes,
                p=p, n_train=ctx.n_train, params=params)
    logger.debug(f"Grew tree: {tree.leaf_count} leaves, depth {tree.depth}")
    return tree


def _partition(ctx: SplitContext, rows: np.ndarray, split: Split,
               surrogates: Sequence[Surrogate]) -> Tuple[np.ndarray, bool]:
    observed = ~ctx.missing[rows, split.variable]
    go_left = np.zeros(len(rows), dtype=bool)
    go_left[observed] = split.goes_left(ctx.X[rows[observed], split.variable])
    pending = ~observed
    for surrogate in surrogates:
        if not pending.any():
            break
        usable = pending & ~ctx.missing[rows, surrogate.variable]
        go_left[usable] = surrogate.goes_left(ctx.X[rows[usable], surrogate.variable])
        pending &= ~usable
    if pending.any():
        w = ctx.weights[rows]
        go_left[pending] = w[observed & go_left].sum() >= w[observed & ~go_left].sum()
    w = ctx.weights[rows]
    majority_left = bool(w[go_left].sum() >= w[~go_left].sum())
    return go_left, majority_left


def competing_splits_at(tree: Tree, node_id: int) -> List[Split]:
    """Best split per variable at an internal node, primary first"""
    node = tree[node_id]
    if node.is_leaf:
        return []
    return [node.split, *node.competing]


def surrogate_splits_for(tree: Tree, ds: Dataset, node_id: int, max_surrogates: int,
                         weights: Optional[np.ndarray] = None) -> List[Surrogate]:
    """Recompute the surrogate list of an internal node of a tree grown with keep_rows"""
    node = tree[node_id]
    if node.is_leaf:
        return []
    if node.rows is None:
        raise ArgumentError("Tree was grown without node row sets")
    ctx = SplitContext.from_dataset(ds, weights)
    return surrogate_splits_at(ctx, node.rows, node.split, max_surrogates)


def apply_tree(tree: Tree, X: np.ndarray, missing: np.ndarray) -> np.ndarray:
    """Leaf id reached by every row"""
    n = X.shape[0]
    leaf_ids = np.zeros(n, dtype=np.int64)
    stack = [(0, np.arange(n))]
    while stack:
        node_id, rows = stack.pop()
        node = tree.nodes[node_id]
        if node.is_leaf:
            leaf_ids[rows] = node_id
            continue
        if len(rows) == 0:
            continue
        go_left = route_left(node, X, missing, rows)
        stack.append((node.right, rows[~go_left]))
        stack.append((node.left, rows[go_left]))
    return leaf_ids


def _leaf_lookup(tree: Tree, attribute: str = "prediction") -> np.ndarray:
    size = max(tree.nodes) + 1
    values = np.zeros(size, dtype=np.float64)
    for node in tree.nodes.values():
        values[node.id] = getattr(node, attribute)
    return values


def predict_rows(tree: Tree, X: np.ndarray, missing: np.ndarray) -> np.ndarray:
    """Leaf predictions for a block of rows (class codes as int64 in classification)"""
    leaf_ids = apply_tree(tree, X, missing)
    predictions = _leaf_lookup(tree)[leaf_ids]
    if tree.classification:
        return predictions.astype(np.int64)
    return predictions


def predict_proba_rows(tree: Tree, X: np.ndarray, missing: np.ndarray) -> np.ndarray:
    """Leaf class proportions for a block of rows"""
    if not tree.classification:
        raise ArgumentError("Class proportions exist only for classification trees")
    leaf_ids = apply_tree(tree, X, missing)
    table = np.zeros((max(tree.nodes) + 1, tree.n_classes), dtype=np.float64)
    for node in tree.nodes.values():
        table[node.id] = node.proportions
    return table[leaf_ids]


def predict_tree(tree: Tree, row: Sequence[float], missing: Optional[Sequence[bool]] = None):
    """
    Prediction for a single feature record.

    NaN entries are treated as missing when no mask is given. Returns the
    leaf mean (regression) or a (class code, class proportions) pair.
    """
    x = np.asarray(row, dtype=np.float64).reshape(1, -1)
    if missing is None:
        mask = np.isnan(x)
    else:
        mask = np.asarray(missing, dtype=bool).reshape(1, -1)
    x = np.where(mask, 0.0, x)
    node = tree.nodes[int(apply_tree(tree, x, mask)[0])]
    if tree.classification:
        return int(node.prediction), node.proportions
    return node.prediction


def predict_dataset(tree: Tree, ds: Dataset) -> np.ndarray:
    return predict_rows(tree, ds.X, ds.missing)


def row_losses(predictions: np.ndarray, y: np.ndarray, classification: bool) -> np.ndarray:
    """Per-row 0/1 misclassification or squared error"""
    if classification:
        return (predictions != y).astype(np.float64)
    return (predictions - y) ** 2


def _branch_costs(tree: Tree, internal: FrozenSet[int]):
    """R(T_t) and |T_t| of every node of the pruned tree defined by ``internal``"""
    order = []
    stack = [0]
    while stack:
        node = tree.nodes[stack.pop()]
        order.append(node)
        if node.id in internal:
            stack.extend((node.right, node.left))
    cost, leaves = {}, {}
    for node in reversed(order):
        if node.id in internal:
            cost[node.id] = cost[node.left] + cost[node.right]
            leaves[node.id] = leaves[node.left] + leaves[node.right]
        else:
            cost[node.id] = node.error
            leaves[node.id] = 1
    return order, cost, leaves


def _reachable(tree: Tree, internal) -> FrozenSet[int]:
    kept = set()
    stack = [0]
    while stack:
        node = tree.nodes[stack.pop()]
        if node.id in internal and not node.is_leaf:
            kept.add(node.id)
            stack.extend((node.left, node.right))
    return frozenset(kept)


@dataclass(frozen=True, eq=False)
class PruningSequence:
    """Nested subtrees T_1 > ... > T_K of a maximal tree with their critical penalties"""
    tree: Tree
    alphas: Tuple[float, ...]
    internal_sets: Tuple[FrozenSet[int], ...]
    leaf_counts: Tuple[int, ...]
    errors: Tuple[float, ...]
    _cache: Dict[int, Tree] = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.alphas)

    def subtree(self, k: int) -> Tree:
        """Subtree k of the sequence (0 = largest)"""
        if k not in self._cache:
            self._cache[k] = self.tree.subtree(self.internal_sets[k])
        return self._cache[k]

    @property
    def subtrees(self) -> List[Tree]:
        return [self.subtree(k) for k in range(len(self))]

    def index_for(self, alpha: float) -> int:
        """Index of the subtree minimising err + alpha * leaves (largest alpha_k <= alpha)"""
        return max(int(np.searchsorted(np.asarray(self.alphas), alpha, side="right")) - 1, 0)

    def subtree_for(self, alpha: float) -> Tree:
        return self.subtree(self.index_for(alpha))

    def betas(self, last_factor: float = 10.0) -> np.ndarray:
        """Geometric-mean penalties sqrt(alpha_k * alpha_k+1); the last one is alpha_K * last_factor"""
        alphas = np.asarray(self.alphas, dtype=np.float64)
        betas = np.empty(len(alphas))
        betas[:-1] = np.sqrt(alphas[:-1] * alphas[1:])
        betas[-1] = alphas[-1] * last_factor
        return betas

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "k": np.arange(1, len(self) + 1),
            "alpha": self.alphas,
            "leaves": self.leaf_counts,
            "train_error": self.errors,
        })


def prune_sequence(t_max: Tree, tolerance: Optional[float] = None) -> PruningSequence:
    """
    Weakest-link pruning.

    T_1 is the smallest subtree with the training error of t_max. Each step
    computes alpha = min over internal nodes t of (R(t) - R(T_t)) / (|T_t| - 1)
    and collapses every node whose ratio is within the relative tolerance of
    that minimum, until only the root is left.

    Parameters:
        t_max: Tree whose node errors were computed on its training data
        tolerance: Relative tolerance on the ratio (default from config)

    Returns:
        PruningSequence with alphas strictly increasing from 0
    """
    if tolerance is None:
        tolerance = get_config().PRUNE_TOLERANCE

    internal = set(t_max.internal_ids())
    order, cost, _ = _branch_costs(t_max, frozenset(internal))
    for node in reversed(order):
        if node.id not in internal:
            continue
        branch = cost[node.left] + cost[node.right]
        if node.error - branch <= tolerance * node.error:
            internal.discard(node.id)
            cost[node.id] = node.error
        else:
            cost[node.id] = branch
    internal = _reachable(t_max, internal)

    alphas = [0.0]
    sets = [internal]
    while internal:
        _, cost, leaves = _branch_costs(t_max, internal)
        ratios = {t: (t_max[t].error - cost[t]) / (leaves[t] - 1) for t in internal}
        alpha = max(min(ratios.values()), 0.0)
        weakest = {t for t, ratio in ratios.items() if ratio <= alpha * (1.0 + tolerance)}
        internal = _reachable(t_max, internal - weakest)
        if alpha > alphas[-1]:
            alphas.append(alpha)
            sets.append(internal)
        else:
            sets[-1] = internal

    leaf_counts = []
    errors = []
    for kept in sets:
        _, cost, leaves = _branch_costs(t_max, kept)
        leaf_counts.append(leaves[0])
        errors.append(cost[0])
    logger.debug(f"Pruning sequence of length {len(alphas)} from a {t_max.leaf_count}-leaf tree")
    return PruningSequence(t_max, tuple(alphas), tuple(sets), tuple(leaf_counts), tuple(errors))


@dataclass(frozen=True, eq=False)
class CVCurve:
    """Cross-validated error of every subtree of a pruning sequence"""
    sequence: PruningSequence
    betas: np.ndarray
    cv_error: np.ndarray
    cv_se: np.ndarray
    k_min: int
    k_one_se: int
    rule: str
    folds: int

    @property
    def chosen(self) -> int:
        return self.k_min if self.rule == MIN_RULE else self.k_one_se

    def to_frame(self) -> pd.DataFrame:
        frame = self.sequence.to_frame()
        frame["beta"] = self.betas
        frame["cv_error"] = self.cv_error
        frame["cv_se"] = self.cv_se
        frame["min_rule"] = frame.index == self.k_min
        frame["one_se_rule"] = frame.index == self.k_one_se
        return frame


def _fold_losses(ds: Dataset, params: TreeParams, fold_of: np.ndarray, fold: int,
                 betas: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    held_out = np.flatnonzero(fold_of == fold)
    sequence = prune_sequence(grow_maximal(ds.take(np.flatnonzero(fold_of != fold)), params))
    X, missing, y = ds.X[held_out], ds.missing[held_out], ds.y[held_out]
    losses = np.empty((len(held_out), len(betas)))
    for k, beta in enumerate(betas):
        predictions = predict_rows(sequence.subtree_for(beta), X, missing)
        losses[:, k] = row_losses(predictions, y, ds.task.is_classification)
    return held_out, losses


def select_subtree_cv(ds: Dataset, params: Optional[TreeParams] = None, folds: int = 10,
                      rule: str = ONE_SE_RULE, seed: int = 0, workers: int = 1,
                      last_alpha_factor: Optional[float] = None) -> Tuple[Tree, CVCurve]:
    """
    Choose a pruned subtree by V-fold cross-validation.

    Every fold grows and prunes a tree on the other folds and scores, on the
    held-out fold, the fold subtree selected by each penalty beta_k. ``min``
    keeps the subtree with the lowest cv error; ``one-se`` keeps the smallest
    subtree within one standard error of that minimum.

    Parameters:
        ds: Training data
        params: Growth parameters
        folds: Number of folds, 2 <= folds <= n
        rule: "min" or "one-se"
        seed: Seed of the fold assignment
        workers: Folds evaluated concurrently

    Returns:
        (selected subtree, CVCurve)
    """
    params = params or TreeParams()
    if rule not in (MIN_RULE, ONE_SE_RULE):
        raise ArgumentError(f"Unknown selection rule '{rule}'")
    if folds < 2:
        raise ArgumentError(f"folds must be at least 2, got {folds}")
    if folds > ds.n:
        raise ArgumentError(f"folds ({folds}) exceeds the number of rows ({ds.n})")
    if last_alpha_factor is None:
        last_alpha_factor = get_config().CV_LAST_ALPHA_FACTOR

    sequence = prune_sequence(grow_maximal(ds, params))
    betas = sequence.betas(last_alpha_factor)
    fold_of = np.empty(ds.n, dtype=np.int64)
    fold_of[make_rng(seed).permutation(ds.n)] = np.arange(ds.n) % folds

    logger.info(f"Cross-validating {len(sequence)} subtrees over {folds} folds")
    results = parallel_pool(workers)(
        delayed(_fold_losses)(ds, params, fold_of, v, betas) for v in range(folds))
    losses = np.empty((ds.n, len(sequence)))
    for held_out, fold_losses in results:
        losses[held_out] = fold_losses

    binary = ds.task.is_classification
    cv_error = losses.mean(axis=0)
    cv_se = np.array([standard_error(losses[:, k], binary=binary) for k in range(len(sequence))])
    k_min = int(np.flatnonzero(cv_error == cv_error.min()).max())
    k_one_se = int(np.flatnonzero(cv_error <= cv_error[k_min] + cv_se[k_min]).max())
    curve = CVCurve(sequence, betas, cv_error, cv_se, k_min, k_one_se, rule, folds)
    chosen = sequence.subtree(curve.chosen)
    logger.info(f"Selected subtree {curve.chosen + 1}/{len(sequence)} ({rule}): "
                f"{chosen.leaf_count} leaves, cv error {cv_error[curve.chosen]:.4f}")
    return chosen, curve


def tree_summary(tree: Tree, names: Optional[Sequence[str]] = None) -> Dict:
    """Leaf count, depth, split variables and training error of a tree"""
    variables = tree.split_variables()
    return {
        "leaves": tree.leaf_count,
        "internal_nodes": len(tree.internal_ids()),
        "depth": tree.depth,
        "split_variables": [names[j] for j in variables] if names is not None else variables,
        "n_split_variables": len(variables),
        "training_error": tree.training_error(),
    }
