"""
Split search for CART-style trees.

All searches work on weighted rows: a row of weight w counts exactly like w
copies of itself, which is how in-bag multiplicities enter node statistics.
Regression scores sweep uncentered prefix sums of w, w*y and w*y^2;
classification scores sweep prefix sums of weighted one-hot class counts.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from dataset import Dataset
from models import Split, Surrogate

logger = logging.getLogger(__name__)

# Relative margin a split must clear to count as a strict improvement
_IMPROVEMENT_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class SplitContext:
    """Arrays shared by every split search of one tree"""
    X: np.ndarray
    missing: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    categorical: np.ndarray
    n_classes: int
    n_train: float
    min_child_size: float = 1.0
    max_exhaustive_levels: int = 12

    @classmethod
    def from_dataset(cls, ds: Dataset, weights: Optional[np.ndarray] = None,
                     min_child_size: float = 1.0, max_exhaustive_levels: int = 12) -> "SplitContext":
        if weights is None:
            weights = np.ones(ds.n, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        return cls(
            X=ds.X,
            missing=ds.missing,
            y=ds.y,
            weights=weights,
            categorical=np.array([kind.is_categorical for kind in ds.kinds], dtype=bool),
            n_classes=ds.task.n_classes if ds.task.is_classification else 0,
            n_train=float(weights.sum()),
            min_child_size=min_child_size,
            max_exhaustive_levels=max_exhaustive_levels,
        )

    @property
    def classification(self) -> bool:
        return self.n_classes > 0

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class NodeSummary:
    weight: float
    prediction: float
    proportions: Optional[Tuple[float, ...]]
    impurity: float
    error: float
    pure: bool


def summarize_node(ctx: SplitContext, rows: np.ndarray) -> NodeSummary:
    """
    Prediction, impurity and normalised error of a node.

    Regression: weighted mean, impurity SSE/W, error SSE/n.
    Classification: majority class (smallest code on ties), Gini index,
    misclassified weight / n.
    """
    w = ctx.weights[rows]
    total = float(w.sum())
    y = ctx.y[rows]
    if ctx.classification:
        counts = np.bincount(y, weights=w, minlength=ctx.n_classes)
        majority = int(np.argmax(counts))
        proportions = counts / total
        return NodeSummary(
            weight=total,
            prediction=float(majority),
            proportions=tuple(float(v) for v in proportions),
            impurity=float(1.0 - np.sum(proportions ** 2)),
            error=float((total - counts[majority]) / ctx.n_train),
            pure=int(np.count_nonzero(counts)) <= 1,
        )
    s = float(np.sum(w * y))
    q = float(np.sum(w * y * y))
    sse = max(q - s * s / total, 0.0)
    return NodeSummary(
        weight=total,
        prediction=s / total,
        proportions=None,
        impurity=sse / total,
        error=sse / ctx.n_train,
        pure=bool(y.min() == y.max()),
    )


def _unit_stats(ctx: SplitContext, rows: np.ndarray) -> np.ndarray:
    """Per-row sufficient statistics: (w*y, w*y^2) or weighted one-hot counts"""
    w = ctx.weights[rows]
    if ctx.classification:
        stats = np.zeros((len(rows), ctx.n_classes), dtype=np.float64)
        stats[np.arange(len(rows)), ctx.y[rows]] = w
        return stats
    y = ctx.y[rows]
    return np.column_stack((w * y, w * y * y))


def _gains(ctx: SplitContext, left_w: np.ndarray, left_stats: np.ndarray,
           total_w: float, total_stats: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Raw impurity reduction of candidate left/right partitions.

    Regression: SSE(parent) - SSE(left) - SSE(right).
    Classification: weighted Gini of the parent minus the weighted Gini of both children.
    Inadmissible candidates (a child lighter than min_child_size) get -inf.
    """
    right_w = total_w - left_w
    with np.errstate(divide="ignore", invalid="ignore"):
        if ctx.classification:
            parent = total_w - np.sum(total_stats ** 2) / total_w
            left = left_w - np.sum(left_stats ** 2, axis=1) / left_w
            right = right_w - np.sum((total_stats - left_stats) ** 2, axis=1) / right_w
        else:
            parent = max(total_stats[1] - total_stats[0] ** 2 / total_w, 0.0)
            left = np.maximum(left_stats[:, 1] - left_stats[:, 0] ** 2 / left_w, 0.0)
            right_s = total_stats[0] - left_stats[:, 0]
            right_q = total_stats[1] - left_stats[:, 1]
            right = np.maximum(right_q - right_s ** 2 / right_w, 0.0)
        gains = parent - left - right
    admissible = (left_w >= ctx.min_child_size) & (right_w >= ctx.min_child_size)
    gains = np.where(admissible, gains, -np.inf)
    return gains, float(parent)


def _decrease(ctx: SplitContext, raw_gain: float, node_weight: float) -> float:
    """Reported decrease: SSE reduction / n (regression), Gini decrease scaled to the node (classification)"""
    if ctx.classification:
        return raw_gain / node_weight
    return raw_gain / ctx.n_train


def _improves(raw_gain: float, parent: float) -> bool:
    return np.isfinite(raw_gain) and parent > 0 and raw_gain > _IMPROVEMENT_EPS * parent


def _observed(ctx: SplitContext, rows: np.ndarray, j: int) -> np.ndarray:
    return rows[~ctx.missing[rows, j]]


def _sorted_units(ctx: SplitContext, obs: np.ndarray, j: int):
    x = ctx.X[obs, j]
    order = np.argsort(x, kind="stable")
    xs = x[order]
    stats = _unit_stats(ctx, obs[order])
    w = ctx.weights[obs[order]]
    return xs, w, stats


def _canonical_levels(left: Sequence[int], observed: Sequence[int]) -> frozenset:
    """Express a level partition by the side holding the smallest observed level"""
    left = frozenset(int(c) for c in left)
    if min(observed) in left:
        return left
    return frozenset(int(c) for c in observed) - left


def _level_table(ctx: SplitContext, obs: np.ndarray, j: int):
    """Observed levels (ascending code) with their weights and summed statistics"""
    codes = ctx.X[obs, j].astype(np.int64)
    levels, inverse = np.unique(codes, return_inverse=True)
    stats = _unit_stats(ctx, obs)
    level_stats = np.zeros((len(levels), stats.shape[1]), dtype=np.float64)
    np.add.at(level_stats, inverse, stats)
    level_w = np.bincount(inverse, weights=ctx.weights[obs], minlength=len(levels))
    return levels, level_w, level_stats


def _best_ordered_levels(ctx, levels, level_w, level_stats, order, total_w, total_stats):
    """Sweep levels in a given order as if they were sorted numeric values"""
    boundaries = np.arange(len(levels) - 1)
    gains, parent = _gains(ctx, np.cumsum(level_w[order])[boundaries],
                           np.cumsum(level_stats[order], axis=0)[boundaries], total_w, total_stats)
    best = int(np.argmax(gains))
    return gains[best], parent, frozenset(int(c) for c in levels[order[:best + 1]])


def _best_categorical(ctx: SplitContext, obs: np.ndarray, j: int) -> Optional[Tuple[float, float, frozenset]]:
    levels, level_w, level_stats = _level_table(ctx, obs, j)
    k = len(levels)
    if k < 2:
        return None
    total_w = float(level_w.sum())
    total_stats = level_stats.sum(axis=0)
    if not ctx.classification or ctx.n_classes == 2:
        # order by mean response / class-1 proportion, ties by level code
        if ctx.classification:
            key = level_stats[:, 1] / level_w
        else:
            key = level_stats[:, 0] / level_w
        order = np.lexsort((levels, key))
        return _best_ordered_levels(ctx, levels, level_w, level_stats, order, total_w, total_stats)
    if k <= ctx.max_exhaustive_levels:
        # every subset holding the smallest level, except the full set
        subsets = np.arange(2 ** (k - 1) - 1)
        bits = ((subsets[:, None] >> np.arange(k - 1)[None, :]) & 1).astype(bool)
        masks = np.column_stack((np.ones(len(subsets), dtype=bool), bits))
        gains, parent = _gains(ctx, masks @ level_w, masks.astype(np.float64) @ level_stats, total_w, total_stats)
        best = int(np.argmax(gains))
        return gains[best], parent, frozenset(int(c) for c in levels[masks[best]])
    best = None
    for c in range(ctx.n_classes):
        order = np.lexsort((levels, level_stats[:, c] / level_w))
        candidate = _best_ordered_levels(ctx, levels, level_w, level_stats, order, total_w, total_stats)
        if best is None or candidate[0] > best[0]:
            best = candidate
    return best


def best_split_for_variable(ctx: SplitContext, rows: np.ndarray, j: int, node_weight: float) -> Optional[Split]:
    """Best admissible, strictly improving split on variable j, or None"""
    obs = _observed(ctx, rows, j)
    if len(obs) < 2:
        return None
    if ctx.categorical[j]:
        found = _best_categorical(ctx, obs, j)
        if found is None:
            return None
        gain, parent, left = found
        if not _improves(gain, parent):
            return None
        observed_levels = np.unique(ctx.X[obs, j].astype(np.int64))
        return Split(j, _decrease(ctx, gain, node_weight), left_levels=_canonical_levels(left, observed_levels))

    xs, w, stats = _sorted_units(ctx, obs, j)
    boundaries = np.flatnonzero(xs[:-1] < xs[1:])
    if len(boundaries) == 0:
        return None
    gains, parent = _gains(ctx, np.cumsum(w)[boundaries], np.cumsum(stats, axis=0)[boundaries],
                           float(w.sum()), stats.sum(axis=0))
    best = int(np.argmax(gains))
    if not _improves(gains[best], parent):
        return None
    i = boundaries[best]
    threshold = (xs[i] + xs[i + 1]) / 2.0
    if threshold >= xs[i + 1]:
        threshold = xs[i]
    return Split(j, _decrease(ctx, gains[best], node_weight), threshold=float(threshold))


def find_splits(ctx: SplitContext, rows: np.ndarray, candidate_vars: Sequence[int],
                node_weight: Optional[float] = None) -> List[Split]:
    """
    Best split of every candidate variable, ranked by decreasing decrease.

    Ties are broken by the lower variable index.
    """
    if node_weight is None:
        node_weight = float(ctx.weights[rows].sum())
    splits = []
    for j in sorted(int(v) for v in candidate_vars):
        split = best_split_for_variable(ctx, rows, j, node_weight)
        if split is not None:
            splits.append(split)
    splits.sort(key=lambda s: (-s.decrease, s.variable))
    return splits


def best_split_at(ds: Dataset, rows: Sequence[int], candidate_vars: Optional[Sequence[int]] = None,
                  weights: Optional[np.ndarray] = None, min_child_size: float = 1.0) -> Optional[Split]:
    """
    Best split of a node.

    Regression minimises the weighted within-children variance; classification
    maximises the Gini decrease. Returns None when the node is pure or no
    admissible split strictly improves.

    Parameters:
        ds: Training data
        rows: Row indices of the node
        candidate_vars: Variables to search (default all)
        weights: Per-row multiplicities (default 1)
        min_child_size: Smallest admissible child weight

    Returns:
        Split or None
    """
    ctx = SplitContext.from_dataset(ds, weights, min_child_size)
    rows = np.asarray(rows, dtype=np.int64)
    if len(rows) < 2 or summarize_node(ctx, rows).pure:
        return None
    splits = find_splits(ctx, rows, range(ds.p) if candidate_vars is None else candidate_vars)
    return splits[0] if splits else None


def extra_randomized_split(ctx: SplitContext, rows: np.ndarray, candidate_vars: Sequence[int],
                           n_thresholds: int, rng: np.random.Generator,
                           node_weight: Optional[float] = None) -> Optional[Split]:
    """
    Extra-Trees split: random cut points, best one kept.

    For each candidate variable (ascending index) draws ``n_thresholds`` cut
    points uniformly in [min, max) of its observed node values, or random
    proper subsets of its observed levels, then keeps the candidate with the
    largest decrease. Constant variables yield no candidate and draw nothing.
    """
    if node_weight is None:
        node_weight = float(ctx.weights[rows].sum())
    best = None
    for j in sorted(int(v) for v in candidate_vars):
        obs = _observed(ctx, rows, j)
        if len(obs) < 2:
            continue
        if ctx.categorical[j]:
            levels, level_w, level_stats = _level_table(ctx, obs, j)
            k = len(levels)
            if k < 2:
                continue
            total_w = float(level_w.sum())
            total_stats = level_stats.sum(axis=0)
            for _ in range(n_thresholds):
                bits = rng.integers(0, 2, size=k).astype(bool)
                while bits.all() or not bits.any():
                    bits = rng.integers(0, 2, size=k).astype(bool)
                gains, parent = _gains(ctx, np.array([level_w[bits].sum()]),
                                       level_stats[bits].sum(axis=0)[None, :], total_w, total_stats)
                if not _improves(gains[0], parent):
                    continue
                split = Split(j, _decrease(ctx, gains[0], node_weight),
                              left_levels=_canonical_levels(levels[bits], levels))
                if best is None or split.decrease > best.decrease:
                    best = split
            continue

        xs, w, stats = _sorted_units(ctx, obs, j)
        low, high = xs[0], xs[-1]
        if low == high:
            continue
        thresholds = rng.uniform(low, high, size=n_thresholds)
        left_counts = np.searchsorted(xs, thresholds, side="right")
        gains, parent = _gains(ctx, np.cumsum(w)[left_counts - 1], np.cumsum(stats, axis=0)[left_counts - 1],
                               float(w.sum()), stats.sum(axis=0))
        pick = int(np.argmax(gains))
        if not _improves(gains[pick], parent):
            continue
        split = Split(j, _decrease(ctx, gains[pick], node_weight), threshold=float(thresholds[pick]))
        if best is None or split.decrease > best.decrease:
            best = split
    return best


def primary_directions(ctx: SplitContext, rows: np.ndarray, split: Split) -> Tuple[np.ndarray, np.ndarray]:
    """Rows observed on the split variable and whether each goes left"""
    obs = _observed(ctx, rows, split.variable)
    return obs, split.goes_left(ctx.X[obs, split.variable])


def surrogate_splits_at(ctx: SplitContext, rows: np.ndarray, primary: Split, max_surrogates: int,
                        variables: Optional[Sequence[int]] = None) -> List[Surrogate]:
    """
    Surrogate splits mimicking the primary left/right routing.

    For every other variable, the split (and orientation) with the largest
    weighted agreement on rows observed for both variables. Candidates whose
    agreement does not beat sending every such row to the majority side are
    dropped. Ranked by agreement, ties to the lower variable index.
    """
    if max_surrogates <= 0:
        return []
    obs, left = primary_directions(ctx, rows, primary)
    direction = np.zeros(ctx.X.shape[0], dtype=bool)
    direction[obs] = left
    if variables is None:
        variables = range(ctx.p)
    found = []
    for j in variables:
        if j == primary.variable:
            continue
        both = obs[~ctx.missing[obs, j]]
        if len(both) < 2:
            continue
        target = direction[both]
        w = ctx.weights[both]
        total = float(w.sum())
        left_w = float(w[target].sum())
        baseline = max(left_w, total - left_w)

        if ctx.categorical[j]:
            codes = ctx.X[both, j].astype(np.int64)
            levels, inverse = np.unique(codes, return_inverse=True)
            to_left = np.bincount(inverse, weights=w * target, minlength=len(levels))
            to_right = np.bincount(inverse, weights=w * ~target, minlength=len(levels))
            sends_left = to_left >= to_right
            if sends_left.all() or not sends_left.any():
                continue
            agreement = float(np.maximum(to_left, to_right).sum())
            candidate = Surrogate(Split(j, left_levels=frozenset(int(c) for c in levels[sends_left])), agreement)
        else:
            x = ctx.X[both, j]
            order = np.argsort(x, kind="stable")
            xs = x[order]
            boundaries = np.flatnonzero(xs[:-1] < xs[1:])
            if len(boundaries) == 0:
                continue
            ws = w[order]
            ts = target[order]
            left_agree = np.cumsum(ws * ts)[boundaries]
            right_agree = (total - left_w) - np.cumsum(ws * ~ts)[boundaries]
            forward = left_agree + right_agree
            backward = total - forward
            i_fwd = int(np.argmax(forward))
            i_bwd = int(np.argmax(backward))
            reverse = backward[i_bwd] > forward[i_fwd]
            i = i_bwd if reverse else i_fwd
            agreement = float(backward[i] if reverse else forward[i])
            b = boundaries[i]
            threshold = (xs[b] + xs[b + 1]) / 2.0
            if threshold >= xs[b + 1]:
                threshold = xs[b]
            candidate = Surrogate(Split(j, threshold=float(threshold)), agreement, reverse=bool(reverse))

        if candidate.agreement - baseline > _IMPROVEMENT_EPS * total:
            found.append(candidate)
    found.sort(key=lambda s: (-s.agreement, s.variable))
    return found[:max_surrogates]


def route_left(node, X: np.ndarray, missing: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """
    Left/right routing of rows at an internal node.

    Primary split when its variable is observed, else the first observed
    surrogate, else the node's majority direction.
    """
    go_left = np.full(len(rows), node.majority_left, dtype=bool)
    pending = np.ones(len(rows), dtype=bool)
    for rule in node.routing_rules():
        if not pending.any():
            break
        j = rule.variable
        usable = pending & ~missing[rows, j]
        if usable.any():
            go_left[usable] = rule.goes_left(X[rows[usable], j])
            pending &= ~usable
    return go_left
