"""
Partitioned forest training in the Map/Reduce style, and bag-of-little-bootstraps forests.

Map: one independent sub-forest per data block, keyed by the constant 1.
Reduce: merge_forests over the sub-forests in block order.
"""

import json
import logging
import os
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import delayed
from scipy.stats import chi2_contingency

from config import get_config
from dataset import BLB, Dataset, ResampleSpec
from exceptions import ArgumentError, DegenerateError
from forest import Forest, ForestParams, merge_forests, oob_error, train_forest
from importance import variable_importance
from serialization import save_forest
from utils import derive_seed, make_rng, parallel_pool

logger = logging.getLogger(__name__)

CONTIGUOUS = "contiguous"
RANDOM = "random"
STRATIFIED = "stratified"
STRATEGIES = (CONTIGUOUS, RANDOM, STRATIFIED)


@dataclass(frozen=True, eq=False)
class PartitionPlan:
    """Disjoint row blocks covering every row"""
    blocks: Tuple[np.ndarray, ...]
    strategy: str
    seed: int = 0

    @property
    def Q(self) -> int:
        return len(self.blocks)

    def sizes(self) -> List[int]:
        return [len(block) for block in self.blocks]

    def block_of(self, n: int) -> np.ndarray:
        labels = np.full(n, -1, dtype=np.int64)
        for k, block in enumerate(self.blocks):
            labels[block] = k
        return labels

    def validate(self, n: int) -> "PartitionPlan":
        if any(len(block) == 0 for block in self.blocks):
            raise ArgumentError("Partition has an empty block")
        rows = np.concatenate(self.blocks)
        if len(rows) != n or not np.array_equal(np.sort(rows), np.arange(n)):
            raise ArgumentError("Partition blocks must be disjoint and cover every row")
        return self


def make_partition(ds: Dataset, Q: int, strategy: str = RANDOM, seed: int = 0) -> PartitionPlan:
    """
    Split the rows into Q blocks whose sizes differ by at most one.

    contiguous keeps file order; random deals a seeded permutation;
    stratified sorts the (shuffled) rows by class or by y and deals them
    round-robin, so each block gets a proportional share of every class or
    of every y quantile.
    """
    n = ds.n
    if not 1 <= Q <= n:
        raise ArgumentError(f"Block count must lie in 1..{n}, got {Q}")
    if strategy not in STRATEGIES:
        raise ArgumentError(f"Unknown block strategy '{strategy}'")
    if strategy == CONTIGUOUS:
        blocks = np.array_split(np.arange(n), Q)
    elif strategy == RANDOM:
        blocks = [np.sort(block) for block in np.array_split(make_rng(seed).permutation(n), Q)]
    else:
        if ds.y is None:
            raise ArgumentError("Stratified blocks need a target")
        shuffled = make_rng(seed).permutation(n)
        order = shuffled[np.argsort(ds.y[shuffled], kind="stable")]
        labels = np.empty(n, dtype=np.int64)
        labels[order] = np.arange(n) % Q
        blocks = [np.flatnonzero(labels == k) for k in range(Q)]
    plan = PartitionPlan(tuple(np.asarray(b, dtype=np.int64) for b in blocks), strategy, seed)
    logger.info(f"Partitioned {n} rows into {Q} {strategy} blocks of sizes {min(plan.sizes())}-{max(plan.sizes())}")
    return plan


@dataclass(frozen=True, eq=False)
class MapOutput:
    """Result of the map phase for one block"""
    key: int
    block_id: int
    forest: Forest
    oob_error: float


@dataclass(frozen=True, eq=False)
class BlockDiagnostics:
    frame: pd.DataFrame
    chi2_pvalue: Optional[float]
    warnings: Tuple[str, ...]

    @property
    def heterogeneous(self) -> bool:
        return bool(self.warnings)


def block_heterogeneity(ds: Dataset, plan: PartitionPlan, tv_threshold: Optional[float] = None,
                        mean_gap: Optional[float] = None) -> BlockDiagnostics:
    """
    Compare each block's target distribution with the global one.

    Classification: total-variation distance between class frequencies,
    flagged above ``tv_threshold``, plus a chi-square test of the block x
    class table. Regression: |block mean - global mean| in global sd units,
    flagged above ``mean_gap``.
    """
    config = get_config()
    tv_threshold = config.HETEROGENEITY_TV_THRESHOLD if tv_threshold is None else tv_threshold
    mean_gap = config.HETEROGENEITY_MEAN_GAP if mean_gap is None else mean_gap
    records = []
    warnings = []
    pvalue = None
    if ds.task.is_classification:
        L = ds.task.n_classes
        table = np.array([np.bincount(ds.y[block], minlength=L) for block in plan.blocks], dtype=np.float64)
        overall = table.sum(axis=0) / table.sum()
        for k, counts in enumerate(table):
            tv = 0.5 * float(np.abs(counts / counts.sum() - overall).sum())
            records.append({"block": k, "rows": int(counts.sum()), "tv_distance": tv})
            if tv > tv_threshold:
                warnings.append(f"block {k}: class-frequency TV distance {tv:.3f} exceeds {tv_threshold}")
        observed = table[:, table.sum(axis=0) > 0]
        if plan.Q > 1 and observed.shape[1] > 1:
            pvalue = float(chi2_contingency(observed)[1])
    else:
        overall_mean = float(ds.y.mean())
        overall_sd = float(ds.y.std(ddof=1)) if ds.n > 1 else 0.0
        for k, block in enumerate(plan.blocks):
            block_mean = float(ds.y[block].mean())
            gap = abs(block_mean - overall_mean) / overall_sd if overall_sd > 0 else 0.0
            records.append({"block": k, "rows": len(block), "mean": block_mean, "mean_gap_sd": gap})
            if gap > mean_gap:
                warnings.append(f"block {k}: mean gap {gap:.3f} sd exceeds {mean_gap}")
    for message in warnings:
        logger.warning(f"Heterogeneous blocks: {message}")
    return BlockDiagnostics(pd.DataFrame(records), pvalue, tuple(warnings))


def _map_block(ds: Dataset, block_id: int, rows: np.ndarray, params: ForestParams) -> MapOutput:
    forest = train_forest(ds, params, rows=rows)
    try:
        error = oob_error(forest, ds).error
    except DegenerateError:
        error = float("nan")
    return MapOutput(1, block_id, forest, error)


@dataclass(frozen=True, eq=False)
class PartitionedResult:
    forest: Forest
    outputs: Tuple[MapOutput, ...]
    diagnostics: BlockDiagnostics

    @property
    def block_oob_errors(self) -> List[float]:
        return [output.oob_error for output in self.outputs]

    @property
    def mean_block_oob_error(self) -> float:
        errors = np.array(self.block_oob_errors)
        errors = errors[~np.isnan(errors)]
        return float(errors.mean()) if len(errors) else float("nan")


def block_params(params: ForestParams, seed: int, block_id: int) -> ForestParams:
    """Parameters of block ``block_id``: seed derived from (seed, block), one worker"""
    return replace(params, seed=derive_seed(seed, block_id), workers=1)


def train_partitioned(ds: Dataset, plan: PartitionPlan, params: Optional[ForestParams] = None,
                      seed: int = 0, workers: int = 1) -> PartitionedResult:
    """
    Map: train one sub-forest per block, blocks running concurrently.
    Reduce: merge the sub-forests in block order.

    The merged forest has no global OOB aggregate; the mean of the
    per-block OOB errors is reported instead.
    """
    params = params or ForestParams()
    plan.validate(ds.n)
    logger.info(f"Map phase: {plan.Q} blocks on {workers} workers")
    outputs = parallel_pool(workers)(
        delayed(_map_block)(ds, k, block, block_params(params, seed, k))
        for k, block in enumerate(plan.blocks))
    forest = merge_forests([output.forest for output in outputs])
    diagnostics = block_heterogeneity(ds, plan)
    result = PartitionedResult(forest, tuple(outputs), diagnostics)
    logger.info(f"Reduce phase: merged {forest.ntree} trees; mean block OOB error "
                f"{result.mean_block_oob_error:.4f}")
    return result


def per_block_importance(outputs: Sequence[MapOutput], ds: Dataset, seed: int = 0) -> pd.DataFrame:
    """Importance measured separately on every block's sub-forest, blocks side by side"""
    columns = {"variable": list(ds.names)}
    for output in outputs:
        result = variable_importance(output.forest, ds, derive_seed(seed, output.block_id))
        columns[f"block_{output.block_id}"] = result.values
    return pd.DataFrame(columns)


def write_map_outputs(outputs: Sequence[MapOutput], output_dir: str) -> str:
    """Write each sub-forest as a model file plus a JSON block manifest; returns the manifest path"""
    os.makedirs(output_dir, exist_ok=True)
    manifest = []
    for output in outputs:
        path = os.path.join(output_dir, f"block_{output.block_id}.model")
        save_forest(output.forest, path)
        manifest.append({
            "key": output.key,
            "block_id": output.block_id,
            "rows": int(len(output.forest.train_rows)),
            "ntree": output.forest.ntree,
            "oob_error": None if np.isnan(output.oob_error) else output.oob_error,
            "model": os.path.basename(path),
        })
    manifest_path = os.path.join(output_dir, "blocks.json")
    with open(manifest_path, "w") as f:
        json.dump({"blocks": manifest}, f, indent=2)
    return manifest_path


@dataclass(frozen=True, eq=False)
class BLBResult:
    forest: Forest
    supports: Tuple[np.ndarray, ...]
    sub_forests: Tuple[Forest, ...]


def train_blb(ds: Dataset, m: int, n_subsamples: int = 4, params: Optional[ForestParams] = None,
              seed: int = 0, workers: int = 1) -> BLBResult:
    """
    Bag-of-little-bootstraps forest.

    Every subsample draws m distinct rows; each of its trees is grown on a
    resample of total weight n spread over those rows by a uniform
    multinomial. The sub-forests are merged.

    Parameters:
        ds: Training data
        m: Distinct rows per subsample, 1 <= m <= n
        n_subsamples: Number of subsamples
        params: Per-subsample forest parameters (their resample is replaced)
        seed: Master seed
        workers: Subsamples trained concurrently

    Returns:
        BLBResult
    """
    if not 1 <= m <= ds.n:
        raise ArgumentError(f"BLB distinct count must satisfy 1 <= m <= n={ds.n}, got {m}")
    if n_subsamples < 1:
        raise ArgumentError(f"n_subsamples must be at least 1, got {n_subsamples}")
    params = params or ForestParams()
    supports = tuple(np.sort(make_rng(seed, s).choice(ds.n, size=m, replace=False)) for s in range(n_subsamples))
    spec = ResampleSpec(BLB, size=m, total=ds.n)
    sub_forests = parallel_pool(workers)(
        delayed(train_forest)(ds, replace(params, resample=spec, seed=derive_seed(seed, s), workers=1), support)
        for s, support in enumerate(supports))
    forest = merge_forests(sub_forests)
    logger.info(f"BLB forest: {n_subsamples} subsamples of {m} distinct rows, {forest.ntree} trees")
    return BLBResult(forest, supports, tuple(sub_forests))
