"""
Two-step variable selection from forest importance.

1. Thresholding: a CART tree fitted to (importance rank -> importance sd)
   gives a noise level; variables whose mean importance exceeds it are kept.
2. Interpretation: nested forests on the top-k kept variables; the smallest
   k whose OOB error is within one sd of the best is retained.
3. Prediction: variables of the interpretation set are introduced in
   decreasing importance order and kept only when they lower the OOB error
   by more than the mean jump of the interpretation curve.
"""

import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from cart import ONE_SE_RULE, grow_maximal, predict_dataset, select_subtree_cv
from config import get_config
from dataset import Dataset, dataset_from_arrays
from exceptions import ArgumentError
from forest import ForestParams, oob_error, train_forest
from importance import ImportanceReport, replicated_importance
from models import TreeParams
from utils import default_mtry, derive_seed

logger = logging.getLogger(__name__)

THRESHOLD_STEP = "threshold"
INTERPRETATION_STEP = "interpretation"
FULL = "full"
STEPS = (THRESHOLD_STEP, INTERPRETATION_STEP, FULL)


@dataclass(frozen=True, eq=False)
class ThresholdResult:
    kept: Tuple[int, ...]
    threshold: float
    fitted_sd: np.ndarray
    fallback: bool = False


def threshold_step(report: ImportanceReport, seed: int = 0, folds: Optional[int] = None) -> ThresholdResult:
    """
    Eliminate low-importance variables.

    Fits a cross-validated (1-SE) CART regression of sd-of-importance on
    importance rank; the threshold is the smallest leaf prediction. Keeps
    variables with mean importance strictly above it, in rank order; when
    none survives, keeps the top-ranked variable and flags the fallback.
    """
    if report.sd_undefined:
        logger.warning("Thresholding with nrep=1: every sd is 0")
    order = report.ranking
    mean = report.mean
    sd_by_rank = report.sd[order]
    p = len(order)
    ranks = dataset_from_arrays(np.arange(1, p + 1, dtype=np.float64), sd_by_rank, names=["rank"])
    if folds is None:
        folds = min(get_config().CV_FOLDS, p)
    if p >= 2 and folds >= 2:
        tree, _ = select_subtree_cv(ranks, TreeParams(min_node_size=get_config().CART_MIN_NODE_SIZE),
                                    folds=folds, rule=ONE_SE_RULE, seed=seed)
    else:
        tree = grow_maximal(ranks, TreeParams(min_node_size=get_config().CART_MIN_NODE_SIZE)).root_only()
    threshold = float(min(leaf.prediction for leaf in tree.leaves()))
    fitted = predict_dataset(tree, ranks)

    kept = tuple(int(j) for j in order if mean[j] > threshold)
    fallback = False
    if not kept:
        kept = (int(order[0]),)
        fallback = True
        logger.warning("Thresholding eliminated every variable; keeping the top-ranked one")
    logger.info(f"Thresholding kept {len(kept)}/{p} variables (threshold {threshold:.6g})")
    return ThresholdResult(kept, threshold, fitted, fallback)


def select_interpretation_size(mean: Sequence[float], sd: Sequence[float]) -> int:
    """Smallest k (1-based) with mean[k] <= min(mean) + sd at the minimiser"""
    mean = np.asarray(mean, dtype=np.float64)
    sd = np.asarray(sd, dtype=np.float64)
    best = int(np.argmin(mean))
    bound = mean[best] + sd[best]
    return int(np.flatnonzero(mean <= bound)[0]) + 1


def subset_params(params: ForestParams, k: int, classification: bool, seed: int) -> ForestParams:
    """Forest parameters for a k-variable model: default mtry for k, or the given mtry capped at k"""
    mtry = default_mtry(k, classification) if params.mtry is None else min(params.mtry, k)
    return replace(params, mtry=mtry, seed=seed)


def mean_oob_error(ds: Dataset, variables: Sequence[int], params: ForestParams, nrep: int,
                   seed: int, key: int) -> Tuple[float, float, Tuple[int, ...]]:
    """Mean and sd of the OOB error of ``nrep`` forests on a variable subset"""
    subset = ds.select(variables)
    seeds = tuple(derive_seed(seed, key, r) for r in range(nrep))
    errors = []
    for replicate_seed in seeds:
        forest = train_forest(subset, subset_params(params, len(variables), ds.task.is_classification,
                                                    replicate_seed))
        errors.append(oob_error(forest, subset).error)
    errors = np.asarray(errors)
    sd = float(errors.std(ddof=1)) if nrep > 1 else 0.0
    return float(errors.mean()), sd, seeds


@dataclass(frozen=True, eq=False)
class InterpretationResult:
    variables: Tuple[int, ...]
    curve_mean: np.ndarray
    curve_sd: np.ndarray
    seeds: Tuple[Tuple[int, ...], ...]


def interpretation_step(ds: Dataset, kept: Sequence[int], params: Optional[ForestParams] = None,
                        nrep_interp: int = 25, seed: int = 0) -> InterpretationResult:
    """
    Nested models on the top-k kept variables, k = 1..m.

    Parameters:
        ds: Training data
        kept: Kept variables in rank order
        params: Forest parameters (mtry resolved per model size)
        nrep_interp: Forests per model
        seed: Master seed of this step

    Returns:
        InterpretationResult with the full OOB curve over k = 1..m
    """
    if not kept:
        raise ArgumentError("Interpretation needs at least one kept variable")
    params = params or ForestParams()
    means, sds, seeds = [], [], []
    for k in range(1, len(kept) + 1):
        mean, sd, used = mean_oob_error(ds, kept[:k], params, nrep_interp, seed, k)
        means.append(mean)
        sds.append(sd)
        seeds.append(used)
        logger.debug(f"Nested model k={k}: OOB error {mean:.4f} (sd {sd:.4f})")
    k = select_interpretation_size(means, sds)
    logger.info(f"Interpretation set: {k} of {len(kept)} variables")
    return InterpretationResult(tuple(int(j) for j in kept[:k]), np.asarray(means), np.asarray(sds), tuple(seeds))


def mean_jump_threshold(curve: Sequence[float], m_prime: int) -> float:
    """
    Mean absolute first difference of a 1-based OOB curve between m' and m = len(curve):
    sum over j = m'..m-1 of |curve(j+1) - curve(j)|, divided by m - m'.

    Curve values are read as the decimals they print as and summed exactly;
    only the final quotient is rounded.
    """
    m = len(curve)
    if not 1 <= m_prime <= m:
        raise ArgumentError(f"m' must lie in 1..{m}, got {m_prime}")
    if m_prime == m:
        return 0.0
    values = [Fraction(repr(float(v))) for v in curve]
    total = sum(abs(values[j] - values[j - 1]) for j in range(m_prime, m))
    return float(total / (m - m_prime))


@dataclass(frozen=True)
class PredictionStepEntry:
    variable: int
    oob_error: float
    accepted: bool


@dataclass(frozen=True, eq=False)
class PredictionResult:
    variables: Tuple[int, ...]
    threshold: float
    path: Tuple[PredictionStepEntry, ...]
    threshold_undefined: bool = False


def prediction_step(ds: Dataset, interpretation: Sequence[int], curve: Sequence[float],
                    params: Optional[ForestParams] = None, nrep_interp: int = 25,
                    seed: int = 0) -> PredictionResult:
    """
    Sequential introduction of the interpretation variables, most important first.

    The model does not start empty: the top variable always enters, with its
    one-variable interpretation-curve error as the current error. Each next
    variable is kept only when the mean OOB error of the enlarged model is
    below the current error minus the mean-jump threshold.
    """
    if not interpretation:
        raise ArgumentError("Prediction step needs a non-empty interpretation set")
    params = params or ForestParams()
    m_prime = len(interpretation)
    threshold = mean_jump_threshold(curve, m_prime)
    undefined = m_prime == len(curve)
    if undefined:
        logger.warning("Interpretation set equals the kept set: mean-jump threshold set to 0")

    selected = [int(interpretation[0])]
    current = float(curve[0])
    path = [PredictionStepEntry(selected[0], current, True)]
    for position, variable in enumerate(interpretation[1:], start=2):
        error, _, _ = mean_oob_error(ds, selected + [int(variable)], params, nrep_interp, seed, position)
        accepted = error < current - threshold
        path.append(PredictionStepEntry(int(variable), error, accepted))
        if accepted:
            selected.append(int(variable))
            current = error
    logger.info(f"Prediction set: {len(selected)} variables (threshold {threshold:.6g})")
    return PredictionResult(tuple(selected), threshold, tuple(path), undefined)


@dataclass(frozen=True, eq=False)
class SelectionReport:
    """Outcome of the selection pipeline, with the data of its four diagnostic panels"""
    names: Tuple[str, ...]
    importance: ImportanceReport
    threshold: ThresholdResult
    interpretation: Optional[InterpretationResult]
    prediction: Optional[PredictionResult]
    seeds: Dict[str, int] = field(default_factory=dict)

    @property
    def kept(self) -> Tuple[int, ...]:
        return self.threshold.kept

    @property
    def interpretation_set(self) -> Optional[Tuple[int, ...]]:
        return None if self.interpretation is None else self.interpretation.variables

    @property
    def prediction_set(self) -> Optional[Tuple[int, ...]]:
        return None if self.prediction is None else self.prediction.variables

    def flags(self) -> List[str]:
        flags = []
        if self.importance.sd_undefined:
            flags.append("nrep=1: importance sd undefined, reported as 0")
        if self.threshold.fallback:
            flags.append("thresholding eliminated every variable; top-ranked variable kept")
        if self.prediction is not None and self.prediction.threshold_undefined:
            flags.append("interpretation set equals kept set; mean-jump threshold set to 0")
        return flags

    def panel_frames(self) -> Dict[str, pd.DataFrame]:
        """Importance means, importance sds with the CART fit, interpretation curve, prediction path"""
        order = self.importance.ranking
        panels = {
            "vi_mean": pd.DataFrame({
                "rank": np.arange(1, len(order) + 1),
                "variable": [self.names[j] for j in order],
                "mean_vi": self.importance.mean[order],
                "threshold": self.threshold.threshold,
            }),
            "vi_sd": pd.DataFrame({
                "rank": np.arange(1, len(order) + 1),
                "variable": [self.names[j] for j in order],
                "sd_vi": self.importance.sd[order],
                "cart_fit": self.threshold.fitted_sd,
            }),
        }
        if self.interpretation is not None:
            kept = self.threshold.kept
            panels["interpretation"] = pd.DataFrame({
                "k": np.arange(1, len(kept) + 1),
                "variable": [self.names[j] for j in kept],
                "oob_error_mean": self.interpretation.curve_mean,
                "oob_error_sd": self.interpretation.curve_sd,
                "selected": np.arange(1, len(kept) + 1) <= len(self.interpretation.variables),
            })
        if self.prediction is not None:
            panels["prediction"] = pd.DataFrame({
                "step": np.arange(1, len(self.prediction.path) + 1),
                "variable": [self.names[e.variable] for e in self.prediction.path],
                "oob_error": [e.oob_error for e in self.prediction.path],
                "accepted": [e.accepted for e in self.prediction.path],
            })
        return panels


def vsurf(ds: Dataset, params: Optional[ForestParams] = None, nrep: Optional[int] = None,
          nrep_interp: Optional[int] = None, seed: int = 0, steps: str = FULL) -> SelectionReport:
    """
    Full selection pipeline: replicated importance, thresholding,
    interpretation and prediction steps.

    Each stage runs from its own seed derived from ``seed``; all of them
    are recorded in the report.
    """
    if steps not in STEPS:
        raise ArgumentError(f"Unknown selection steps '{steps}'")
    config = get_config()
    nrep = config.NREP_IMPORTANCE if nrep is None else nrep
    nrep_interp = config.NREP_INTERPRETATION if nrep_interp is None else nrep_interp
    params = params or ForestParams()
    seeds = {
        "importance": derive_seed(seed, 0),
        "threshold": derive_seed(seed, 1),
        "interpretation": derive_seed(seed, 2),
        "prediction": derive_seed(seed, 3),
    }

    report = replicated_importance(ds, params, nrep, seeds["importance"])
    threshold = threshold_step(report, seed=seeds["threshold"])
    interpretation = None
    prediction = None
    if steps in (INTERPRETATION_STEP, FULL):
        interpretation = interpretation_step(ds, threshold.kept, params, nrep_interp, seeds["interpretation"])
    if steps == FULL:
        prediction = prediction_step(ds, interpretation.variables, interpretation.curve_mean, params,
                                     nrep_interp, seeds["prediction"])
    return SelectionReport(ds.names, report, threshold, interpretation, prediction, seeds)
