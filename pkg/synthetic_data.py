"""
Simulated datasets used by the tests and by the ``--data demo:<model>`` source of the runner.
"""

import logging

import numpy as np

from dataset import Dataset, dataset_from_arrays
from exceptions import ArgumentError
from utils import make_rng

logger = logging.getLogger(__name__)


def additive_model(n: int = 500, n_informative: int = 3, n_noise: int = 7, noise_sd: float = 0.5,
                   classification: bool = False, seed: int = 0) -> Dataset:
    """
    Additive signal on the first ``n_informative`` columns plus pure-noise columns.

    Every column is U(0, 1). The signal adds a linear term, a sine and a
    quadratic, cycling through them across informative columns with
    decreasing weights. Classification thresholds the noisy signal at its
    median, giving balanced classes.
    """
    rng = make_rng(seed)
    p = n_informative + n_noise
    X = rng.uniform(0.0, 1.0, size=(n, p))
    shapes = (lambda x: 2.0 * x, lambda x: np.sin(2.0 * np.pi * x), lambda x: 4.0 * (x - 0.5) ** 2)
    signal = np.zeros(n)
    for j in range(n_informative):
        signal += (1.0 - 0.1 * j) * shapes[j % len(shapes)](X[:, j])
    noisy = signal + rng.normal(0.0, noise_sd, size=n)
    names = [f"signal{j + 1}" for j in range(n_informative)] + [f"noise{j + 1}" for j in range(n_noise)]
    if classification:
        y = (noisy > np.median(noisy)).astype(np.int64)
        return dataset_from_arrays(X, y, names=names, classification=True)
    return dataset_from_arrays(X, noisy, names=names)


def pure_noise(n: int = 500, p: int = 5, classification: bool = True, seed: int = 0) -> Dataset:
    """Features independent of the target; classification targets are balanced 0/1"""
    rng = make_rng(seed)
    X = rng.normal(size=(n, p))
    if classification:
        y = rng.permutation(np.arange(n) % 2)
        return dataset_from_arrays(X, y, classification=True)
    return dataset_from_arrays(X, rng.normal(size=n))


def step_function(n: int = 200, p: int = 2, cut: float = 0.5, seed: int = 0) -> Dataset:
    """Noiseless regression y = 1{x1 > cut}; the other columns are noise"""
    rng = make_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, p))
    return dataset_from_arrays(X, (X[:, 0] > cut).astype(np.float64))


def duplicated_columns(n: int = 300, copies: int = 2, n_noise: int = 3, classification: bool = True,
                       seed: int = 0) -> Dataset:
    """One informative column repeated ``copies`` times, followed by noise columns"""
    rng = make_rng(seed)
    base = rng.uniform(0.0, 1.0, size=n)
    X = np.column_stack([base] * copies + [rng.uniform(0.0, 1.0, size=n) for _ in range(n_noise)])
    names = [f"copy{j + 1}" for j in range(copies)] + [f"noise{j + 1}" for j in range(n_noise)]
    flips = rng.uniform(size=n) < 0.1
    y = (base > 0.5) ^ flips
    if classification:
        return dataset_from_arrays(X, y.astype(np.int64), names=names, classification=True)
    return dataset_from_arrays(X, base + rng.normal(0.0, 0.1, size=n), names=names)


def class_sorted(n: int = 400, n_classes: int = 4, p: int = 3, seed: int = 0) -> Dataset:
    """Classification data stored sorted by class, so contiguous blocks are heterogeneous"""
    if n_classes < 2:
        raise ArgumentError("class_sorted needs at least two classes")
    rng = make_rng(seed)
    y = np.sort(np.arange(n) % n_classes)
    X = rng.normal(size=(n, p)) + y[:, None]
    return dataset_from_arrays(X, y, classification=True)


def small_random(n: int, p: int, classification: bool = False, n_levels: int = 5,
                 n_classes: int = 2, seed: int = 0) -> Dataset:
    """Small integer-valued data with many ties, for brute-force checks of pruning"""
    rng = make_rng(seed)
    X = rng.integers(0, n_levels, size=(n, p)).astype(np.float64)
    if classification:
        return dataset_from_arrays(X, rng.integers(0, n_classes, size=n), classification=True)
    return dataset_from_arrays(X, rng.integers(0, 10, size=n).astype(np.float64))


def with_missing(ds: Dataset, fraction: float, seed: int = 0) -> Dataset:
    """Copy of ``ds`` with a random ``fraction`` of feature cells marked missing"""
    missing = make_rng(seed).uniform(size=ds.X.shape) < fraction
    X = ds.X.copy()
    X[missing] = np.nan
    categorical = {j: kind.cardinality for j, kind in enumerate(ds.kinds) if kind.is_categorical}
    return dataset_from_arrays(X, ds.y, names=ds.names, categorical=categorical,
                               classification=ds.task.is_classification, missing=missing | ds.missing)


DEMO_MODELS = {
    "additive": lambda seed: additive_model(seed=seed),
    "additive-class": lambda seed: additive_model(classification=True, seed=seed),
    "noise": lambda seed: pure_noise(seed=seed),
    "step": lambda seed: step_function(seed=seed),
    "duplicated": lambda seed: duplicated_columns(seed=seed),
    "sorted": lambda seed: class_sorted(seed=seed),
}


def demo_dataset(name: str, seed: int = 0) -> Dataset:
    """Dataset for a ``demo:<model>`` data source"""
    if name not in DEMO_MODELS:
        raise ArgumentError(f"Unknown demo model '{name}' (choose from {', '.join(DEMO_MODELS)})")
    ds = DEMO_MODELS[name](seed)
    logger.info(f"Generated demo dataset '{name}': {ds.n} rows, {ds.p} columns")
    return ds
