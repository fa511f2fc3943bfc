import hashlib
import logging
import math
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from joblib import Parallel

from config import get_config

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.Generator]


def make_rng(seed: SeedLike, *keys: int) -> np.random.Generator:
    """
    Build the PCG64 generator for a seed and a path of integer keys.

    The same (seed, keys) always yields the same stream on every platform. Keys
    identify the consumer: (tree index,), (forest, tree, variable), (fold,), ...

    Parameters:
        seed: Master seed (non-negative integer) or an existing generator,
            which is returned untouched when no keys are given
        keys: Spawn path below the master seed

    Returns:
        numpy Generator
    """
    if isinstance(seed, np.random.Generator):
        if not keys:
            return seed
        seed = int(seed.integers(0, 2**63 - 1))
    sequence = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(sequence))


def derive_seed(seed: int, *keys: int) -> int:
    """Derive a 63-bit child seed from a master seed and a key path"""
    sequence = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def parallel_pool(workers: int) -> Parallel:
    """joblib pool of ``workers`` processes on the profile's backend"""
    return Parallel(n_jobs=workers, backend=get_config().PARALLEL_BACKEND)


def fingerprint_arrays(arrays: Iterable[np.ndarray]) -> str:
    """Content hash of a sequence of arrays (used to recognise a shared training set)"""
    digest = hashlib.sha1()
    for array in arrays:
        if array is None:
            digest.update(b"none")
            continue
        array = np.ascontiguousarray(array)
        digest.update(str(array.dtype).encode())
        digest.update(str(array.shape).encode())
        digest.update(array.tobytes())
    return digest.hexdigest()


def standard_error(losses: np.ndarray, binary: bool = False) -> float:
    """
    Standard error of a mean loss.

    Parameters:
    losses (array): Per-observation losses
    binary (bool): Losses are 0/1 indicators, use sqrt(e(1-e)/n)

    Returns:
    float: Standard error, 0 for fewer than two observations
    """
    n = len(losses)
    if n < 2:
        return 0.0
    if binary:
        mean = float(np.mean(losses))
        return math.sqrt(mean * (1.0 - mean) / n)
    return float(np.std(losses, ddof=1) / math.sqrt(n))


def default_mtry(p: int, classification: bool) -> int:
    """sqrt(p) in classification, p/3 in regression, floored, at least 1"""
    if classification:
        value = int(math.floor(math.sqrt(p)))
    else:
        value = int(math.floor(p / 3))
    return max(1, min(value, p))


def format_error(value: Optional[float]) -> str:
    """Format an error rate for reports"""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "N/A"
    return f"{value:.4f}"


def check_disjoint(groups: Sequence[Sequence[int]]) -> bool:
    """True when no variable index appears in two groups"""
    seen = set()
    for group in groups:
        for j in group:
            if j in seen:
                return False
            seen.add(j)
    return True
