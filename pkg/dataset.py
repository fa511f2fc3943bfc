"""
Dataset representation, CSV ingestion, deterministic train/test splitting and
the resampling primitives (bootstrap, subsample, bag-of-little-bootstraps weights).

Randomness always flows from integer seeds through numpy's PCG64 generator
(see utils.make_rng), so a seed reproduces the same rows on every platform.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from exceptions import ArgumentError, DegenerateError, ParseError, SchemaError, TargetMissingError
from utils import SeedLike, fingerprint_arrays, make_rng

logger = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"
REGRESSION = "regression"
CLASSIFICATION = "classification"


@dataclass(frozen=True)
class ColumnKind:
    """Numeric column, or categorical column whose codes are 0..cardinality-1"""
    tag: str = NUMERIC
    levels: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.tag not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"Unknown column kind '{self.tag}'")

    @classmethod
    def numeric(cls) -> "ColumnKind":
        return cls(NUMERIC)

    @classmethod
    def categorical(cls, levels: Sequence[str]) -> "ColumnKind":
        return cls(CATEGORICAL, tuple(levels))

    @property
    def is_categorical(self) -> bool:
        return self.tag == CATEGORICAL

    @property
    def cardinality(self) -> Optional[int]:
        return len(self.levels) if self.is_categorical else None


@dataclass(frozen=True)
class Task:
    """Regression, or classification over L class labels (codes 0..L-1)"""
    kind: str = REGRESSION
    classes: Tuple[str, ...] = ()

    @property
    def is_classification(self) -> bool:
        return self.kind == CLASSIFICATION

    @property
    def n_classes(self) -> int:
        return len(self.classes)


@dataclass(frozen=True)
class Schema:
    """Column names and kinds plus target description; what a model needs to read new data"""
    names: Tuple[str, ...]
    kinds: Tuple[ColumnKind, ...]
    task: Task
    target_name: Optional[str] = None

    @property
    def p(self) -> int:
        return len(self.names)

    def levels(self) -> Dict[str, Tuple[str, ...]]:
        """Category levels per categorical column (and the target classes)"""
        levels = {name: kind.levels for name, kind in zip(self.names, self.kinds) if kind.is_categorical}
        if self.task.is_classification and self.target_name is not None:
            levels[self.target_name] = self.task.classes
        return levels

    def compatible_with(self, other: "Schema") -> bool:
        return (self.names == other.names
                and tuple(k.tag for k in self.kinds) == tuple(k.tag for k in other.kinds)
                and self.task.kind == other.task.kind
                and self.task.classes == other.task.classes)


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Columnar feature table with an optional target.

    X holds numeric values and category codes as float64; cells flagged in
    ``missing`` hold 0.0 and must never be read. ``y`` is float64 for
    regression and int64 class codes for classification, or None for
    prediction-only data.
    """
    names: Tuple[str, ...]
    kinds: Tuple[ColumnKind, ...]
    X: np.ndarray
    missing: np.ndarray
    y: Optional[np.ndarray]
    task: Task
    target_name: Optional[str] = None
    _fingerprint: List[str] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        n = self.X.shape[0]
        if self.X.ndim != 2 or self.X.shape[1] != len(self.names) or len(self.kinds) != len(self.names):
            raise SchemaError("Feature matrix does not match the declared columns")
        if self.missing.shape != self.X.shape:
            raise SchemaError("Missing-value mask does not match the feature matrix")
        if self.y is not None:
            if len(self.y) != n:
                raise SchemaError("Target length does not match the row count")
            if self.task.is_classification and n > 0:
                if self.task.n_classes < 2:
                    raise DegenerateError("Classification needs at least two classes")
                if self.y.min() < 0 or self.y.max() >= self.task.n_classes:
                    raise SchemaError("Class codes out of range")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def is_degenerate(self) -> bool:
        return self.n == 0

    @property
    def schema(self) -> Schema:
        return Schema(self.names, self.kinds, self.task, self.target_name)

    @property
    def fingerprint(self) -> str:
        """Content hash identifying this exact training set"""
        if not self._fingerprint:
            self._fingerprint.append(fingerprint_arrays([self.X, self.missing, self.y]))
        return self._fingerprint[0]

    def take(self, rows: Sequence[int]) -> "Dataset":
        """Row subset, in the order given"""
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.names, self.kinds, self.X[rows], self.missing[rows],
                       None if self.y is None else self.y[rows], self.task, self.target_name)

    def select(self, columns: Sequence[int]) -> "Dataset":
        """Column subset, in the order given"""
        columns = [int(j) for j in columns]
        return Dataset(tuple(self.names[j] for j in columns), tuple(self.kinds[j] for j in columns),
                       self.X[:, columns], self.missing[:, columns], self.y, self.task, self.target_name)

    def equals(self, other: "Dataset") -> bool:
        """Exact equality of schema, observed values, missingness and target"""
        if self.schema != other.schema or self.X.shape != other.X.shape:
            return False
        if not np.array_equal(self.missing, other.missing):
            return False
        observed = ~self.missing
        if not np.array_equal(self.X[observed], other.X[observed]):
            return False
        if (self.y is None) != (other.y is None):
            return False
        return self.y is None or np.array_equal(self.y, other.y)


def load_schema(schema_path: str) -> Dict[str, str]:
    """
    Read a schema file: one "name:kind" declaration per line.

    Blank lines and lines starting with '#' are ignored.

    Parameters:
        schema_path: Path of the schema file

    Returns:
        Ordered mapping column name -> kind ("numeric" | "categorical")
    """
    schema = {}
    with open(schema_path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, sep, kind = line.rpartition(":")
            if not sep or not name.strip():
                raise SchemaError(f"Malformed schema line {line_no}: {line!r}")
            kind = kind.strip().lower()
            if kind not in (NUMERIC, CATEGORICAL):
                raise SchemaError(f"Unknown column kind '{kind}' for '{name.strip()}' on line {line_no}")
            schema[name.strip()] = kind
    return schema


def write_schema(ds: Dataset, schema_path: str):
    """Write the schema file matching a dataset (target declared last)"""
    with open(schema_path, "w", encoding="utf-8") as f:
        for name, kind in zip(ds.names, ds.kinds):
            f.write(f"{name}:{kind.tag}\n")
        if ds.target_name is not None:
            tag = CATEGORICAL if ds.task.is_classification else NUMERIC
            f.write(f"{ds.target_name}:{tag}\n")


def _parse_numeric(values: pd.Series, column: str) -> Tuple[np.ndarray, np.ndarray]:
    stripped = values.str.strip()
    empty = (stripped == "").to_numpy()
    parsed = pd.to_numeric(stripped.where(~empty), errors="coerce").to_numpy(dtype=np.float64)
    bad = np.flatnonzero(~empty & np.isnan(parsed))
    if len(bad):
        row = int(bad[0])
        raise ParseError(row + 1, column, values.iloc[row])
    parsed[empty] = 0.0
    return parsed, empty


def _code_levels(values: pd.Series, known: Optional[Sequence[str]] = None) -> Tuple[np.ndarray, np.ndarray, Tuple[str, ...]]:
    """Map levels to dense codes; first-appearance order unless a level table is imposed"""
    stripped = values.str.strip()
    empty = (stripped == "").to_numpy()
    if known is None:
        levels = tuple(pd.unique(stripped[~empty]))
    else:
        levels = tuple(known)
    lookup = {level: code for code, level in enumerate(levels)}
    codes = np.zeros(len(values), dtype=np.float64)
    unseen = np.zeros(len(values), dtype=bool)
    for i, value in enumerate(stripped):
        if empty[i]:
            continue
        code = lookup.get(value)
        if code is None:
            unseen[i] = True
        else:
            codes[i] = code
    return codes, empty | unseen, levels


def load_csv(path: str,
             schema: Optional[Mapping[str, str]] = None,
             target: Optional[str] = None,
             task: Optional[str] = None,
             levels: Optional[Mapping[str, Sequence[str]]] = None) -> Dataset:
    """
    Load a CSV file (header row, UTF-8, '.' decimal separator, empty cell = missing).

    Columns not declared in the schema are numeric. The target kind comes from
    ``task`` when given, else from the schema, else it is regression when every
    target cell parses as a number.

    Parameters:
        path: CSV file
        schema: Column kind declarations (see load_schema)
        target: Target column name; None loads features only
        task: Force "regression" or "classification"
        levels: Level tables to reuse (from a trained model) instead of first appearance

    Returns:
        Dataset
    """
    schema = dict(schema or {})
    levels = dict(levels or {})
    df = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[], encoding="utf-8")
    df.columns = [str(c).strip() for c in df.columns]

    unknown = [name for name in schema if name not in df.columns]
    if unknown:
        raise SchemaError(f"Schema declares columns absent from {path}: {', '.join(unknown)}")
    if target is not None and target not in df.columns:
        raise SchemaError(f"Target column '{target}' not found in {path}")

    feature_names = [c for c in df.columns if c != target]
    n = len(df)
    X = np.zeros((n, len(feature_names)), dtype=np.float64)
    missing = np.zeros((n, len(feature_names)), dtype=bool)
    kinds = []
    for j, name in enumerate(feature_names):
        if schema.get(name, NUMERIC) == CATEGORICAL:
            codes, absent, column_levels = _code_levels(df[name], levels.get(name))
            n_unseen = int((absent & (df[name].str.strip() != "").to_numpy()).sum())
            if n_unseen:
                logger.warning(f"{n_unseen} cells of '{name}' hold levels unknown to the model; treated as missing")
            X[:, j] = codes
            missing[:, j] = absent
            kinds.append(ColumnKind.categorical(column_levels))
        else:
            X[:, j], missing[:, j] = _parse_numeric(df[name], name)
            kinds.append(ColumnKind.numeric())

    y = None
    target_task = Task(REGRESSION)
    if target is not None:
        raw = df[target].str.strip()
        empty = np.flatnonzero((raw == "").to_numpy())
        if len(empty):
            raise TargetMissingError(int(empty[0]) + 1, target)
        kind = task or {CATEGORICAL: CLASSIFICATION, NUMERIC: REGRESSION}.get(schema.get(target, ""))
        if kind is None:
            numeric = pd.to_numeric(raw, errors="coerce")
            kind = REGRESSION if not numeric.isna().any() else CLASSIFICATION
        if kind == CLASSIFICATION:
            codes, unseen, classes = _code_levels(raw, levels.get(target))
            if unseen.any():
                raise SchemaError(f"Target '{target}' holds classes unknown to the model")
            y = codes.astype(np.int64)
            target_task = Task(CLASSIFICATION, classes)
        else:
            y, _ = _parse_numeric(raw, target)
            target_task = Task(REGRESSION)

    ds = Dataset(tuple(feature_names), tuple(kinds), X, missing, y, target_task, target)
    if ds.is_degenerate:
        logger.warning(f"{path} holds no data rows; dataset flagged degenerate")
    logger.info(f"Loaded {path}: n={ds.n}, p={ds.p}, task={target_task.kind}"
                + (f", L={target_task.n_classes}" if target_task.is_classification else ""))
    return ds


def write_csv(ds: Dataset, path: str):
    """Write a dataset back to CSV (target as last column), loadable with load_csv + write_schema"""
    columns = {}
    for j, (name, kind) in enumerate(zip(ds.names, ds.kinds)):
        if kind.is_categorical:
            render = lambda v, levels=kind.levels: levels[int(v)]
        else:
            render = lambda v: repr(float(v))
        columns[name] = ["" if absent else render(v) for v, absent in zip(ds.X[:, j], ds.missing[:, j])]
    if ds.y is not None:
        if ds.task.is_classification:
            columns[ds.target_name] = [ds.task.classes[int(c)] for c in ds.y]
        else:
            columns[ds.target_name] = [repr(float(v)) for v in ds.y]
    pd.DataFrame(columns, columns=list(columns)).to_csv(path, index=False)


def dataset_from_arrays(X, y=None, names: Optional[Sequence[str]] = None,
                        categorical: Optional[Mapping[int, int]] = None,
                        classification: bool = False, missing=None,
                        target_name: str = "y") -> Dataset:
    """
    Build a Dataset from in-memory arrays.

    Parameters:
        X: (n, p) array; NaN marks a missing cell when ``missing`` is not given
        y: Target values; class codes 0..L-1 when ``classification``
        names: Column names (default x1..xp)
        categorical: Column index -> cardinality for categorical columns
        classification: Treat y as class codes
        missing: Optional (n, p) boolean mask

    Returns:
        Dataset
    """
    X = np.array(X, dtype=np.float64, copy=True)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n, p = X.shape
    if missing is None:
        missing = np.isnan(X)
    missing = np.asarray(missing, dtype=bool)
    X[missing] = 0.0
    names = tuple(names) if names is not None else tuple(f"x{j + 1}" for j in range(p))
    categorical = dict(categorical or {})
    kinds = tuple(ColumnKind.categorical([str(c) for c in range(categorical[j])]) if j in categorical
                  else ColumnKind.numeric() for j in range(p))
    task = Task(REGRESSION)
    target = None
    if y is not None:
        if classification:
            target = np.asarray(y, dtype=np.int64)
            n_classes = max(2, int(target.max()) + 1) if len(target) else 2
            task = Task(CLASSIFICATION, tuple(str(c) for c in range(n_classes)))
        else:
            target = np.asarray(y, dtype=np.float64)
    return Dataset(names, kinds, X, missing, target, task, target_name if y is not None else None)


def split_train_test(ds: Dataset, n_train: int, seed: int) -> Tuple[Dataset, Dataset]:
    """
    Uniformly random train/test partition without replacement.

    Row order inside each part follows the original order.

    Parameters:
        ds: Dataset to split
        n_train: Rows in the training part, 0 < n_train < n
        seed: Seed of the permutation

    Returns:
        (train, test)
    """
    if not 0 < n_train < ds.n:
        raise ArgumentError(f"n_train must lie strictly between 0 and {ds.n}, got {n_train}")
    permutation = make_rng(seed).permutation(ds.n)
    train_rows = np.sort(permutation[:n_train])
    test_rows = np.sort(permutation[n_train:])
    return ds.take(train_rows), ds.take(test_rows)


IDENTITY = "identity"
BOOTSTRAP = "bootstrap"
SUBSAMPLE = "subsample"
BLB = "blb"
RESAMPLE_KINDS = (IDENTITY, BOOTSTRAP, SUBSAMPLE, BLB)


@dataclass(frozen=True)
class ResampleSpec:
    """
    How a training sample is drawn.

    kind identity: every row once. bootstrap: ``size`` draws with replacement
    (default n). subsample: ``size`` = k < n distinct rows. blb: ``size`` = m
    distinct rows carrying a total weight of ``total`` (default n).
    """
    kind: str = BOOTSTRAP
    size: Optional[int] = None
    total: Optional[int] = None

    def __post_init__(self):
        if self.kind not in RESAMPLE_KINDS:
            raise ArgumentError(f"Unknown resample kind '{self.kind}'")


@dataclass(frozen=True, eq=False)
class ResamplePlan:
    """
    Per-row non-negative integer multiplicities of one resample.

    ``domain`` lists the rows the plan was drawn from (None = every row);
    out-of-bag rows are the domain rows with multiplicity 0.
    """
    kind: str
    size: int
    multiplicities: np.ndarray
    support: np.ndarray
    domain: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return len(self.multiplicities)

    @property
    def oob_rows(self) -> np.ndarray:
        if self.domain is None:
            return np.flatnonzero(self.multiplicities == 0)
        return self.domain[self.multiplicities[self.domain] == 0]

    @property
    def in_bag_rows(self) -> np.ndarray:
        return np.flatnonzero(self.multiplicities > 0)

    def embed(self, rows: np.ndarray, n_total: int) -> "ResamplePlan":
        """The same plan expressed over a larger row set where it covers only ``rows``"""
        rows = np.asarray(rows, dtype=np.int64)
        if len(rows) == n_total and np.array_equal(rows, np.arange(n_total)):
            return self
        multiplicities = np.zeros(n_total, dtype=np.int64)
        multiplicities[rows] = self.multiplicities
        return ResamplePlan(self.kind, self.size, multiplicities, rows[self.support], rows)

    def expanded_rows(self) -> np.ndarray:
        """Row indices repeated by multiplicity (the materialised resample)"""
        return np.repeat(np.arange(self.n), self.multiplicities)


def draw_resample(n: int, spec: ResampleSpec, seed: SeedLike) -> ResamplePlan:
    """
    Draw one resample of n rows.

    Parameters:
        n: Number of rows to draw from
        spec: Resample kind and size
        seed: Integer seed or generator to consume

    Returns:
        ResamplePlan whose multiplicities sum to the declared sample size
    """
    if n < 1:
        raise ArgumentError("Cannot resample an empty dataset")
    rng = make_rng(seed)
    everything = np.arange(n)
    if spec.kind == IDENTITY:
        return ResamplePlan(IDENTITY, n, np.ones(n, dtype=np.int64), everything)
    if spec.kind == BOOTSTRAP:
        size = n if spec.size is None else int(spec.size)
        if size < 1:
            raise ArgumentError(f"Bootstrap size must be positive, got {size}")
        draws = rng.integers(0, n, size=size)
        return ResamplePlan(BOOTSTRAP, size, np.bincount(draws, minlength=n).astype(np.int64), everything)
    if spec.kind == SUBSAMPLE:
        k = spec.size
        if k is None or not 1 <= k < n:
            raise ArgumentError(f"Subsample size must satisfy 1 <= k < n={n}, got {k}")
        rows = np.sort(rng.choice(n, size=k, replace=False))
        multiplicities = np.zeros(n, dtype=np.int64)
        multiplicities[rows] = 1
        return ResamplePlan(SUBSAMPLE, k, multiplicities, everything)
    # blb
    m = spec.size
    if m is None or not 1 <= m <= n:
        raise ArgumentError(f"BLB distinct count must satisfy 1 <= m <= n={n}, got {m}")
    total = n if spec.total is None else int(spec.total)
    if total < 1:
        raise ArgumentError(f"BLB total weight must be positive, got {total}")
    distinct = np.sort(rng.choice(n, size=m, replace=False))
    multiplicities = np.zeros(n, dtype=np.int64)
    multiplicities[distinct] = rng.multinomial(total, np.full(m, 1.0 / m))
    return ResamplePlan(BLB, total, multiplicities, distinct)
