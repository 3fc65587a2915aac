"""Shared data containers, splitting, RNG discipline, and p-value utilities."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

METHODS = ("tPCM", "vPCM", "HRT", "GCM", "oracleGCM", "tGCM")


class CitlabError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(CitlabError):
    """Invalid inputs or configuration."""


@dataclass(frozen=True)
class Dataset:
    """An n-by-p predictor matrix with a response vector."""

    x: np.ndarray
    y: np.ndarray
    column_names: Optional[Sequence[str]] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if x.ndim != 2:
            raise ValidationError("x must be a 2-d matrix")
        if x.shape[0] != y.shape[0]:
            raise ValidationError("x and y row counts differ")
        if x.shape[0] < 4:
            raise ValidationError("need at least 4 observations")
        if x.shape[1] < 2:
            raise ValidationError("need at least 2 predictors")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValidationError("non-finite entries in data")
        if self.column_names is not None and len(self.column_names) != x.shape[1]:
            raise ValidationError("column_names length mismatch")

    @property
    def n_rows(self) -> int:
        return self.x.shape[0]

    @property
    def n_predictors(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class SplitAssignment:
    """Disjoint train/test row partition. d2 is the training half."""

    d1_indices: np.ndarray
    d2_indices: np.ndarray
    proportion: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "d1_indices", np.asarray(self.d1_indices, dtype=np.intp))
        object.__setattr__(self, "d2_indices", np.asarray(self.d2_indices, dtype=np.intp))


class CostCounters:
    """Units-of-computation bookkeeping.

    Fit counters count one unit per trained model.  Predict counters count one
    unit per vectorized batch (one pass over a set of rows), matching the
    accounting used in the cost audits; a zero-row call costs nothing.
    Increments are lock-protected so concurrent per-variable loops can share
    one instance.
    """

    FIELDS = (
        "ml_y_given_x",
        "ml_x",
        "ml_xj_given_rest",
        "predict_xj_given_rest",
        "predict_y_given_x",
    )

    def __init__(self):
        self._lock = threading.Lock()
        for f in self.FIELDS:
            setattr(self, f, 0)

    def increment(self, tag: str, amount: int = 1):
        if tag not in self.FIELDS:
            raise ValidationError(f"unknown counter tag {tag!r}")
        if amount < 0:
            raise ValidationError("counter increments must be nonnegative")
        with self._lock:
            setattr(self, tag, getattr(self, tag) + amount)

    def snapshot(self) -> dict:
        with self._lock:
            return {f: getattr(self, f) for f in self.FIELDS}

    def as_tuple(self) -> tuple:
        snap = self.snapshot()
        return tuple(snap[f] for f in self.FIELDS)

    def merge(self, other: "CostCounters"):
        for f in self.FIELDS:
            self.increment(f, getattr(other, f))

    def __repr__(self):
        return f"CostCounters{self.as_tuple()}"


@dataclass(frozen=True)
class TestOutcome:
    """Per-variable test result with timing and cost accounting."""

    variable_index: int
    statistic: float
    pvalue: float
    method: str
    wall_time: float = 0.0
    counters: dict = field(default_factory=dict)
    degenerate: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}")
        if not (0.0 < self.pvalue <= 1.0):
            raise ValidationError("p-value must lie in (0, 1]")


def split_data(dataset: Dataset, proportion: float, seed: int) -> SplitAssignment:
    """Randomly partition rows into a D2 training half and a D1 test half.

    D2 receives round(proportion * N) rows.  Deterministic for a fixed seed.
    """
    if not (0.0 < proportion < 1.0):
        raise ValidationError("proportion must lie strictly in (0, 1)")
    n_total = dataset.n_rows
    n_train = int(math.floor(proportion * n_total + 0.5))
    if n_train < 2 or n_total - n_train < 2:
        raise ValidationError("each half of the split needs at least 2 rows")
    rng = substream(seed, "split")
    perm = rng.permutation(n_total)
    d2 = np.sort(perm[:n_train])
    d1 = np.sort(perm[n_train:])
    return SplitAssignment(d1_indices=d1, d2_indices=d2, proportion=proportion, seed=seed)


def substream(seed: int, *key) -> np.random.Generator:
    """Derive an independent RNG substream from (seed, key).

    Keys may mix strings and integers; strings are hashed to stable integers.
    Execution order (e.g. a parallel per-variable loop) cannot change the
    stream any consumer sees.
    """
    ints = []
    for k in key:
        if isinstance(k, str):
            ints.append(int.from_bytes(k.encode()[:8].ljust(8, b"\0"), "little") & 0xFFFFFFFF)
        else:
            ints.append(int(k) & 0xFFFFFFFF)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(ints))
    return np.random.default_rng(ss)


def normal_pvalue(statistic: float, sided: str = "upper") -> float:
    """Standard normal p-value; ``upper`` gives 1 - Phi(T), ``two`` gives 2(1 - Phi(|T|))."""
    if not np.isfinite(statistic):
        raise ValidationError("statistic must be finite")
    if sided == "upper":
        p = 0.5 * math.erfc(statistic / math.sqrt(2.0))
    elif sided == "two":
        p = math.erfc(abs(statistic) / math.sqrt(2.0))
    else:
        raise ValidationError(f"unknown sidedness {sided!r}")
    # p-values feed Bonferroni at alpha/p; keep them in (0, 1].
    return min(max(p, 5e-324), 1.0)


def bonferroni_select(pvalues: np.ndarray, alpha: float) -> np.ndarray:
    """Reject variable j iff p_j <= alpha / p."""
    pvalues = np.asarray(pvalues, dtype=float)
    if pvalues.size == 0:
        raise ValidationError("empty p-value vector")
    if not (0.0 < alpha < 1.0):
        raise ValidationError("alpha must lie in (0, 1)")
    if np.any(pvalues <= 0.0) or np.any(pvalues > 1.0):
        raise ValidationError("p-values must lie in (0, 1]")
    return pvalues <= alpha / pvalues.size


def load_dataset_csv(path, response_column: str = "y") -> Dataset:
    """Read a dataset from CSV: header row, predictor columns plus a response column."""
    import pandas as pd

    frame = pd.read_csv(path)
    if response_column not in frame.columns:
        raise ValidationError(f"response column {response_column!r} missing from {path}")
    y = frame[response_column].to_numpy(dtype=float)
    xcols = [c for c in frame.columns if c != response_column]
    x = frame[xcols].to_numpy(dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("CSV contains missing or non-numeric values")
    return Dataset(x=x, y=y, column_names=xcols)


def save_dataset_csv(dataset: Dataset, path):
    import pandas as pd

    names = list(dataset.column_names) if dataset.column_names is not None \
        else [f"x{i + 1}" for i in range(dataset.n_predictors)]
    frame = pd.DataFrame(dataset.x, columns=names)
    frame["y"] = dataset.y
    frame.to_csv(path, index=False)
