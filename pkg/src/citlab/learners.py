"""Regression learners used for every nuisance fit.

Three families: linear (OLS / ridge), penalized additive splines with a
per-predictor cubic B-spline basis, and an oracle wrapper around a known
true mean function.  All fits and predictions are routed through
:func:`fit` / :func:`predict` so cost counters stay accurate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import cho_factor, cho_solve

from .core import CostCounters, ValidationError

DEFAULT_LAMBDA_GRID = tuple(np.logspace(-4, 4, 20))


class SingularityError(ValidationError):
    """Rank-deficient design with no regularization to fall back on."""


@dataclass(frozen=True)
class LearnerConfig:
    kind: str = "additive_spline"  # ols | ridge | additive_spline | oracle
    ridge_lambda: float = 0.0
    spline_basis_size: int = 10
    spline_lambda_grid: Sequence[float] = field(default_factory=lambda: DEFAULT_LAMBDA_GRID)
    spline_selection: str = "gcv"  # gcv | fixed
    oracle_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.kind not in ("ols", "ridge", "additive_spline", "oracle"):
            raise ValidationError(f"unknown learner kind {self.kind!r}")
        if self.ridge_lambda < 0:
            raise ValidationError("ridge_lambda must be >= 0")
        if self.kind == "additive_spline":
            if self.spline_basis_size < 4:
                raise ValidationError("spline basis needs >= 4 functions per predictor")
            if len(self.spline_lambda_grid) == 0:
                raise ValidationError("spline lambda grid must be nonempty")
        if self.spline_selection not in ("gcv", "fixed"):
            raise ValidationError(f"unknown spline selection {self.spline_selection!r}")
        if self.kind == "oracle" and self.oracle_fn is None:
            raise ValidationError("oracle learner requires oracle_fn")


class FittedRegression:
    """Immutable fitted mean function with a predict contract."""

    def __init__(self, input_dimension: int, training_rows: int, counter_tag: str):
        self.input_dimension = input_dimension
        self.training_rows = training_rows
        self.counter_tag = counter_tag

    def _predict(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.input_dimension:
            raise ValidationError(
                f"predict expects width {self.input_dimension}, got {x.shape}"
            )
        return x

    def predict_replaced(self, x: np.ndarray, j: int, new_col: np.ndarray,
                         base: Optional[np.ndarray] = None) -> np.ndarray:
        """Predictions on x with column j replaced by new_col.

        ``new_col`` may be (rows,) or (batches, rows); the result has the same
        leading shape.  Subclasses with separable structure override this with
        an exact shortcut; the fallback rebuilds the matrix.
        """
        x = self._check(x)
        new_col = np.asarray(new_col, dtype=float)
        single = new_col.ndim == 1
        cols = np.atleast_2d(new_col)
        out = np.empty((cols.shape[0], x.shape[0]))
        xmod = x.copy()
        for b in range(cols.shape[0]):
            xmod[:, j] = cols[b]
            out[b] = self._predict(xmod)
        return out[0] if single else out


class LinearRegressionFit(FittedRegression):
    def __init__(self, intercept: float, coefficients: np.ndarray, **kw):
        super().__init__(**kw)
        self.intercept = float(intercept)
        self.coefficients = np.asarray(coefficients, dtype=float)

    def _predict(self, x):
        return self.intercept + x @ self.coefficients

    def predict_replaced(self, x, j, new_col, base=None):
        x = self._check(x)
        if base is None:
            base = self._predict(x)
        new_col = np.asarray(new_col, dtype=float)
        return base + self.coefficients[j] * (new_col - x[:, j])


class OracleRegressionFit(FittedRegression):
    def __init__(self, fn: Callable, **kw):
        super().__init__(**kw)
        self.fn = fn

    def _predict(self, x):
        out = np.asarray(self.fn(x), dtype=float)
        if out.shape != (x.shape[0],):
            raise ValidationError("oracle function returned wrong shape")
        return out


class _SplineBasis:
    """Column-centered cubic B-spline basis for one predictor."""

    def __init__(self, values: np.ndarray, size: int):
        lo, hi = float(np.min(values)), float(np.max(values))
        self.lo, self.hi = lo, hi
        degree = 3
        n_interior = size - degree - 1
        if n_interior > 0:
            qs = np.linspace(0, 1, n_interior + 2)[1:-1]
            interior = np.quantile(values, qs)
            # collapse duplicate quantile knots onto a strictly valid grid
            interior = np.clip(interior, lo, hi)
        else:
            interior = np.array([])
        self.knots = np.concatenate(
            [np.full(degree + 1, lo), interior, np.full(degree + 1, hi)]
        )
        self.degree = degree
        self.size = len(self.knots) - degree - 1
        self.center = self.design(values, center=False).mean(axis=0)

    def design(self, values: np.ndarray, center: bool = True) -> np.ndarray:
        # constant extrapolation outside the training hull
        v = np.clip(values, self.lo, self.hi)
        d = BSpline.design_matrix(v, self.knots, self.degree).toarray()
        if center:
            d = d - self.center
        return d

    def apply(self, values: np.ndarray, coef: np.ndarray) -> np.ndarray:
        """Centered design @ coef without materializing the design matrix.

        Evaluates the spline with the given coefficients directly, which is
        several times faster than building the design on large resample
        batches.
        """
        v = np.clip(values, self.lo, self.hi)
        spline = BSpline(self.knots, coef, self.degree, extrapolate=False)
        return spline(v) - float(self.center @ coef)


def _second_difference_penalty(q: int, shrink: float = 1e-2) -> np.ndarray:
    d = np.diff(np.eye(q), n=2, axis=0)
    return d.T @ d + shrink * np.eye(q)


class AdditiveSplineFit(FittedRegression):
    """intercept + sum_k g_k(x_k), each component a penalized cubic spline."""

    def __init__(self, intercept, bases, coef_blocks, active, gcv_lambda, **kw):
        super().__init__(**kw)
        self.intercept = float(intercept)
        self.bases = bases              # per active predictor
        self.coef_blocks = coef_blocks  # per active predictor
        self.active = active            # predictor indices with a basis
        self.gcv_lambda = float(gcv_lambda)

    def component(self, j: int, values: np.ndarray) -> np.ndarray:
        """Evaluate the single fitted component g_j at the given values."""
        if j not in self.active:
            return np.zeros(np.asarray(values).shape, dtype=float)
        k = self.active.index(j)
        vals = np.asarray(values, dtype=float)
        flat = vals.reshape(-1)
        out = self.bases[k].apply(flat, self.coef_blocks[k])
        return out.reshape(vals.shape)

    def _predict(self, x):
        out = np.full(x.shape[0], self.intercept)
        for k, j in enumerate(self.active):
            out += self.bases[k].apply(x[:, j], self.coef_blocks[k])
        return out

    def predict_replaced(self, x, j, new_col, base=None):
        x = self._check(x)
        if base is None:
            base = self._predict(x)
        return base - self.component(j, x[:, j]) + self.component(j, new_col)


def _fit_linear(config: LearnerConfig, x: np.ndarray, targets: np.ndarray, tag: str):
    n, p = x.shape
    xm = x.mean(axis=0)
    ym = targets.mean()
    xc = x - xm
    yc = targets - ym
    gram = xc.T @ xc
    if config.kind == "ols" and config.ridge_lambda == 0.0:
        if np.linalg.matrix_rank(gram, tol=1e-10 * max(1.0, np.abs(gram).max())) < p:
            raise SingularityError("rank-deficient design; use ridge_lambda > 0")
        coef = np.linalg.solve(gram, xc.T @ yc)
    else:
        coef = np.linalg.solve(gram + config.ridge_lambda * np.eye(p), xc.T @ yc)
    intercept = ym - xm @ coef
    return LinearRegressionFit(intercept, coef, input_dimension=p,
                               training_rows=n, counter_tag=tag)


def _fit_additive_spline(config: LearnerConfig, x: np.ndarray, targets: np.ndarray, tag: str):
    n, p = x.shape
    active, bases, designs = [], [], []
    for j in range(p):
        col = x[:, j]
        if np.ptp(col) <= 0:
            continue  # constant predictor: intercept only
        basis = _SplineBasis(col, config.spline_basis_size)
        active.append(j)
        bases.append(basis)
        designs.append(basis.design(col))
    ym = targets.mean()
    yc = targets - ym
    if not active:
        return AdditiveSplineFit(ym, [], [], [], 0.0, input_dimension=p,
                                 training_rows=n, counter_tag=tag)
    b = np.hstack(designs)
    sizes = [d.shape[1] for d in designs]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    penalty = np.zeros((b.shape[1], b.shape[1]))
    for k, q in enumerate(sizes):
        penalty[offs[k]:offs[k + 1], offs[k]:offs[k + 1]] = _second_difference_penalty(q)
    gram = b.T @ b + 1e-8 * np.eye(b.shape[1])
    bty = b.T @ yc

    if config.spline_selection == "fixed":
        lambdas = [float(config.spline_lambda_grid[0])]
    else:
        lambdas = [float(v) for v in config.spline_lambda_grid]

    best = None
    for lam in lambdas:
        c, low = cho_factor(gram + lam * penalty)
        coef = cho_solve((c, low), bty)
        if len(lambdas) == 1:
            best = (0.0, lam, coef)
            break
        edf = np.trace(cho_solve((c, low), gram))
        rss = float(np.sum((yc - b @ coef) ** 2))
        denom = max(n - edf, 1e-8)
        gcv = n * rss / denom**2
        if best is None or gcv < best[0]:
            best = (gcv, lam, coef)
    _, lam, coef = best
    blocks = [coef[offs[k]:offs[k + 1]] for k in range(len(sizes))]
    return AdditiveSplineFit(ym, bases, blocks, active, lam, input_dimension=p,
                             training_rows=n, counter_tag=tag)


def fit(config: LearnerConfig, x: np.ndarray, targets: np.ndarray,
        counters: Optional[CostCounters] = None,
        tag: str = "ml_y_given_x") -> FittedRegression:
    """Train one regression model; increments the tagged fit counter by one."""
    x = np.asarray(x, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if x.ndim != 2 or x.shape[0] != targets.shape[0]:
        raise ValidationError("x and targets are incompatible")
    if config.kind in ("ols", "ridge"):
        model = _fit_linear(config, x, targets, tag)
    elif config.kind == "additive_spline":
        model = _fit_additive_spline(config, x, targets, tag)
    else:
        model = OracleRegressionFit(config.oracle_fn, input_dimension=x.shape[1],
                                    training_rows=x.shape[0], counter_tag=tag)
    if counters is not None:
        counters.increment(tag, 1)
    return model


def predict(model: FittedRegression, x: np.ndarray,
            counters: Optional[CostCounters] = None,
            tag: str = "predict_y_given_x") -> np.ndarray:
    """One prediction per row; charges the tagged predict counter by rows(x).

    The test procedures account costs in resample batches (one unit per
    vectorized pass) and therefore charge their counters directly rather than
    through this helper.
    """
    x = model._check(x)
    if x.shape[0] == 0:
        return np.empty(0)
    out = model._predict(x)
    if not np.all(np.isfinite(out)):
        raise ValidationError("non-finite predictions")
    if counters is not None:
        counters.increment(tag, x.shape[0])
    return out


def fit_additive_spline_center(config: LearnerConfig, x: np.ndarray,
                               targets: np.ndarray,
                               counters: Optional[CostCounters] = None,
                               tag: str = "ml_y_given_x") -> AdditiveSplineFit:
    """Additive spline fit whose per-predictor components are retrievable alone."""
    cfg = config if config.kind == "additive_spline" else LearnerConfig(
        kind="additive_spline",
        spline_basis_size=config.spline_basis_size,
        spline_lambda_grid=config.spline_lambda_grid,
        spline_selection=config.spline_selection,
    )
    model = fit(cfg, x, targets, counters, tag)
    assert isinstance(model, AdditiveSplineFit)
    return model
