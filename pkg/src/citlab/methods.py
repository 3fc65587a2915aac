"""The hypothesis tests: tower PCM, vanilla PCM, HRT, and the GCM family.

Every test returns one :class:`TestOutcome` per requested variable.  The cost
audit follows the coarse units-of-computation accounting: one unit per model
fit, one unit per resample batch on the sampling and prediction counters.
Observed-data predictions that precede the per-variable loop are not charged
(they are not part of the per-variable workload being compared).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (CostCounters, Dataset, SplitAssignment, TestOutcome,
                   ValidationError, normal_pvalue, substream)
from .gaussian import (GaussianModel, conditional_law, fit_banded_precision,
                       fit_graphical_lasso, fit_sample_gaussian, sample_conditional)
from .learners import FittedRegression, LearnerConfig, fit


@dataclass(frozen=True)
class TestConfig:
    alpha: float = 0.05
    b_tpcm: int = 25
    b_hrt: int = 5000
    train_proportion_tpcm_hrt: float = 0.4
    train_proportion_pcm: float = 0.3
    gcm_sided: str = "two"
    cross_fit_folds: int = 5

    def __post_init__(self):
        if not (0 < self.alpha < 1):
            raise ValidationError("alpha must lie in (0, 1)")
        if self.b_tpcm < 1 or self.b_hrt < 1:
            raise ValidationError("resample budgets must be >= 1")
        if self.gcm_sided not in ("two", "upper"):
            raise ValidationError("gcm_sided must be 'two' or 'upper'")
        if self.cross_fit_folds < 2:
            raise ValidationError("cross_fit_folds must be >= 2")


@dataclass(frozen=True)
class GaussianSpec:
    """Which predictor-law estimator to use, plus its hyperparameters."""

    kind: str = "sample"  # sample | banded | glasso | oracle
    bandwidth: int = 1
    lambda_grid: Optional[Sequence[float]] = None
    cv_folds: int = 5
    oracle_model: Optional[GaussianModel] = None

    def __post_init__(self):
        if self.kind not in ("sample", "banded", "glasso", "oracle"):
            raise ValidationError(f"unknown gaussian estimator {self.kind!r}")
        if self.kind == "oracle" and self.oracle_model is None:
            raise ValidationError("oracle gaussian spec requires oracle_model")


def fit_gaussian(spec: GaussianSpec, x: np.ndarray,
                 counters: Optional[CostCounters] = None,
                 seed: int = 0) -> GaussianModel:
    if spec.kind == "sample":
        return fit_sample_gaussian(x, counters)
    if spec.kind == "banded":
        return fit_banded_precision(x, spec.bandwidth, counters)
    if spec.kind == "glasso":
        return fit_graphical_lasso(x, spec.lambda_grid, spec.cv_folds,
                                   seed=seed, counters=counters)
    if counters is not None:
        counters.increment("ml_x", 1)
    return spec.oracle_model


@dataclass(frozen=True)
class LearnedNuisances:
    """The shared learning step: m_hat and the predictor law, fit on D2."""

    m_hat: FittedRegression
    gmodel: GaussianModel


def learn_step(dataset: Dataset, split: SplitAssignment,
               learner_config: LearnerConfig, gaussian_spec: GaussianSpec,
               counters: Optional[CostCounters] = None,
               seed: int = 0) -> LearnedNuisances:
    x2 = dataset.x[split.d2_indices]
    y2 = dataset.y[split.d2_indices]
    m_hat = fit(learner_config, x2, y2, counters, tag="ml_y_given_x")
    gmodel = fit_gaussian(gaussian_spec, x2, counters, seed=seed)
    return LearnedNuisances(m_hat=m_hat, gmodel=gmodel)


def tower_mean(m_hat: FittedRegression, gmodel: GaussianModel, j: int,
               rows: np.ndarray, b: int, rng: np.random.Generator,
               counters: Optional[CostCounters] = None,
               base: Optional[np.ndarray] = None,
               return_draws: bool = False):
    """Monte Carlo estimate of E[m_hat | X_{-j}] at each row.

    Draws b conditional resamples of column j, evaluates m_hat on each
    resampled batch, and averages.  Charges b sampling units and b prediction
    units.
    """
    if b < 1:
        raise ValidationError("b must be >= 1")
    rows = np.asarray(rows, dtype=float)
    law = conditional_law(gmodel, j)
    z = np.delete(rows, j, axis=1)
    draws = sample_conditional(law, z, b, rng)
    preds = m_hat.predict_replaced(rows, j, draws, base=base)
    if counters is not None:
        counters.increment("predict_xj_given_rest", b)
        counters.increment("predict_y_given_x", b)
    mj = preds.mean(axis=0)
    if return_draws:
        return mj, draws, preds
    return mj


def _studentized_mean(r: np.ndarray):
    """(statistic, sigma_hat, degenerate) for T = sqrt(n) mean(r) / sd(r)."""
    n = r.shape[0]
    mean = r.mean()
    var = np.mean(r**2) - mean**2
    if var <= 0 or not np.isfinite(var):
        return float("nan"), 0.0, True
    sigma = float(np.sqrt(var))
    return float(np.sqrt(n) * mean / sigma), sigma, False


def _resolve_variables(p: int, variables: Optional[Sequence[int]]):
    if variables is None:
        return list(range(p))
    out = [int(v) for v in variables]
    if any(v < 0 or v >= p for v in out):
        raise ValidationError("variable index out of range")
    return out


def tpcm_test(dataset: Dataset, split: SplitAssignment,
              learner_config: LearnerConfig, gaussian_spec: GaussianSpec,
              test_config: TestConfig, seed: int = 0,
              variables: Optional[Sequence[int]] = None,
              shared: Optional[LearnedNuisances] = None,
              counters: Optional[CostCounters] = None) -> list[TestOutcome]:
    """Tower PCM: two fits, then p x B resamples; upper-tail normal p-values."""
    cnt = counters if counters is not None else CostCounters()
    if shared is None:
        shared = learn_step(dataset, split, learner_config, gaussian_spec, cnt, seed)
    x1 = dataset.x[split.d1_indices]
    y1 = dataset.y[split.d1_indices]
    base = shared.m_hat._predict(x1)
    outcomes = []
    for j in _resolve_variables(dataset.n_predictors, variables):
        t0 = time.perf_counter()
        rng = substream(seed, "tower", j)
        mj = tower_mean(shared.m_hat, shared.gmodel, j, x1, test_config.b_tpcm,
                        rng, cnt, base=base)
        r = (y1 - mj) * (base - mj)
        stat, _, degenerate = _studentized_mean(r)
        pval = 1.0 if degenerate else normal_pvalue(stat, "upper")
        outcomes.append(TestOutcome(
            variable_index=j, statistic=stat, pvalue=pval, method="tPCM",
            wall_time=time.perf_counter() - t0, counters=cnt.snapshot(),
            degenerate=degenerate))
    return outcomes


def hrt_test(dataset: Dataset, split: SplitAssignment,
             learner_config: LearnerConfig, gaussian_spec: GaussianSpec,
             test_config: TestConfig, seed: int = 0,
             variables: Optional[Sequence[int]] = None,
             shared: Optional[LearnedNuisances] = None,
             counters: Optional[CostCounters] = None) -> list[TestOutcome]:
    """Holdout randomization test with the MSE statistic.

    p_j = (1 + #{resampled MSE <= observed MSE}) / (B + 1): the observed
    statistic sits below the resamples exactly when x_j helps prediction.
    """
    cnt = counters if counters is not None else CostCounters()
    if shared is None:
        shared = learn_step(dataset, split, learner_config, gaussian_spec, cnt, seed)
    x1 = dataset.x[split.d1_indices]
    y1 = dataset.y[split.d1_indices]
    base = shared.m_hat._predict(x1)
    t_obs = float(np.mean((y1 - base) ** 2))
    b = test_config.b_hrt
    outcomes = []
    for j in _resolve_variables(dataset.n_predictors, variables):
        t0 = time.perf_counter()
        law = conditional_law(shared.gmodel, j)
        z = np.delete(x1, j, axis=1)
        rng = substream(seed, "hrt", j)
        draws = sample_conditional(law, z, b, rng)
        preds = shared.m_hat.predict_replaced(x1, j, draws, base=base)
        cnt.increment("predict_xj_given_rest", b)
        cnt.increment("predict_y_given_x", b)
        t_res = np.mean((y1[None, :] - preds) ** 2, axis=1)
        pval = (1.0 + int(np.sum(t_res <= t_obs))) / (b + 1.0)
        outcomes.append(TestOutcome(
            variable_index=j, statistic=t_obs, pvalue=pval, method="HRT",
            wall_time=time.perf_counter() - t0, counters=cnt.snapshot()))
    return outcomes


def _neighbor_columns(j: int, p: int, bandwidth: int) -> list[int]:
    lo = max(0, j - bandwidth)
    hi = min(p, j + bandwidth + 1)
    return [k for k in range(lo, hi) if k != j]


def vpcm_test(dataset: Dataset, split: SplitAssignment,
              learner_config: LearnerConfig, test_config: TestConfig,
              seed: int = 0, variables: Optional[Sequence[int]] = None,
              banded_bandwidth: Optional[int] = None,
              counters: Optional[CostCounters] = None) -> list[TestOutcome]:
    """Vanilla PCM: one shared m_hat fit plus three regressions per variable.

    With ``banded_bandwidth`` set and a separable additive m_hat, the
    f_j-style regressions use only the neighboring columns; the regression of
    Y on X_{-j} always uses all of X_{-j}.
    """
    cnt = counters if counters is not None else CostCounters()
    p = dataset.n_predictors
    x2 = dataset.x[split.d2_indices]
    y2 = dataset.y[split.d2_indices]
    x1 = dataset.x[split.d1_indices]
    y1 = dataset.y[split.d1_indices]
    m_hat = fit(learner_config, x2, y2, cnt, tag="ml_y_given_x")
    mhat_d2 = m_hat._predict(x2)
    mhat_d1 = m_hat._predict(x1)
    separable = banded_bandwidth is not None
    if separable and not hasattr(m_hat, "component"):
        raise ValidationError(
            "banded_bandwidth requires a separable additive fitted model "
            "exposing per-coordinate components")
    outcomes = []
    for j in _resolve_variables(p, variables):
        t0 = time.perf_counter()
        rest = [k for k in range(p) if k != j]
        if banded_bandwidth is not None:
            fcols = _neighbor_columns(j, p, banded_bandwidth)
        else:
            fcols = rest
        # f_hat_j = m_hat - (regression of m_hat onto X_{-j} fit on D2)
        if separable:
            gj_d2 = m_hat.component(j, x2[:, j])
            m_check = fit(learner_config, x2[:, fcols], gj_d2, cnt,
                          tag="ml_xj_given_rest")
            fhat_d1 = m_hat.component(j, x1[:, j]) - m_check._predict(x1[:, fcols])
        else:
            m_check = fit(learner_config, x2[:, rest], mhat_d2, cnt,
                          tag="ml_xj_given_rest")
            fhat_d1 = mhat_d1 - m_check._predict(x1[:, rest])
        # on D1: regress Y on X_{-j}, and f_hat_j on X_{-j}
        m_tilde = fit(learner_config, x1[:, rest], y1, cnt, tag="ml_y_given_x")
        m_fhat = fit(learner_config, x1[:, fcols], fhat_d1, cnt,
                     tag="ml_xj_given_rest")
        cnt.increment("predict_xj_given_rest", 1)
        cnt.increment("predict_y_given_x", 1)
        l = (y1 - m_tilde._predict(x1[:, rest])) * (fhat_d1 - m_fhat._predict(x1[:, fcols]))
        stat, _, degenerate = _studentized_mean(l)
        pval = 1.0 if degenerate else normal_pvalue(stat, "upper")
        outcomes.append(TestOutcome(
            variable_index=j, statistic=stat, pvalue=pval, method="vPCM",
            wall_time=time.perf_counter() - t0, counters=cnt.snapshot(),
            degenerate=degenerate))
    return outcomes


def gcm_test(dataset: Dataset, m_j_hat: np.ndarray, cond_mean_x: np.ndarray,
             sided: str = "two", method_label: str = "GCM",
             rows: Optional[np.ndarray] = None,
             counters: Optional[CostCounters] = None) -> list[TestOutcome]:
    """Product-of-residuals test of the expected conditional covariance.

    ``m_j_hat`` and ``cond_mean_x`` are (p, n_rows) arrays supplying, per
    variable, E[Y | X_{-j}] and E[X_j | X_{-j}] at each used row.
    """
    cnt = counters if counters is not None else CostCounters()
    idx = np.arange(dataset.n_rows) if rows is None else np.asarray(rows, dtype=np.intp)
    x = dataset.x[idx]
    y = dataset.y[idx]
    m_j_hat = np.asarray(m_j_hat, dtype=float)
    cond_mean_x = np.asarray(cond_mean_x, dtype=float)
    p = dataset.n_predictors
    if m_j_hat.shape != (p, len(idx)) or cond_mean_x.shape != (p, len(idx)):
        raise ValidationError("nuisance arrays must have shape (p, n_rows)")
    outcomes = []
    for j in range(p):
        t0 = time.perf_counter()
        r = (y - m_j_hat[j]) * (x[:, j] - cond_mean_x[j])
        stat, _, degenerate = _studentized_mean(r)
        pval = 1.0 if degenerate else normal_pvalue(stat, sided)
        outcomes.append(TestOutcome(
            variable_index=j, statistic=stat, pvalue=pval, method=method_label,
            wall_time=time.perf_counter() - t0, counters=cnt.snapshot(),
            degenerate=degenerate))
    return outcomes


def oracle_gcm_test(dataset: Dataset, true_mean, true_gaussian: GaussianModel,
                    b: int = 25, seed: int = 0, sided: str = "two",
                    counters: Optional[CostCounters] = None) -> list[TestOutcome]:
    """GCM with the true mean function and true predictor law; no splitting.

    The conditional mean E[Y | X_{-j}] is computed from the true mean via the
    same tower-property resampling acceleration as tPCM.
    """
    cnt = counters if counters is not None else CostCounters()
    x = dataset.x
    p = dataset.n_predictors
    oracle_fit = fit(LearnerConfig(kind="oracle", oracle_fn=true_mean), x, dataset.y,
                     counters=None, tag="ml_y_given_x")
    base = oracle_fit._predict(x)
    m_j = np.empty((p, dataset.n_rows))
    e_x = np.empty((p, dataset.n_rows))
    for j in range(p):
        rng = substream(seed, "ogcm", j)
        m_j[j] = tower_mean(oracle_fit, true_gaussian, j, x, b, rng, cnt, base=base)
        law = conditional_law(true_gaussian, j)
        e_x[j] = law.conditional_mean(np.delete(x, j, axis=1))
    return gcm_test(dataset, m_j, e_x, sided=sided, method_label="oracleGCM",
                    counters=cnt)


def tgcm_test(dataset: Dataset, learner_config: LearnerConfig,
              gaussian_spec: GaussianSpec, folds: int = 5, b: int = 25,
              seed: int = 0, sided: str = "two",
              counters: Optional[CostCounters] = None) -> list[TestOutcome]:
    """Cross-fitted, tower-accelerated GCM: every row enters the pooled statistic."""
    if folds < 2:
        raise ValidationError("folds must be >= 2")
    cnt = counters if counters is not None else CostCounters()
    n, p = dataset.n_rows, dataset.n_predictors
    perm = substream(seed, "folds").permutation(n)
    fold_ids = np.array_split(perm, folds)
    if min(len(f) for f in fold_ids) < 2:
        raise ValidationError("fold too small for fitting")
    m_j = np.empty((p, n))
    e_x = np.empty((p, n))
    for k, fold in enumerate(fold_ids):
        mask = np.ones(n, dtype=bool)
        mask[fold] = False
        m_hat = fit(learner_config, dataset.x[mask], dataset.y[mask], cnt,
                    tag="ml_y_given_x")
        gmodel = fit_gaussian(gaussian_spec, dataset.x[mask], cnt, seed=seed)
        x_fold = dataset.x[fold]
        base = m_hat._predict(x_fold)
        for j in range(p):
            rng = substream(seed, "tgcm", k, j)
            m_j[j, fold] = tower_mean(m_hat, gmodel, j, x_fold, b, rng, cnt, base=base)
            law = conditional_law(gmodel, j)
            e_x[j, fold] = law.conditional_mean(np.delete(x_fold, j, axis=1))
    return gcm_test(dataset, m_j, e_x, sided=sided, method_label="tGCM",
                    counters=cnt)


def rhrt_statistic(eps: np.ndarray, xi: np.ndarray,
                   cond_second_moment: np.ndarray, sigma_n: float) -> float:
    """Rescaled HRT statistic from residual arrays.

    eps = Y - m_hat_j; xi = m_hat(evaluated row) - m_hat_j (observed or
    resampled); cond_second_moment supplies E[xi_resampled^2 | X_{-j}, D2]
    per row.  Equals the tPCM statistic when sigma_n matches the empirical
    scale and xi^2 equals its conditional mean exactly.
    """
    if sigma_n <= 0:
        raise ValidationError("sigma_n must be positive")
    eps = np.asarray(eps, dtype=float)
    xi = np.asarray(xi, dtype=float)
    csm = np.asarray(cond_second_moment, dtype=float)
    n = eps.shape[0]
    return float((np.sum(eps * xi) - 0.5 * np.sum(xi**2 - csm))
                 / (np.sqrt(n) * sigma_n))
