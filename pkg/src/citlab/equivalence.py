"""Numerical verification of the algebraic and asymptotic equivalence claims.

Checks, at desk scale: the exact affine identity linking the HRT MSE
statistic to the tower-PCM statistic, the exact agreement of the HRT and
rescaled-HRT decisions under shared resample streams, null calibration of the
tower-PCM statistic in a Gaussian linear model, and the decay of the
robustness-assumption diagnostic terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .core import (CostCounters, Dataset, ValidationError, normal_pvalue,
                   split_data, substream)
from .gaussian import ConditionalLaw, GaussianModel, conditional_law, sample_conditional
from .learners import LearnerConfig, fit
from .methods import LearnedNuisances, rhrt_statistic, tower_mean


@dataclass(frozen=True)
class EquivalenceReport:
    identity_max_abs_error: float = float("nan")
    decision_agreement_rate: float = float("nan")
    ks_statistic: float = float("nan")
    ks_pvalue: float = float("nan")
    empirical_level: float = float("nan")
    assumption_terms: dict = field(default_factory=dict)
    n: int = 0
    replicates: int = 0

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "replicates": self.replicates,
            "identity_max_abs_error": self.identity_max_abs_error,
            "decision_agreement_rate": self.decision_agreement_rate,
            "ks_statistic": self.ks_statistic,
            "ks_pvalue": self.ks_pvalue,
            "empirical_level": self.empirical_level,
            "assumption_terms": dict(self.assumption_terms),
        }


def _tpcm_arrays(dataset: Dataset, split, shared: LearnedNuisances, j: int,
                 b: int, seed: int):
    """One shared evaluation pass for variable j: all residual arrays."""
    x1 = dataset.x[split.d1_indices]
    y1 = dataset.y[split.d1_indices]
    base = shared.m_hat._predict(x1)
    rng = substream(seed, "tower", j)
    mj = tower_mean(shared.m_hat, shared.gmodel, j, x1, b, rng, base=base)
    eps = y1 - mj
    xi = base - mj
    return x1, y1, base, mj, eps, xi


def check_hrt_identity(dataset: Dataset, split, shared: LearnedNuisances,
                       j: int, b: int = 25, seed: int = 0) -> float:
    """Absolute error of the exact MSE-statistic decomposition.

    T_HRT = -(2 sigma_hat / sqrt(n)) T_tPCM + mean(xi^2) + mean(eps^2),
    all terms computed from one shared evaluation pass.
    """
    _, y1, base, mj, eps, xi = _tpcm_arrays(dataset, split, shared, j, b, seed)
    n = y1.shape[0]
    t_hrt = float(np.mean((y1 - base) ** 2))
    r = eps * xi
    var = np.mean(r**2) - np.mean(r) ** 2
    if var > 0:
        sigma = np.sqrt(var)
        t_tpcm = np.sqrt(n) * np.mean(r) / sigma
        cross = 2.0 * sigma / np.sqrt(n) * t_tpcm
    else:
        cross = 2.0 * np.mean(r)
    rhs = -cross + float(np.mean(xi**2)) + float(np.mean(eps**2))
    return abs(t_hrt - rhs)


def conditional_second_moment(m_hat, law: ConditionalLaw, j: int,
                              rows: np.ndarray, mj: np.ndarray, b: int,
                              rng: np.random.Generator) -> np.ndarray:
    """Per-row Monte Carlo estimate of E[(m_hat(resampled) - m_hat_j)^2 | X_{-j}]."""
    z = np.delete(rows, j, axis=1)
    draws = sample_conditional(law, z, b, rng)
    preds = m_hat.predict_replaced(rows, j, draws)
    return np.mean((preds - mj[None, :]) ** 2, axis=0)


def check_decision_identity(dataset: Dataset, split, shared: LearnedNuisances,
                            j: int, b_hrt: int = 200, seed: int = 0,
                            alpha: float = 0.05, b_tower: int = 25,
                            b_sigma: int = 1000) -> bool:
    """True iff the HRT and rescaled-HRT reject/accept decisions agree when
    both tests consume the identical resample draws."""
    x1, y1, base, mj, eps, xi = _tpcm_arrays(dataset, split, shared, j,
                                             b_tower, seed)
    law = conditional_law(shared.gmodel, j)
    z = np.delete(x1, j, axis=1)
    # the single shared resample stream feeding both tests
    draws = sample_conditional(law, z, b_hrt, substream(seed, "shared-draws", j))
    preds = shared.m_hat.predict_replaced(x1, j, draws, base=base)

    # HRT side: MSE statistic, count resamples at or below the observed one
    t_obs = float(np.mean((y1 - base) ** 2))
    t_res = np.mean((y1[None, :] - preds) ** 2, axis=1)
    p_hrt = (1.0 + int(np.sum(t_res <= t_obs))) / (b_hrt + 1.0)
    reject_hrt = p_hrt <= alpha

    # rHRT side: same draws, rescaled statistic against its resampling quantile
    rng_aux = substream(seed, "rhrt-aux", j)
    csm = conditional_second_moment(shared.m_hat, law, j, x1, mj,
                                    max(b_sigma // 10, 50), rng_aux)
    sig_draws = sample_conditional(law, z, min(b_sigma, 2000),
                                   substream(seed, "rhrt-sigma", j))
    sig_preds = shared.m_hat.predict_replaced(x1, j, sig_draws, base=base)
    r_tilde = eps[None, :] * (sig_preds - mj[None, :])
    sigma_n = float(np.sqrt(max(np.mean(r_tilde**2) - np.mean(r_tilde) ** 2,
                                1e-12)))
    t_rhrt = rhrt_statistic(eps, xi, csm, sigma_n)
    t_rhrt_res = np.array([
        rhrt_statistic(eps, preds[k] - mj, csm, sigma_n) for k in range(b_hrt)
    ])
    p_rhrt = (1.0 + int(np.sum(t_rhrt_res >= t_rhrt))) / (b_hrt + 1.0)
    reject_rhrt = p_rhrt <= alpha
    return reject_hrt == reject_rhrt


def linear_model_gaussian(eta_hat: np.ndarray) -> GaussianModel:
    """Joint Gaussian for (X_j, X_{-j}) implied by X_j = Z' eta + N(0, 1), Z ~ N(0, I).

    The tested coordinate sits in position 0; conditional variance is the
    known unit noise variance, so only eta enters estimation.
    """
    eta_hat = np.asarray(eta_hat, dtype=float)
    q = eta_hat.shape[0]
    prec = np.empty((q + 1, q + 1))
    prec[0, 0] = 1.0
    prec[0, 1:] = -eta_hat
    prec[1:, 0] = -eta_hat
    prec[1:, 1:] = np.eye(q) + np.outer(eta_hat, eta_hat)
    return GaussianModel(mean=np.zeros(q + 1), precision=prec, estimator="oracle")


def generate_linear_model(n_total: int, eta: np.ndarray, gamma: np.ndarray,
                          beta: float, rng: np.random.Generator) -> Dataset:
    """Rows of (X_j, Z) with X_j = Z' eta + delta and Y = beta X_j + Z' gamma + eps."""
    eta = np.asarray(eta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    q = eta.shape[0]
    z = rng.standard_normal((n_total, q))
    xj = z @ eta + rng.standard_normal(n_total)
    y = beta * xj + z @ gamma + rng.standard_normal(n_total)
    x = np.column_stack([xj, z])
    return Dataset(x=x, y=y)


def _fit_linear_model_nuisances(dataset: Dataset, split,
                                counters: CostCounters | None = None):
    """OLS estimates of (beta, gamma) and eta on D2; matched-variance Gaussian."""
    x2 = dataset.x[split.d2_indices]
    y2 = dataset.y[split.d2_indices]
    m_hat = fit(LearnerConfig(kind="ols"), x2, y2, counters, tag="ml_y_given_x")
    z2 = x2[:, 1:]
    eta_hat, *_ = np.linalg.lstsq(z2, x2[:, 0], rcond=None)
    gmodel = linear_model_gaussian(eta_hat)
    if counters is not None:
        counters.increment("ml_x", 1)
    return LearnedNuisances(m_hat=m_hat, gmodel=gmodel), eta_hat


def linear_model_replicate(n: int, eta, gamma, seed: int, alpha: float = 0.05,
                           b_tpcm: int = 25, b_hrt: int = 200,
                           beta: float = 0.0) -> dict:
    """One null-model replicate: tPCM statistic/decision and HRT decision for j=0."""
    rng = substream(seed, "linmod")
    dataset = generate_linear_model(2 * n, eta, gamma, beta, rng)
    split = split_data(dataset, 0.5, seed)
    shared, _ = _fit_linear_model_nuisances(dataset, split)
    x1 = dataset.x[split.d1_indices]
    y1 = dataset.y[split.d1_indices]
    base = shared.m_hat._predict(x1)
    mj = tower_mean(shared.m_hat, shared.gmodel, 0, x1, b_tpcm,
                    substream(seed, "tower", 0), base=base)
    r = (y1 - mj) * (base - mj)
    var = np.mean(r**2) - np.mean(r) ** 2
    t_tpcm = float(np.sqrt(len(r)) * np.mean(r) / np.sqrt(var)) if var > 0 else 0.0
    reject_tpcm = normal_pvalue(t_tpcm, "upper") <= alpha
    law = conditional_law(shared.gmodel, 0)
    draws = sample_conditional(law, x1[:, 1:], b_hrt, substream(seed, "hrt", 0))
    preds = shared.m_hat.predict_replaced(x1, 0, draws, base=base)
    t_obs = float(np.mean((y1 - base) ** 2))
    t_res = np.mean((y1[None, :] - preds) ** 2, axis=1)
    p_hrt = (1.0 + int(np.sum(t_res <= t_obs))) / (b_hrt + 1.0)
    return {
        "t_tpcm": t_tpcm,
        "reject_tpcm": bool(reject_tpcm),
        "reject_hrt": bool(p_hrt <= alpha),
        "agree": bool(reject_tpcm == (p_hrt <= alpha)),
    }


def linear_model_suite(n_grid, reps: int, eta, gamma, seed: int = 0,
                       alpha: float = 0.05, b_tpcm: int = 25,
                       b_hrt: int = 200, diagnostics_reps: int = 0,
                       diagnostics_b: int = 200) -> list[EquivalenceReport]:
    """Null calibration and HRT/tPCM agreement across a grid of sample sizes."""
    reports = []
    for n in n_grid:
        stats_t = np.empty(reps)
        agree = np.empty(reps, dtype=bool)
        level = np.empty(reps, dtype=bool)
        for r in range(reps):
            out = linear_model_replicate(n, eta, gamma,
                                         seed=int(substream(seed, "rep", n, r).integers(2**63)),
                                         alpha=alpha, b_tpcm=b_tpcm, b_hrt=b_hrt)
            stats_t[r] = out["t_tpcm"]
            agree[r] = out["agree"]
            level[r] = out["reject_tpcm"]
        ks = stats.kstest(stats_t, "norm")
        terms: dict = {}
        if diagnostics_reps > 0:
            acc: dict[str, list] = {}
            for r in range(diagnostics_reps):
                d = linear_model_diagnostics(
                    n, eta, gamma,
                    seed=int(substream(seed, "diag", n, r).integers(2**63)),
                    b=diagnostics_b)
                for k, v in d.items():
                    acc.setdefault(k, []).append(v)
            terms = {k: float(np.median(v)) for k, v in acc.items()}
        reports.append(EquivalenceReport(
            decision_agreement_rate=float(np.mean(agree)),
            ks_statistic=float(ks.statistic),
            ks_pvalue=float(ks.pvalue),
            empirical_level=float(np.mean(level)),
            assumption_terms=terms,
            n=int(n), replicates=reps,
        ))
    return reports


def _safe_ratio(numerator: float, denominator: float) -> float:
    if numerator == 0.0:
        return 0.0
    if denominator <= 0.0:
        raise ValidationError("degenerate variance in diagnostics")
    return numerator / denominator


def assumption_diagnostics(dataset: Dataset, split, m_hat,
                           fitted_law: ConditionalLaw, true_law: ConditionalLaw,
                           true_m_j, j: int, b: int = 200,
                           seed: int = 0) -> dict:
    """Robustness-assumption diagnostic terms for one variable.

    Requires matched Gaussian conditional variances so the chi-square
    divergence has a closed form; conditional moments of the fitted mean are
    estimated by b-resample Monte Carlo under the true law.  The noise
    variance of Y given X_{-j} is taken as known (unit), matching the
    linear-model setting these diagnostics are defined for.

    Normalization: the chi-square and weighted regression terms divide by the
    average conditional second moment of the resampling fluctuation (the
    product-statistic variance scale), so the per-row second-moment weights
    cancel against it.  The plain regression-MSE term is reported with that
    cancellation already applied -- it is the bare average conditional MSE --
    because dividing it by the fluctuation scale (itself shrinking at the
    parametric rate) would leave a ratio of two vanishing quantities that
    does not decay; the reported quantities are exactly the ones driven to
    zero in the validity argument.
    """
    if abs(fitted_law.variance - true_law.variance) > 1e-9:
        raise ValidationError(
            "chi-square diagnostic requires matched Gaussian conditional variances")
    x1 = dataset.x[split.d1_indices]
    z = np.delete(x1, j, axis=1)
    rng = substream(seed, "diagnostics", j)
    draws = sample_conditional(true_law, z, b, rng)
    preds = m_hat.predict_replaced(x1, j, draws)
    cond_mean = preds.mean(axis=0)
    csm = np.mean((preds - cond_mean[None, :]) ** 2, axis=0)
    mj_true = np.asarray(true_m_j(z), dtype=float)
    mse_j = np.mean((preds - mj_true[None, :]) ** 2, axis=0)
    mu_fit = fitted_law.conditional_mean(z)
    mu_true = true_law.conditional_mean(z)
    chi2 = np.expm1((mu_fit - mu_true) ** 2 / true_law.variance)
    scale = float(np.mean(csm))  # Var(eps|z) = 1 known; sigma_n^2 = mean E[xi^2]
    e2_lhat = _safe_ratio(float(np.mean(chi2 * csm)), scale)
    e2_prime = _safe_ratio(float(np.mean(mse_j * csm)), scale)
    e2_mhat = float(np.mean(mse_j))
    product = float(np.sqrt(e2_lhat * e2_mhat) * np.sqrt(x1.shape[0]))
    return {
        "chi2_divergence": e2_lhat,
        "reg_func_weighted": e2_prime,
        "reg_func_mse": e2_mhat,
        "doubly_robust_product": product,
    }


def linear_model_diagnostics(n: int, eta, gamma, seed: int, b: int = 200,
                             beta: float = 0.0,
                             eta_hat_override=None,
                             oracle: bool = False) -> dict:
    """Fit the linear model once and evaluate the assumption diagnostics."""
    rng = substream(seed, "linmod")
    dataset = generate_linear_model(2 * n, eta, gamma, beta, rng)
    split = split_data(dataset, 0.5, seed)
    gamma = np.asarray(gamma, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if oracle:
        from .learners import OracleRegressionFit

        # the oracle mean evaluates through the identical expression as the
        # true regression function, so the diagnostics are exactly zero
        m_hat = OracleRegressionFit(lambda x: beta * x[:, 0] + x[:, 1:] @ gamma,
                                    input_dimension=dataset.n_predictors,
                                    training_rows=len(split.d2_indices),
                                    counter_tag="ml_y_given_x")
        eta_hat = eta.copy()
    else:
        shared, eta_hat = _fit_linear_model_nuisances(dataset, split)
        m_hat = shared.m_hat
    if eta_hat_override is not None:
        eta_hat = np.asarray(eta_hat_override, dtype=float)
    fitted_law = conditional_law(linear_model_gaussian(eta_hat), 0)
    true_law = conditional_law(linear_model_gaussian(eta), 0)
    true_m_j = lambda z: z @ gamma  # under the null, E[Y | X_{-j}] = Z' gamma
    return assumption_diagnostics(dataset, split, m_hat, fitted_law, true_law,
                                  true_m_j, j=0, b=b, seed=seed)
