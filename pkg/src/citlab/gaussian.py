"""Multivariate Gaussian predictor models and per-coordinate conditional laws.

Estimators: sample covariance inverse, modified-Cholesky banded precision,
and a blockwise coordinate-descent graphical lasso with cross-validated
penalty selection.  Conditional laws read directly off the precision matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import CostCounters, ValidationError

VARIANCE_FLOOR = 1e-8


class ConvergenceError(ValidationError):
    """Iterative solver exhausted its sweep budget."""


@dataclass(frozen=True)
class GaussianModel:
    mean: np.ndarray
    precision: np.ndarray
    estimator: str = "sample"  # sample | banded | glasso | oracle

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        prec = np.asarray(self.precision, dtype=float)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", prec)
        p = mean.shape[0]
        if prec.shape != (p, p):
            raise ValidationError("precision shape does not match mean")
        if np.abs(prec - prec.T).max() > 1e-10 * max(1.0, np.abs(prec).max()):
            raise ValidationError("precision is not symmetric")
        if np.any(np.diag(prec) <= 0):
            raise ValidationError("precision diagonal must be positive")
        try:
            np.linalg.cholesky(prec)
        except np.linalg.LinAlgError as e:
            raise ValidationError("precision is not positive definite") from e

    @property
    def dimension(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class ConditionalLaw:
    """X_j | X_{-j} = z ~ Normal(intercept + coefficients @ z, variance)."""

    coefficients: np.ndarray
    intercept: float
    variance: float

    def conditional_mean(self, z: np.ndarray) -> np.ndarray:
        """Mean for each row of z (rows are X_{-j} vectors)."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return self.intercept + z @ self.coefficients


def conditional_law(model: GaussianModel, j: int) -> ConditionalLaw:
    p = model.dimension
    if not (0 <= j < p):
        raise ValidationError(f"index {j} out of range for p={p}")
    theta_jj = model.precision[j, j]
    if theta_jj <= 0:
        raise ValidationError("nonpositive conditional precision")
    coef = -np.delete(model.precision[j], j) / theta_jj
    variance = max(1.0 / theta_jj, VARIANCE_FLOOR)
    mean_rest = np.delete(model.mean, j)
    intercept = model.mean[j] - coef @ mean_rest
    return ConditionalLaw(coefficients=coef, intercept=float(intercept),
                          variance=float(variance))


def sample_conditional(law: ConditionalLaw, z: np.ndarray, count: int,
                       rng: np.random.Generator,
                       counters: Optional[CostCounters] = None) -> np.ndarray:
    """Draw ``count`` i.i.d. samples of X_j given each row z of X_{-j}.

    Returns shape (count, rows); a nonempty call costs one sampling unit.
    """
    if count < 1:
        raise ValidationError("count must be >= 1")
    mu = law.conditional_mean(z)
    draws = mu[None, :] + np.sqrt(law.variance) * rng.standard_normal((count, mu.shape[0]))
    if counters is not None:
        counters.increment("predict_xj_given_rest", 1)
    return draws


def fit_sample_gaussian(x: np.ndarray,
                        counters: Optional[CostCounters] = None) -> GaussianModel:
    """Mean = column means; precision = inverse unbiased sample covariance."""
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    if n <= p:
        raise ValidationError("sample precision needs n > p")
    cov = np.cov(x, rowvar=False, ddof=1)
    try:
        prec = np.linalg.inv(cov)
    except np.linalg.LinAlgError as e:
        raise ValidationError("singular sample covariance") from e
    prec = 0.5 * (prec + prec.T)
    if counters is not None:
        counters.increment("ml_x", 1)
    return GaussianModel(mean=x.mean(axis=0), precision=prec, estimator="sample")


def fit_banded_precision(x: np.ndarray, bandwidth: int,
                         counters: Optional[CostCounters] = None) -> GaussianModel:
    """Modified-Cholesky banded precision: regress each X_j on its <= bandwidth
    predecessors by OLS and assemble T' D^-1 T."""
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    if bandwidth < 0:
        raise ValidationError("bandwidth must be >= 0")
    if n <= bandwidth + 1:
        raise ValidationError("too few rows for the requested bandwidth")
    xc = x - x.mean(axis=0)
    t = np.eye(p)
    d = np.empty(p)
    for j in range(p):
        lo = max(0, j - bandwidth)
        pred = xc[:, lo:j]
        if pred.shape[1] == 0:
            resid = xc[:, j]
        else:
            gram = pred.T @ pred
            if np.linalg.matrix_rank(gram, tol=1e-10 * max(1.0, np.abs(gram).max())) < pred.shape[1]:
                raise ValidationError(f"collinear predecessor block at column {j}")
            phi = np.linalg.solve(gram, pred.T @ xc[:, j])
            t[j, lo:j] = -phi
            resid = xc[:, j] - pred @ phi
        d[j] = np.sum(resid**2) / (n - 1)
        if d[j] <= 0:
            raise ValidationError(f"degenerate residual variance at column {j}")
    prec = t.T @ np.diag(1.0 / d) @ t
    prec = 0.5 * (prec + prec.T)
    if counters is not None:
        counters.increment("ml_x", 1)
    return GaussianModel(mean=x.mean(axis=0), precision=prec, estimator="banded")


# ---------------------------------------------------------------------------
# Graphical lasso


def _lasso_cd(w11: np.ndarray, s12: np.ndarray, lam: float,
              beta0: np.ndarray, max_iter: int = 500, tol: float = 1e-8) -> np.ndarray:
    """Coordinate descent for 0.5 b'W11 b - s12'b + lam ||b||_1."""
    beta = beta0.copy()
    q = beta.shape[0]
    grad_cache = w11 @ beta
    for _ in range(max_iter):
        delta = 0.0
        for k in range(q):
            r = s12[k] - grad_cache[k] + w11[k, k] * beta[k]
            new = np.sign(r) * max(abs(r) - lam, 0.0) / w11[k, k]
            diff = new - beta[k]
            if diff != 0.0:
                grad_cache += diff * w11[:, k]
                beta[k] = new
                delta = max(delta, abs(diff))
        if delta < tol:
            break
    return beta


def glasso_solve(s: np.ndarray, lam: float, max_sweeps: int = 200,
                 tol: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Blockwise coordinate descent on W = Theta^-1 (penalized diagonal).

    Returns (precision, covariance_estimate).  Raises ConvergenceError if the
    sweep budget is exhausted.
    """
    s = np.asarray(s, dtype=float)
    p = s.shape[0]
    w = s + lam * np.eye(p)
    betas = np.zeros((p, p - 1))
    converged = False
    for _ in range(max_sweeps):
        w_old = w.copy()
        for j in range(p):
            idx = np.delete(np.arange(p), j)
            w11 = w[np.ix_(idx, idx)]
            s12 = s[idx, j]
            beta = _lasso_cd(w11, s12, lam, betas[j])
            betas[j] = beta
            w12 = w11 @ beta
            w[idx, j] = w12
            w[j, idx] = w12
        shift = np.abs(w - w_old).max()
        if shift < tol * max(1.0, np.abs(s).max()):
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"graphical lasso did not converge at lambda={lam:g}")
    theta = np.empty((p, p))
    for j in range(p):
        idx = np.delete(np.arange(p), j)
        beta = betas[j]
        theta_jj = 1.0 / (w[j, j] - w[idx, j] @ beta)
        theta[j, j] = theta_jj
        theta[idx, j] = -beta * theta_jj
    theta = 0.5 * (theta + theta.T)
    return theta, w


def glasso_kkt_residual(s: np.ndarray, theta: np.ndarray, lam: float,
                        zero_tol: float = 1e-8) -> float:
    """Max violation of the stationarity conditions at (theta, W = theta^-1)."""
    w = np.linalg.inv(theta)
    grad = s - w
    resid = 0.0
    p = s.shape[0]
    for i in range(p):
        for j in range(p):
            if i == j or abs(theta[i, j]) > zero_tol:
                resid = max(resid, abs(grad[i, j] + lam * np.sign(theta[i, j])))
            else:
                resid = max(resid, max(abs(grad[i, j]) - lam, 0.0))
    return resid


def default_lambda_grid(s: np.ndarray, length: int = 20,
                        min_ratio: float = 1e-6) -> np.ndarray:
    off = np.abs(s - np.diag(np.diag(s)))
    lam_max = max(off.max(), 1e-12)
    return np.geomspace(lam_max, lam_max * min_ratio, length)


def fit_graphical_lasso(x: np.ndarray, lambda_grid: Optional[Sequence[float]] = None,
                        cv_folds: int = 5, seed: int = 0,
                        counters: Optional[CostCounters] = None) -> GaussianModel:
    """Graphical lasso with penalty chosen by K-fold held-out Gaussian log-likelihood."""
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    if cv_folds < 2:
        raise ValidationError("cv_folds must be >= 2")
    s_full = np.cov(x, rowvar=False, ddof=1)
    if lambda_grid is None:
        grid = default_lambda_grid(s_full)
    else:
        grid = np.asarray(list(lambda_grid), dtype=float)
        if grid.size == 0:
            raise ValidationError("lambda grid must be nonempty")
    rng = np.random.default_rng(seed)
    folds = np.array_split(rng.permutation(n), cv_folds)
    scores = np.zeros(grid.size)
    for fold in folds:
        mask = np.ones(n, dtype=bool)
        mask[fold] = False
        xtr, xte = x[mask], x[fold]
        s_tr = np.cov(xtr, rowvar=False, ddof=1)
        mu_tr = xtr.mean(axis=0)
        xc = xte - mu_tr
        s_te = (xc.T @ xc) / max(len(fold) - 1, 1)
        for g, lam in enumerate(grid):
            theta, _ = glasso_solve(s_tr, lam)
            sign, logdet = np.linalg.slogdet(theta)
            if sign <= 0:
                scores[g] = -np.inf
                continue
            scores[g] += logdet - float(np.sum(s_te * theta))
    best = grid[int(np.argmax(scores))]
    theta, _ = glasso_solve(s_full, best)
    if counters is not None:
        counters.increment("ml_x", 1)
    model = GaussianModel(mean=x.mean(axis=0), precision=theta, estimator="glasso")
    object.__setattr__(model, "selected_lambda", float(best))
    return model


def oracle_gaussian(mean: np.ndarray, covariance: np.ndarray) -> GaussianModel:
    """Wrap a known true law given as (mean, covariance)."""
    prec = np.linalg.inv(np.asarray(covariance, dtype=float))
    return GaussianModel(mean=np.asarray(mean, dtype=float),
                         precision=0.5 * (prec + prec.T), estimator="oracle")


def chi2_gaussian(mu: float, nu: float, sigma2: float) -> float:
    """Chi-square divergence between N(mu, sigma2) and N(nu, sigma2)."""
    if sigma2 <= 0:
        raise ValidationError("sigma2 must be positive")
    return float(np.expm1((mu - nu) ** 2 / sigma2))


def ar1_covariance(p: int, rho: float) -> np.ndarray:
    """Sigma_ij = rho^|i-j|."""
    if abs(rho) >= 1:
        raise ValidationError("|rho| must be < 1")
    if p < 1:
        raise ValidationError("p must be >= 1")
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])
