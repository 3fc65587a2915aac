"""Tests for the equivalence-verification suite.

The affine identity between the HRT MSE statistic and the tower-PCM
statistic is exact algebra, so it is checked at machine precision against
instances spanning tiny and moderate sample sizes.  The decision identity is
exact under shared resample streams.  Diagnostics are checked against the
oracle case (exactly zero) and a hand-computable chi-square perturbation.
"""

import numpy as np
import pytest

from citlab.core import ValidationError, split_data, substream
from citlab.equivalence import (EquivalenceReport, assumption_diagnostics,
                                check_decision_identity, check_hrt_identity,
                                generate_linear_model, linear_model_diagnostics,
                                linear_model_gaussian, linear_model_replicate,
                                linear_model_suite)
from citlab.gaussian import ConditionalLaw, conditional_law
from citlab.learners import LearnerConfig
from citlab.methods import GaussianSpec, learn_step

from conftest import random_linear_dataset


def fitted_instance(seed, n=100, p=4, beta=0.0, ridge=0.0):
    rng = np.random.default_rng(seed)
    ds, eta, _ = random_linear_dataset(rng, n=n, p=p, beta=beta)
    split = split_data(ds, 0.5, seed)
    kind = "ridge" if ridge > 0 else "ols"
    if len(split.d2_indices) > p:
        gspec = GaussianSpec(kind="sample")
    else:
        # tiny instances: the identity holds for any predictor law, use the
        # generative one rather than an unfittable sample precision
        gspec = GaussianSpec(kind="oracle",
                             oracle_model=linear_model_gaussian(eta))
    shared = learn_step(ds, split, LearnerConfig(kind=kind, ridge_lambda=ridge),
                        gspec, seed=seed)
    return ds, split, shared


class TestHrtIdentity:
    def test_exact_on_random_instances(self):
        # exact algebra: the error should sit at float rounding level
        for seed, n in [(0, 8), (1, 50), (2, 500), (3, 50)]:
            ds, split, shared = fitted_instance(seed, n=n, ridge=0.5)
            for j in range(ds.n_predictors):
                err = check_hrt_identity(ds, split, shared, j, b=10, seed=seed)
                assert err < 1e-10

    def test_tiny_sample_degenerate_variance_branch(self):
        # n=2 total rows per half: the product residual variance can vanish,
        # the identity must still hold through the fallback branch
        ds, split, shared = fitted_instance(7, n=4, p=3, ridge=1.0)
        for j in range(3):
            assert check_hrt_identity(ds, split, shared, j, b=5, seed=7) < 1e-10

    def test_nonzero_signal_instances(self):
        ds, split, shared = fitted_instance(11, n=120, beta=0.8)
        for j in range(ds.n_predictors):
            assert check_hrt_identity(ds, split, shared, j, b=15, seed=11) < 1e-10


class TestDecisionIdentity:
    @pytest.mark.parametrize("seed", range(8))
    def test_agreement_under_shared_draws(self, seed):
        beta = 0.0 if seed % 2 == 0 else 0.5
        ds, split, shared = fitted_instance(seed, n=160, beta=beta)
        assert check_decision_identity(ds, split, shared, j=0, b_hrt=99,
                                       seed=seed)

    def test_agreement_across_variables(self):
        ds, split, shared = fitted_instance(21, n=200, p=5, beta=0.3)
        for j in range(5):
            assert check_decision_identity(ds, split, shared, j=j, b_hrt=59,
                                           seed=21)


class TestLinearModelPieces:
    def test_linear_model_gaussian_conditional_law(self, rng):
        # the implied conditional law of coordinate 0 must be exactly
        # (eta, unit variance): that is the generative model
        eta = rng.normal(0, 0.5, 6)
        law = conditional_law(linear_model_gaussian(eta), 0)
        assert np.allclose(law.coefficients, eta, atol=1e-12)
        assert abs(law.variance - 1.0) < 1e-12
        assert abs(law.intercept) < 1e-12

    def test_linear_model_gaussian_marginal_covariance(self, rng):
        # covariance of (X_j, Z) is [[1 + eta'eta, eta'], [eta, I]]
        eta = rng.normal(0, 0.5, 4)
        model = linear_model_gaussian(eta)
        cov = np.linalg.inv(model.precision)
        assert abs(cov[0, 0] - (1 + eta @ eta)) < 1e-10
        assert np.allclose(cov[0, 1:], eta, atol=1e-10)
        assert np.allclose(cov[1:, 1:], np.eye(4), atol=1e-10)

    def test_generate_linear_model_moments(self):
        eta = np.array([0.5, -0.3])
        gamma = np.array([1.0, 0.2])
        ds = generate_linear_model(40000, eta, gamma, 0.7,
                                   np.random.default_rng(0))
        # Var(X_j) = 1 + |eta|^2, E[X_j Z_k] = eta_k
        assert abs(np.var(ds.x[:, 0]) - (1 + eta @ eta)) < 0.05
        assert abs(np.mean(ds.x[:, 0] * ds.x[:, 1]) - eta[0]) < 0.05
        resid = ds.y - 0.7 * ds.x[:, 0] - ds.x[:, 1:] @ gamma
        assert abs(np.var(resid) - 1.0) < 0.05

    def test_replicate_returns_consistent_fields(self):
        out = linear_model_replicate(300, np.array([0.5]), np.array([1.0]),
                                     seed=3)
        assert set(out) == {"t_tpcm", "reject_tpcm", "reject_hrt", "agree"}
        assert out["agree"] == (out["reject_tpcm"] == out["reject_hrt"])

    def test_replicate_detects_strong_signal(self):
        out = linear_model_replicate(1500, np.array([0.5, -0.2]),
                                     np.array([1.0, 0.5]), seed=5, beta=0.5)
        assert out["reject_tpcm"] and out["reject_hrt"]


class TestLinearModelSuite:
    def test_light_run_shapes_and_level(self):
        eta = np.array([0.6, -0.4])
        gamma = np.array([1.0, 0.8])
        reports = linear_model_suite([400], reps=60, eta=eta, gamma=gamma,
                                     seed=9)
        assert len(reports) == 1
        rep = reports[0]
        assert rep.n == 400 and rep.replicates == 60
        # null level: binomial(60, ~0.05) stays comfortably below 0.20
        assert rep.empirical_level <= 0.20
        assert 0.0 <= rep.decision_agreement_rate <= 1.0
        assert rep.ks_pvalue > 0.001
        d = rep.to_dict()
        assert d["n"] == 400 and "assumption_terms" in d

    def test_suite_attaches_diagnostics(self):
        reports = linear_model_suite([300], reps=5, eta=np.array([0.5]),
                                     gamma=np.array([1.0]), seed=2,
                                     diagnostics_reps=3, diagnostics_b=50)
        terms = reports[0].assumption_terms
        assert set(terms) == {"chi2_divergence", "reg_func_weighted",
                              "reg_func_mse", "doubly_robust_product"}
        assert all(v >= 0 for v in terms.values())


class TestAssumptionDiagnostics:
    def test_oracle_nuisances_exactly_zero(self):
        out = linear_model_diagnostics(400, np.array([0.5, -0.3]),
                                       np.array([1.0, 0.2]), seed=1, b=100,
                                       oracle=True)
        assert out == {"chi2_divergence": 0.0, "reg_func_weighted": 0.0,
                       "reg_func_mse": 0.0, "doubly_robust_product": 0.0}

    def test_fitted_nuisances_small_but_nonzero(self):
        out = linear_model_diagnostics(2000, np.array([0.5]),
                                       np.array([1.0]), seed=4, b=100)
        assert out["chi2_divergence"] > 0
        assert out["reg_func_mse"] > 0
        assert out["chi2_divergence"] < 0.5
        assert out["reg_func_mse"] < 0.1

    def test_chi2_grows_with_eta_error(self):
        # a linear-in-x_j oracle mean makes the fluctuation weights constant,
        # so the chi-square term reduces to mean(exp(d^2(z'u)^2) - 1):
        # monotone in the size of the coefficient error d
        eta = np.array([0.5, -0.3])
        gamma = np.array([1.0, 0.2])
        vals = []
        for d in (0.05, 0.2, 0.5):
            out = linear_model_diagnostics(
                500, eta, gamma, seed=8, b=80, beta=0.5, oracle=True,
                eta_hat_override=eta + np.array([d, 0.0]))
            vals.append(out["chi2_divergence"])
        assert vals[0] < vals[1] < vals[2]

    def test_chi2_closed_form_hand_check(self):
        # one-dimensional z, oracle mean linear in x_j with slope beta: the
        # weights E[xi^2 | z] = beta^2 are constant, so the weighted term
        # equals the plain average E_z[exp(d^2 z^2) - 1] up to MC noise
        eta = np.array([0.4])
        gamma = np.array([1.0])
        d, beta = 0.3, 0.7
        out = linear_model_diagnostics(
            3000, eta, gamma, seed=12, b=400, beta=beta, oracle=True,
            eta_hat_override=eta + np.array([d]))
        rng = substream(12, "linmod")
        ds = generate_linear_model(6000, eta, gamma, beta, rng)
        split = split_data(ds, 0.5, 12)
        z = ds.x[split.d1_indices][:, 1:]
        expected = float(np.mean(np.expm1(d**2 * z[:, 0] ** 2)))
        assert out["chi2_divergence"] == pytest.approx(expected, rel=0.1)

    def test_mismatched_variance_rejected(self):
        ds = generate_linear_model(200, np.array([0.5]), np.array([1.0]), 0.0,
                                   np.random.default_rng(0))
        split = split_data(ds, 0.5, 0)
        law1 = ConditionalLaw(coefficients=np.array([0.5]), intercept=0.0,
                              variance=1.0)
        law2 = ConditionalLaw(coefficients=np.array([0.5]), intercept=0.0,
                              variance=1.5)
        from citlab.learners import OracleRegressionFit
        m = OracleRegressionFit(lambda x: x[:, 1], input_dimension=2,
                                training_rows=100, counter_tag="ml_y_given_x")
        with pytest.raises(ValidationError, match="matched Gaussian"):
            assumption_diagnostics(ds, split, m, law1, law2,
                                   lambda z: z[:, 0], j=0, b=20)

    def test_terms_decay_with_sample_size(self):
        # medians over a few replicates: each fitted-model term should shrink
        # from n=300 to n=3000 (parametric-rate nuisance estimation)
        eta = np.array([0.5, -0.3])
        gamma = np.array([1.0, 0.2])
        meds = {}
        for n in (300, 3000):
            acc = {}
            for r in range(9):
                out = linear_model_diagnostics(n, eta, gamma, seed=100 + r,
                                               b=80)
                for k, v in out.items():
                    acc.setdefault(k, []).append(v)
            meds[n] = {k: np.median(v) for k, v in acc.items()}
        for k in ("chi2_divergence", "reg_func_weighted", "reg_func_mse"):
            assert meds[3000][k] < meds[300][k]


class TestReport:
    def test_defaults_and_serialization(self):
        rep = EquivalenceReport()
        d = rep.to_dict()
        assert np.isnan(d["identity_max_abs_error"])
        assert d["replicates"] == 0
