"""Conditional-independence testing with model-powered randomization tests.

A library and CLI for the tower-accelerated projected covariance measure
(tPCM) and comparator tests (vanilla PCM, holdout randomization test,
generalized covariance measure variants), Gaussian predictor-law estimation,
penalized additive-spline learners, an equivalence-verification suite, and a
Monte Carlo benchmark harness.
"""

__version__ = "0.1.0"

from .core import (CitlabError, CostCounters, Dataset, SplitAssignment,
                   TestOutcome, ValidationError, bonferroni_select,
                   load_dataset_csv, normal_pvalue, save_dataset_csv,
                   split_data, substream)
from .gaussian import (ConditionalLaw, ConvergenceError, GaussianModel,
                       ar1_covariance, chi2_gaussian, conditional_law,
                       fit_banded_precision, fit_graphical_lasso,
                       fit_sample_gaussian, oracle_gaussian,
                       sample_conditional)
from .learners import (FittedRegression, LearnerConfig, SingularityError, fit,
                       predict)
from .methods import (GaussianSpec, LearnedNuisances, TestConfig, gcm_test,
                      hrt_test, learn_step, oracle_gcm_test, rhrt_statistic,
                      tgcm_test, tower_mean, tpcm_test, vpcm_test)
from .equivalence import (EquivalenceReport, assumption_diagnostics,
                          check_decision_identity, check_hrt_identity,
                          linear_model_suite)
from .simbench import (ReplicateResult, SimConfig, compute_metrics,
                       generate_gam_dgp, run_grid, run_replicate, run_setting,
                       timing_sweep)

__all__ = [name for name in dir() if not name.startswith("_")]
