"""Monte Carlo benchmark harness: additive-model DGP, replicate runner,
parameter-grid sweeps, FWER/power/timing metrics, CSV/JSON tables, SVG plots.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (CostCounters, Dataset, ValidationError, split_data,
                   substream)
from .gaussian import ar1_covariance, oracle_gaussian
from .learners import LearnerConfig
from .methods import (GaussianSpec, TestConfig, hrt_test, learn_step,
                      oracle_gcm_test, tgcm_test, tpcm_test, vpcm_test)

DEFAULT_GRID = {
    "n": [800, 1000, 1200, 1400, 1600],
    "p": [30, 40, 50, 60, 70],
    "s": [4, 8, 12, 16, 20],
    "rho": [0.2, 0.35, 0.5, 0.65, 0.8],
    "theta": [0.15, 0.2, 0.25, 0.3, 0.35],
}

KNOWN_METHODS = ("tpcm", "vpcm", "hrt", "oracle_gcm", "tgcm")


@dataclass(frozen=True)
class SimConfig:
    """One simulation setting of the sparse additive-model benchmark."""

    n: int = 1200
    p: int = 50
    s: int = 12
    rho: float = 0.5
    theta: float = 0.25
    alpha: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.s <= self.p):
            raise ValidationError("active set size must lie in [0, p]")
        if not (-1.0 < self.rho < 1.0):
            raise ValidationError("rho must lie in (-1, 1)")


@dataclass(frozen=True)
class ReplicateResult:
    method: str
    replicate: int
    pvalues: np.ndarray
    rejections: np.ndarray
    truth: np.ndarray
    wall_time: float
    counters: dict = field(default_factory=dict)
    shared_fit: bool = False


def make_true_mean(active: np.ndarray, theta: float):
    """The sparse additive mean: quadratic bumps on odd coordinates (1-based)
    of the active set, negative cosines on the even ones, each scaled by theta."""
    active = np.asarray(active, dtype=int)
    odd = active[(active + 1) % 2 == 1]   # odd 1-based index
    even = active[(active + 1) % 2 == 0]

    def mean_fn(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[0])
        for j in odd:
            out += (x[:, j] - 0.3) ** 2 * theta / np.sqrt(2.0)
        for j in even:
            out += -np.cos(x[:, j]) * theta
        return out

    return mean_fn


def generate_gam_dgp(config: SimConfig, replicate_seed: int):
    """Draw one dataset: AR(1) Gaussian predictors, sparse additive mean,
    unit Gaussian noise.  The active set is redrawn per replicate."""
    rng = substream(replicate_seed, "dgp")
    cov = ar1_covariance(config.p, config.rho)
    chol = np.linalg.cholesky(cov)
    x = rng.standard_normal((config.n, config.p)) @ chol.T
    active = rng.choice(config.p, size=config.s, replace=False)
    active.sort()
    mean_fn = make_true_mean(active, config.theta)
    y = mean_fn(x) + rng.standard_normal(config.n)
    truth = np.zeros(config.p, dtype=bool)
    truth[active] = True
    return Dataset(x=x, y=y), truth, mean_fn


def default_learner_config(basis_size: int = 10,
                           grid_points: int = 20) -> LearnerConfig:
    return LearnerConfig(kind="additive_spline", spline_basis_size=basis_size,
                         spline_lambda_grid=tuple(np.logspace(-4, 4, grid_points)))


def run_replicate(config: SimConfig, methods, replicate: int,
                  test_config: TestConfig | None = None,
                  learner_config: LearnerConfig | None = None,
                  gaussian_spec: GaussianSpec | None = None,
                  vpcm_bandwidth: int | None = 1) -> list[ReplicateResult]:
    """Run the requested methods on one fresh dataset.

    When tPCM and HRT are both requested they share a single learning step
    (one mean fit, one Gaussian fit), charged to the tPCM counters; the HRT
    result is flagged ``shared_fit``.
    """
    methods = [m.lower() for m in methods]
    unknown = [m for m in methods if m not in KNOWN_METHODS]
    if unknown:
        raise ValidationError(f"unknown methods {unknown}; choose from {KNOWN_METHODS}")
    test_config = test_config or TestConfig(alpha=config.alpha)
    learner_config = learner_config or default_learner_config()
    gaussian_spec = gaussian_spec or GaussianSpec(kind="banded", bandwidth=1)
    rep_seed = int(substream(config.seed, "replicate", replicate).integers(2**63))
    dataset, truth, mean_fn = generate_gam_dgp(config, rep_seed)
    level = config.alpha / config.p  # Bonferroni across the p variables
    results: list[ReplicateResult] = []

    shared = None
    shared_counters = None
    share = "tpcm" in methods and "hrt" in methods
    if share or "tpcm" in methods or "hrt" in methods:
        split = split_data(dataset, test_config.train_proportion_tpcm_hrt,
                           rep_seed)

    def record(method, outcomes, wall, counters, shared_fit=False):
        pvals = np.array([o.pvalue for o in outcomes])
        results.append(ReplicateResult(
            method=method, replicate=replicate, pvalues=pvals,
            rejections=pvals <= level, truth=truth, wall_time=wall,
            counters=counters.snapshot(), shared_fit=shared_fit))

    for method in methods:
        counters = CostCounters()
        start = time.perf_counter()
        if method == "tpcm":
            if share and shared is None:
                shared = learn_step(dataset, split, learner_config,
                                    gaussian_spec, counters, seed=rep_seed)
                shared_counters = counters
            outcomes = tpcm_test(dataset, split, learner_config, gaussian_spec,
                                 test_config, seed=rep_seed, shared=shared,
                                 counters=counters)
        elif method == "hrt":
            if share:
                if shared is None:
                    shared_counters = CostCounters()
                    shared = learn_step(dataset, split, learner_config,
                                        gaussian_spec, shared_counters,
                                        seed=rep_seed)
                outcomes = hrt_test(dataset, split, learner_config,
                                    gaussian_spec, test_config, seed=rep_seed,
                                    shared=shared, counters=counters)
            else:
                outcomes = hrt_test(dataset, split, learner_config,
                                    gaussian_spec, test_config, seed=rep_seed,
                                    counters=counters)
        elif method == "vpcm":
            vsplit = split_data(dataset, test_config.train_proportion_pcm,
                                rep_seed)
            outcomes = vpcm_test(dataset, vsplit, learner_config, test_config,
                                 seed=rep_seed, banded_bandwidth=vpcm_bandwidth,
                                 counters=counters)
        elif method == "oracle_gcm":
            true_model = oracle_gaussian(np.zeros(config.p),
                                         ar1_covariance(config.p, config.rho))
            outcomes = oracle_gcm_test(dataset, mean_fn, true_model,
                                       b=test_config.b_tpcm, seed=rep_seed,
                                       sided=test_config.gcm_sided,
                                       counters=counters)
        elif method == "tgcm":
            outcomes = tgcm_test(dataset, learner_config, gaussian_spec,
                                 folds=test_config.cross_fit_folds,
                                 b=test_config.b_tpcm, seed=rep_seed,
                                 sided=test_config.gcm_sided, counters=counters)
        wall = time.perf_counter() - start
        record(method, outcomes, wall, counters,
               shared_fit=(method == "hrt" and share))
    return results


def _replicate_worker(args):
    (config, methods, replicate, test_config, learner_config, gaussian_spec,
     vpcm_bandwidth) = args
    return run_replicate(config, methods, replicate, test_config,
                         learner_config, gaussian_spec, vpcm_bandwidth)


def resolve_workers(workers: int | None) -> int:
    """Explicit argument wins; else the CITLAB_WORKERS environment variable;
    else 1."""
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("CITLAB_WORKERS")
    if env:
        return max(1, int(env))
    return 1


def run_setting(config: SimConfig, methods, reps: int,
                test_config: TestConfig | None = None,
                learner_config: LearnerConfig | None = None,
                gaussian_spec: GaussianSpec | None = None,
                vpcm_bandwidth: int | None = 1,
                workers: int | None = None) -> list[ReplicateResult]:
    """All replicates of one setting, optionally over a process pool.

    Replicate seeds come from per-replicate substreams, so results are
    identical for any worker count.
    """
    workers = resolve_workers(workers)
    tasks = [(config, tuple(methods), r, test_config, learner_config,
              gaussian_spec, vpcm_bandwidth) for r in range(reps)]
    out: list[ReplicateResult] = []
    if workers == 1:
        for t in tasks:
            out.extend(_replicate_worker(t))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(_replicate_worker, tasks):
                out.extend(chunk)
    return out


def compute_metrics(results: list[ReplicateResult], setting: str = "",
                    vary: str = "", value: float = float("nan")) -> list[dict]:
    """Aggregate replicate results into long-format metric rows.

    FWER: share of replicates with at least one false rejection.  Power:
    mean fraction of truly active variables rejected (only when the truth
    mask is nonempty).  Seconds: mean replicate wall time.  Each row carries
    a Monte Carlo standard error.
    """
    rows = []
    methods = sorted({r.method for r in results})
    for method in methods:
        group = [r for r in results if r.method == method]
        reps = len(group)
        false_any = np.array([bool(np.any(r.rejections & ~r.truth)) for r in group])
        fwer = float(np.mean(false_any))
        rows.append({"setting": setting, "vary": vary, "value": value,
                     "method": method, "metric": "fwer", "estimate": fwer,
                     "mc_se": float(np.sqrt(fwer * (1 - fwer) / reps))})
        if all(r.truth.any() for r in group):
            frac = np.array([np.mean(r.rejections[r.truth]) for r in group])
            rows.append({"setting": setting, "vary": vary, "value": value,
                         "method": method, "metric": "power",
                         "estimate": float(np.mean(frac)),
                         "mc_se": float(np.std(frac, ddof=1) / np.sqrt(reps))
                         if reps > 1 else 0.0})
        secs = np.array([r.wall_time for r in group])
        rows.append({"setting": setting, "vary": vary, "value": value,
                     "method": method, "metric": "seconds",
                     "estimate": float(np.mean(secs)),
                     "mc_se": float(np.std(secs, ddof=1) / np.sqrt(reps))
                     if reps > 1 else 0.0})
    return rows


def run_grid(base: SimConfig, vary: str, values, methods, reps: int,
             test_config: TestConfig | None = None,
             learner_config: LearnerConfig | None = None,
             gaussian_spec: GaussianSpec | None = None,
             vpcm_bandwidth: int | None = 1,
             workers: int | None = None,
             hrt_default_only: bool = False) -> list[dict]:
    """Sweep one parameter of the benchmark grid, holding the rest at base.

    With ``hrt_default_only`` the HRT runs only at the base value of the
    varied parameter (its resample budget makes full sweeps expensive).
    """
    if vary not in DEFAULT_GRID:
        raise ValidationError(f"vary must be one of {sorted(DEFAULT_GRID)}")
    rows = []
    for value in values:
        config = replace(base, **{vary: type(getattr(base, vary))(value)})
        use = list(methods)
        if hrt_default_only and "hrt" in use and getattr(base, vary) != getattr(config, vary):
            use.remove("hrt")
        results = run_setting(config, use, reps, test_config, learner_config,
                              gaussian_spec, vpcm_bandwidth, workers)
        rows.extend(compute_metrics(results, setting=f"{vary}={value}",
                                    vary=vary, value=float(value)))
    return rows


def timing_sweep(p_values=(100, 200), n: int = 2500, seed: int = 0,
                 learner_config: LearnerConfig | None = None,
                 gaussian_spec: GaussianSpec | None = None,
                 alpha: float = 0.05, b_tpcm: int = 25,
                 methods=("tpcm", "vpcm", "hrt")) -> list[dict]:
    """Single-replicate wall-time comparison of tPCM against its competitors
    at the HRT's recommended resample budget B = 5 p / alpha, serial
    execution."""
    rows = []
    learner_config = learner_config or default_learner_config()
    gaussian_spec = gaussian_spec or GaussianSpec(kind="banded", bandwidth=1)
    for p in p_values:
        b_hrt = int(round(5 * p / alpha))
        config = SimConfig(n=n, p=int(p), s=min(12, p), seed=seed)
        tc = TestConfig(alpha=alpha, b_tpcm=b_tpcm, b_hrt=b_hrt)
        results = run_replicate(config, list(methods), 0, tc, learner_config,
                                gaussian_spec)
        for r in results:
            rows.append({"setting": f"p={p}", "vary": "p", "value": float(p),
                         "method": r.method, "metric": "seconds",
                         "estimate": r.wall_time, "mc_se": 0.0,
                         "b_hrt": b_hrt if r.method == "hrt" else b_tpcm})
    return rows


def emit_results(rows: list[dict], path: str, fmt: str = "csv") -> None:
    """Write metric rows as CSV or JSON."""
    import pandas as pd

    if fmt == "csv":
        pd.DataFrame(rows).to_csv(path, index=False)
    elif fmt == "json":
        with open(path, "w") as fh:
            json.dump(rows, fh, indent=2)
    else:
        raise ValidationError("format must be csv or json")


def emit_plots(rows: list[dict], out_dir: str) -> list[str]:
    """One SVG per (varied parameter, metric): estimate vs value, a line per
    method, error bars at plus/minus two Monte Carlo standard errors."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    written = []
    keys = sorted({(r["vary"], r["metric"]) for r in rows if r["vary"]})
    for vary, metric in keys:
        fig, ax = plt.subplots(figsize=(5.5, 4))
        sub = [r for r in rows if r["vary"] == vary and r["metric"] == metric]
        for method in sorted({r["method"] for r in sub}):
            pts = sorted((r["value"], r["estimate"], r["mc_se"])
                         for r in sub if r["method"] == method)
            xs = [p[0] for p in pts]
            ys = [p[1] for p in pts]
            es = [2 * p[2] for p in pts]
            ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=method)
        ax.set_xlabel(vary)
        ax.set_ylabel(metric)
        ax.legend()
        fig.tight_layout()
        path = os.path.join(out_dir, f"{vary}_{metric}.svg")
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)
    return written
