"""Command-line interface.

Subcommands:
  test        run a conditional-independence test on a CSV dataset
  simulate    run the Monte Carlo benchmark over a parameter grid
  equivalence run the equivalence-verification suite
  report      summarize benchmark output and optionally render plots

Every run that writes outputs also writes a manifest (config hash, seed,
library versions) next to them, so results can be reproduced.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .core import (CitlabError, CostCounters, ValidationError,
                   bonferroni_select, load_dataset_csv, split_data)
from .learners import LearnerConfig
from .methods import (GaussianSpec, TestConfig, hrt_test, tgcm_test,
                      tpcm_test, vpcm_test)
from . import equivalence as eqmod
from . import simbench

log = logging.getLogger("citlab")

RUN_CONFIG_KEYS = {
    "alpha", "b_tpcm", "b_hrt", "train_proportion_tpcm_hrt",
    "train_proportion_pcm", "gcm_sided", "cross_fit_folds", "seed",
    "variables", "learner", "gaussian", "vpcm_bandwidth",
}
LEARNER_KEYS = {"kind", "ridge_lambda", "spline_basis_size",
                "spline_lambda_grid", "spline_selection"}
GAUSSIAN_KEYS = {"kind", "bandwidth", "lambda_grid", "cv_folds"}


def _check_keys(obj: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ValidationError(
            f"unknown key(s) {unknown} in {where}; allowed: {sorted(allowed)}")


def load_run_config(path: str | None) -> dict:
    """Parse and validate the run-configuration JSON; unknown keys are errors."""
    if path is None:
        return {}
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ValidationError("run config must be a JSON object")
    _check_keys(raw, RUN_CONFIG_KEYS, "run config")
    if "learner" in raw:
        _check_keys(raw["learner"], LEARNER_KEYS, "run config 'learner'")
    if "gaussian" in raw:
        _check_keys(raw["gaussian"], GAUSSIAN_KEYS, "run config 'gaussian'")
    return raw


def build_configs(raw: dict):
    test_kwargs = {k: raw[k] for k in
                   ("alpha", "b_tpcm", "b_hrt", "train_proportion_tpcm_hrt",
                    "train_proportion_pcm", "gcm_sided", "cross_fit_folds")
                   if k in raw}
    test_config = TestConfig(**test_kwargs)
    lr = dict(raw.get("learner", {}))
    if "spline_lambda_grid" in lr:
        lr["spline_lambda_grid"] = tuple(float(v) for v in lr["spline_lambda_grid"])
    learner_config = (LearnerConfig(**lr) if lr
                      else simbench.default_learner_config())
    gr = dict(raw.get("gaussian", {}))
    if "lambda_grid" in gr:
        gr["lambda_grid"] = tuple(float(v) for v in gr["lambda_grid"])
    gaussian_spec = (GaussianSpec(**gr) if gr
                     else GaussianSpec(kind="banded", bandwidth=1))
    return test_config, learner_config, gaussian_spec


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_manifest(out_path: str, payload: dict, seed: int) -> str:
    import scipy

    manifest = {
        "config_hash": config_hash(payload),
        "config": payload,
        "seed": seed,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "versions": {
            "citlab": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    target = out_path + ".manifest.json"
    with open(target, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return target


def predicted_counters(method: str, p: int, test_config: TestConfig) -> dict:
    """Cost-accounting prediction for a run, without doing any work."""
    zero = dict.fromkeys(CostCounters.FIELDS, 0)
    if method == "tpcm":
        zero.update(ml_y_given_x=1, ml_x=1,
                    predict_xj_given_rest=p * test_config.b_tpcm,
                    predict_y_given_x=p * test_config.b_tpcm)
    elif method == "hrt":
        zero.update(ml_y_given_x=1, ml_x=1,
                    predict_xj_given_rest=p * test_config.b_hrt,
                    predict_y_given_x=p * test_config.b_hrt)
    elif method == "vpcm":
        zero.update(ml_y_given_x=1 + p, ml_xj_given_rest=2 * p,
                    predict_xj_given_rest=p, predict_y_given_x=p)
    elif method == "oracle_gcm":
        zero.update(predict_xj_given_rest=p * test_config.b_tpcm,
                    predict_y_given_x=p * test_config.b_tpcm)
    elif method == "tgcm":
        k = test_config.cross_fit_folds
        zero.update(ml_y_given_x=k, ml_x=k,
                    predict_xj_given_rest=k * p * test_config.b_tpcm,
                    predict_y_given_x=k * p * test_config.b_tpcm)
    return zero


def cmd_test(args) -> int:
    raw = load_run_config(args.config)
    test_config, learner_config, gaussian_spec = build_configs(raw)
    seed = int(raw.get("seed", args.seed))
    dataset = load_dataset_csv(args.data)
    p = dataset.n_predictors
    method = args.method.lower()
    if method not in simbench.KNOWN_METHODS:
        raise ValidationError(
            f"unknown method {args.method!r}; choose from {simbench.KNOWN_METHODS}")

    if args.dry_run:
        plan = {
            "method": method,
            "rows": dataset.n_rows,
            "predictors": p,
            "predicted_counters": predicted_counters(method, p, test_config),
        }
        print(json.dumps(plan, indent=2))
        return 0

    variables = raw.get("variables")
    counters = CostCounters()
    if method == "tpcm":
        split = split_data(dataset, test_config.train_proportion_tpcm_hrt, seed)
        outcomes = tpcm_test(dataset, split, learner_config, gaussian_spec,
                             test_config, seed=seed, variables=variables,
                             counters=counters)
    elif method == "hrt":
        split = split_data(dataset, test_config.train_proportion_tpcm_hrt, seed)
        outcomes = hrt_test(dataset, split, learner_config, gaussian_spec,
                            test_config, seed=seed, variables=variables,
                            counters=counters)
    elif method == "vpcm":
        split = split_data(dataset, test_config.train_proportion_pcm, seed)
        outcomes = vpcm_test(dataset, split, learner_config, test_config,
                             seed=seed, variables=variables,
                             banded_bandwidth=raw.get("vpcm_bandwidth"),
                             counters=counters)
    elif method == "tgcm":
        outcomes = tgcm_test(dataset, learner_config, gaussian_spec,
                             folds=test_config.cross_fit_folds,
                             b=test_config.b_tpcm, seed=seed,
                             sided=test_config.gcm_sided, counters=counters)
    else:
        raise ValidationError(
            "oracle_gcm needs the true mean and law; it is only available "
            "through the library and the simulation benchmark")

    pvals = np.array([o.pvalue for o in outcomes])
    reject = bonferroni_select(pvals, test_config.alpha)
    import pandas as pd

    table = pd.DataFrame({
        "variable": [o.variable_index for o in outcomes],
        "method": [o.method for o in outcomes],
        "statistic": [o.statistic for o in outcomes],
        "pvalue": pvals,
        "reject": reject.astype(int),
        "seconds": [o.wall_time for o in outcomes],
    })
    for fld, val in counters.snapshot().items():
        table[fld] = val
    table.to_csv(args.out, index=False)
    write_manifest(args.out, {"command": "test", "method": method,
                              "data": os.path.abspath(args.data),
                              "config": raw}, seed)
    log.info("wrote %s (%d variables, %d rejections)", args.out, len(table),
             int(reject.sum()))
    return 0


def cmd_simulate(args) -> int:
    if args.grid:
        with open(args.grid) as fh:
            grid_raw = json.load(fh)
        _check_keys(grid_raw, {"base", "vary", "values", "methods",
                               "run_config", "hrt_default_only",
                               "vpcm_bandwidth"}, "grid file")
    else:
        grid_raw = {}
    base_kwargs = grid_raw.get("base", {})
    _check_keys(base_kwargs, {f.name for f in dataclasses.fields(simbench.SimConfig)},
                "grid 'base'")
    base = simbench.SimConfig(seed=args.seed, **{k: v for k, v in
                                                 base_kwargs.items()
                                                 if k != "seed"})
    vary = grid_raw.get("vary", "n")
    values = grid_raw.get("values", simbench.DEFAULT_GRID[vary])
    methods = grid_raw.get("methods", ["tpcm", "vpcm", "tgcm"])
    test_config, learner_config, gaussian_spec = build_configs(
        grid_raw.get("run_config", {}))
    os.makedirs(args.out, exist_ok=True)
    rows = simbench.run_grid(
        base, vary, values, methods, reps=args.reps,
        test_config=test_config, learner_config=learner_config,
        gaussian_spec=gaussian_spec,
        vpcm_bandwidth=grid_raw.get("vpcm_bandwidth", 1),
        workers=args.workers,
        hrt_default_only=bool(grid_raw.get("hrt_default_only", False)))
    out_csv = os.path.join(args.out, "results.csv")
    simbench.emit_results(rows, out_csv, "csv")
    write_manifest(out_csv, {"command": "simulate", "grid": grid_raw,
                             "reps": args.reps}, args.seed)
    log.info("wrote %s (%d rows)", out_csv, len(rows))
    return 0


def cmd_equivalence(args) -> int:
    n_grid = [int(v) for v in args.n.split(",")]
    if args.suite != "linear":
        raise ValidationError("the only implemented suite is 'linear'")
    q = args.p - 1
    rng = np.random.default_rng(args.seed)
    eta = rng.normal(0.0, 0.5, q)
    gamma = rng.normal(0.0, 1.0, q)
    reports = eqmod.linear_model_suite(
        n_grid, reps=args.reps, eta=eta, gamma=gamma, seed=args.seed,
        diagnostics_reps=args.diagnostics_reps)
    # exact-identity checks on a fresh desk-scale instance per n
    payload = []
    for rep in reports:
        dataset = eqmod.generate_linear_model(
            2 * rep.n, eta, gamma, 0.0, np.random.default_rng(args.seed + rep.n))
        split = split_data(dataset, 0.5, args.seed)
        shared, _ = eqmod._fit_linear_model_nuisances(dataset, split)
        err = eqmod.check_hrt_identity(dataset, split, shared, j=0,
                                       seed=args.seed)
        payload.append({**rep.to_dict(), "identity_max_abs_error": err})
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=2)
    write_manifest(args.out, {"command": "equivalence", "suite": args.suite,
                              "n": n_grid, "reps": args.reps}, args.seed)
    log.info("wrote %s", args.out)
    return 0


def cmd_report(args) -> int:
    import pandas as pd

    src = os.path.join(args.input, "results.csv")
    if not os.path.exists(src):
        raise ValidationError(f"no results.csv under {args.input}")
    frame = pd.read_csv(src)
    needed = {"setting", "vary", "value", "method", "metric", "estimate", "mc_se"}
    missing = needed - set(frame.columns)
    if missing:
        raise ValidationError(f"results.csv missing columns {sorted(missing)}")
    summary = (frame.pivot_table(index=["vary", "value", "method"],
                                 columns="metric", values="estimate")
               .reset_index())
    print(summary.to_string(index=False))
    if args.plots:
        rows = frame.to_dict("records")
        written = simbench.emit_plots(rows, os.path.join(args.input, "plots"))
        for path in written:
            log.info("wrote %s", path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="citlab",
        description="Conditional-independence testing with model-powered "
                    "randomization tests")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="test one dataset")
    t.add_argument("--data", required=True, help="CSV with predictors and a 'y' column")
    t.add_argument("--method", required=True,
                   help="tpcm | vpcm | hrt | tgcm")
    t.add_argument("--config", default=None, help="run-configuration JSON")
    t.add_argument("--out", default="results.csv")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--dry-run", action="store_true",
                   help="print the plan and predicted cost counters, do nothing")
    t.set_defaults(func=cmd_test)

    s = sub.add_parser("simulate", help="run the Monte Carlo benchmark")
    s.add_argument("--grid", default=None, help="grid-specification JSON")
    s.add_argument("--reps", type=int, default=400)
    s.add_argument("--workers", type=int, default=None)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("equivalence", help="run the equivalence suite")
    e.add_argument("--suite", default="linear")
    e.add_argument("--n", default="500,2000,8000",
                   help="comma-separated sample sizes")
    e.add_argument("--reps", type=int, default=500)
    e.add_argument("--p", type=int, default=10)
    e.add_argument("--diagnostics-reps", type=int, default=20)
    e.add_argument("--out", default="eq.json")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_equivalence)

    r = sub.add_parser("report", help="summarize benchmark output")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--plots", action="store_true")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CitlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
