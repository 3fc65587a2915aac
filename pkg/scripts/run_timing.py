#!/usr/bin/env python3
"""Large-p timing comparison: single serial runs of tPCM, vPCM, and the HRT
at n=2500, with the HRT resample budget at its recommended 5p/alpha.

Example:
    python scripts/run_timing.py --p 100 200 --out out/timing.csv
"""

import argparse

from citlab.simbench import default_learner_config, emit_results, timing_sweep


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--p", type=int, nargs="*", default=[100, 200])
    parser.add_argument("--n", type=int, default=2500)
    parser.add_argument("--methods", nargs="*", default=["tpcm", "vpcm", "hrt"])
    parser.add_argument("--basis-size", type=int, default=6)
    parser.add_argument("--grid-points", type=int, default=8)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True, help="output CSV path")
    args = parser.parse_args()

    rows = timing_sweep(
        p_values=tuple(args.p), n=args.n, seed=args.seed,
        learner_config=default_learner_config(basis_size=args.basis_size,
                                              grid_points=args.grid_points),
        methods=tuple(args.methods))
    emit_results(rows, args.out, "csv")
    for row in rows:
        print(f"p={int(row['value'])} {row['method']}: "
              f"{row['estimate']:.1f}s (B={row['b_hrt']})")


if __name__ == "__main__":
    main()
