"""Run an ablation preset, then print the per-variant summary and the separation/robustness correlation.

    python scripts/run_suite.py ablation --seeds 0,1,2 [--out runs/ablation] [--set key=value ...]
"""

import argparse

from lpclab.config import ExperimentConfig
from lpclab.harness import PRESETS, ablation_suite

SHOW = ("separation_ratio", "sigma_w_trace", "norm_cov", "entropy_per_dim", "robustness_median", "accuracy_test")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("preset", choices=sorted(PRESETS))
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--out", default=None)
    ap.add_argument("--set", action="append", default=[])
    args = ap.parse_args()

    seeds = [int(s) for s in args.seeds.split(",") if s]
    out = args.out or f"runs/{args.preset}"
    res = ablation_suite(args.preset, seeds, base=ExperimentConfig(), out_dir=out, overrides=args.set)
    print(f"{'variant':12s} {'n':>3s} " + " ".join(f"{m:>26s}" for m in SHOW))
    for row in res.table:
        cells = " ".join(f"{row[m + '_mean']:>13.4g} ± {row[m + '_std']:<10.3g}" for m in SHOW)
        print(f"{row['variant']:12s} {row['n_runs']:3d} {cells}")
    print(f"pearson(R, robustness_mean) = {res.pearson:.3f} over {res.n_pairs} runs")
    for variant, errs in res.failures.items():
        print(f"{variant}: {len(errs)} failed run(s)")
    print(f"artifacts under {out}/ (summary.csv, runs.csv, long.csv)")


if __name__ == "__main__":
    main()
