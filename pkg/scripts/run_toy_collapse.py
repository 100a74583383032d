"""Train LPC (2-d head) and the plain baseline on the toy blobs and print a comparison.

    python scripts/run_toy_collapse.py [--epochs 500] [--out runs/toy] [--set key=value ...]
"""

import argparse
from pathlib import Path

from lpclab.config import ExperimentConfig, parse_overrides
from lpclab.harness import run_experiment

COLUMNS = ("accuracy", "sigma_w_trace", "separation_ratio", "norm_cov", "entropy_per_dim", "binarity_llh", "binarity_peaks")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/toy")
    ap.add_argument("--set", action="append", default=[])
    args = ap.parse_args()

    runs = {
        "LPC": ["variant=LPC", "model.penultimate_dim=2"],
        "LinPen": ["variant=LinPen", "model.penultimate_dim=2"],
        "NoPen": ["variant=NoPen"],
    }
    print(f"{'variant':8s} " + " ".join(f"{c:>16s}" for c in COLUMNS) + f" {'robust_median':>14s} {'secs':>6s}")
    for name, items in runs.items():
        items = items + [f"train.epochs={args.epochs}", f"seed={args.seed}", f"output_dir={Path(args.out) / name}"] + args.set
        res = run_experiment(parse_overrides(items, ExperimentConfig()))
        tr, te = res.runlog.final("train"), res.runlog.final("test")
        cells = " ".join(f"{tr[c]:16.4g}" for c in COLUMNS)
        print(f"{name:8s} {cells} {te['robustness_median']:14.4g} {res.seconds:6.1f}")


if __name__ == "__main__":
    main()
