"""Frozen simplex classifier: latent points under CE + gamma*|z|^2 for several gammas.

    python scripts/theory_demo.py [--gammas 0,0.01,0.1,1] [--steps 2000] [--out runs/theory.csv]
"""

import argparse
from pathlib import Path

from lpclab.theory import export_trajectories, separated_cloud, simplex_classifier, simulate_collapse


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gammas", default="0,0.01,0.1,1")
    ap.add_argument("--classes", type=int, default=3)
    ap.add_argument("--per-class", type=int, default=30)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/theory.csv")
    args = ap.parse_args()

    clf = simplex_classifier(args.classes)
    cloud = separated_cloud(clf, args.per_class, seed=args.seed)
    gammas = [float(g) for g in args.gammas.split(",")]
    runs = simulate_collapse(clf, cloud, gammas, steps=args.steps, record_every=max(1, args.steps // 20))
    print(f"{'gamma':>8s} {'mean R':>10s} {'max dR':>10s} {'max diam':>10s}")
    for run in runs:
        st = list(run.stats.values())
        print(
            f"{run.gamma:8g} {sum(s.radius for s in st) / len(st):10.4g} "
            f"{max(s.radial_spread for s in st):10.3e} {max(s.diameter for s in st):10.3e}"
        )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    export_trajectories(args.out, runs)
    print(f"trajectories -> {args.out}")


if __name__ == "__main__":
    main()
