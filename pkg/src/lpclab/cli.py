"""Command-line entry point: ``lpclab <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, parse_config, parse_overrides, write_effective_config
from .harness import (
    NumericFailure,
    RunLog,
    ablation_suite,
    export_plot_data,
    make_datasets,
    run_experiment,
    write_long_csv,
    write_summary_csv,
)

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lpclab", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="output directory (or file for export)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one configuration")
    t.add_argument("config")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    s = sub.add_parser("suite", help="run an ablation preset over several seeds")
    s.add_argument("preset")
    s.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    s.add_argument("--config", default=None, help="base config file")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    a = sub.add_parser("attack", help="DeepFool sweep of a checkpoint on a config's test split")
    a.add_argument("checkpoint")
    a.add_argument("dataset", help="config file whose dataset section defines the data")
    a.add_argument("--samples", type=int, default=None)

    m = sub.add_parser("metrics", help="collapse and binarity metrics of an LPCZ latent file")
    m.add_argument("latents")
    m.add_argument("--k", type=int, default=20)

    th = sub.add_parser("theory", help="frozen-classifier collapse simulation")
    th.add_argument("--gammas", type=_float_list, default=[0.01, 0.1, 1.0])
    th.add_argument("--classes", type=int, default=3)
    th.add_argument("--per-class", type=int, default=30)
    th.add_argument("--steps", type=int, default=2000)
    th.add_argument("--step-size", type=float, default=0.1)
    th.add_argument("--record-every", type=int, default=100)

    e = sub.add_parser("export", help="long-format plot data from a run log")
    e.add_argument("runlog")
    e.add_argument("--kind", default="all")
    return p


def _cmd_train(args) -> int:
    cfg = parse_config(args.config, echo=False)
    items = list(args.set)
    if args.seed is not None:
        items.append(f"seed={args.seed}")
    if args.out is not None:
        items.append(f"output_dir={args.out}")
    if items:
        cfg = parse_overrides(items, cfg)
    write_effective_config(cfg)
    res = run_experiment(cfg)
    tr, te = res.runlog.final("train"), res.runlog.final("test")
    print(f"wrote {res.output_dir}/runlog.csv in {res.seconds:.1f}s")
    print(f"train acc {tr['accuracy']:.4f}  test acc {te['accuracy']:.4f}  R {tr.get('separation_ratio')}")
    return 0


def _cmd_suite(args) -> int:
    base = parse_config(args.config, echo=False) if args.config else ExperimentConfig()
    out = args.out or f"runs/suite-{args.preset}"
    res = ablation_suite(args.preset, args.seeds, base=base, out_dir=out, overrides=args.set)
    print(write_summary_csv(res.table), end="")
    print(f"pearson(separation_ratio, robustness_mean) = {res.pearson:.4f} over {res.n_pairs} runs")
    if res.failures:
        print(f"failed runs: {sum(len(v) for v in res.failures.values())}", file=sys.stderr)
    return 0


def _cmd_attack(args) -> int:
    from .models import load_checkpoint
    from .robustness import DeepFoolConfig, robustness_sweep

    cfg = parse_config(args.dataset, echo=False)
    model = load_checkpoint(args.checkpoint)
    _, test = make_datasets(cfg)
    rc = cfg.robustness
    dcfg = DeepFoolConfig(rc.max_iter, rc.overshoot, args.samples or rc.sample_count)
    seed = cfg.seed if args.seed is None else args.seed
    summary = robustness_sweep(model, test, dcfg, seed=seed)
    print(json.dumps(_jsonable(dataclasses.asdict(summary)), indent=2))
    return 0


def _cmd_metrics(args) -> int:
    from .binarity import binarity_scores
    from .metrics import collapse_report, discrete_entropy_bound, read_latents

    batch = read_latents(args.latents)
    report = collapse_report(batch, args.k).as_dict()
    b = binarity_scores(batch)
    report.update(
        binarity_llh=b.llh,
        binarity_sigma=b.sigma,
        binarity_peaks=b.peaks,
        binarity_min_llh=b.min_llh,
        binarity_min_peaks=b.min_peaks,
        discrete_entropy_bound=discrete_entropy_bound(batch.K),
        nc2_note="NC2 statistics are a reconstruction: equinorm CoV, mean |cos + 1/(K-1)|, cosine std",
    )
    print(json.dumps(_jsonable(report), indent=2))
    return 0


def _cmd_theory(args) -> int:
    from .theory import export_trajectories, separated_cloud, simplex_classifier, simulate_collapse

    clf = simplex_classifier(args.classes)
    cloud = separated_cloud(clf, args.per_class, seed=args.seed or 0)
    runs = simulate_collapse(clf, cloud, args.gammas, args.steps, args.step_size, args.record_every)
    for run in runs:
        for c, st in run.stats.items():
            print(f"gamma={run.gamma:g} class={c} R={st.radius:.6g} dR={st.radial_spread:.3e} diam={st.diameter:.3e}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        export_trajectories(args.out, runs)
    return 0


def _cmd_export(args) -> int:
    rows = export_plot_data(RunLog.read_csv(args.runlog), args.kind)
    text = write_long_csv(rows, args.out)
    if args.out is None:
        print(text, end="")
    return 0


def _jsonable(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


COMMANDS = {
    "train": _cmd_train,
    "suite": _cmd_suite,
    "attack": _cmd_attack,
    "metrics": _cmd_metrics,
    "theory": _cmd_theory,
    "export": _cmd_export,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericFailure, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
