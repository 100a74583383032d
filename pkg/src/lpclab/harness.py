"""Training loop, run logs, ablation suites and plot-data export."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses, nn
from .binarity import binarity_scores
from .config import ExperimentConfig, format_config, parse_overrides, write_effective_config
from .datasets import BlobSpec, Dataset, Standardizer, batches, concentric_rings, gaussian_blobs, load_idx
from .metrics import LatentBatch, MetricInputError, collapse_report, write_latents
from .models import (
    L2_VARIANTS,
    MARGIN_VARIANTS,
    SCL_VARIANTS,
    ModelInstance,
    build_model,
    forward_full,
    forward_tape,
    save_checkpoint,
)
from .robustness import DeepFoolConfig, robustness_sweep

log = logging.getLogger(__name__)

NA = "NA"

RUNLOG_COLUMNS = [
    "variant",
    "seed",
    "epoch",
    "split",
    "accuracy",
    "loss_ce",
    "loss_l2",
    "loss_aux",
    "loss_total",
    "gamma",
    "l2_active",
    "l2_reduction",
    "lr",
    "sigma_w_trace",
    "nc1",
    "separation_ratio",
    "norm_cov",
    "norm_cov_class_means",
    "entropy_per_dim",
    "nc2_equinorm",
    "nc2_equiangularity_dev",
    "nc2_cos_std",
    "binarity_llh",
    "binarity_sigma",
    "binarity_peaks",
    "binarity_min_llh",
    "binarity_min_peaks",
    "robustness_mean",
    "robustness_median",
    "robustness_std",
    "robustness_mean_all",
    "robustness_converged_frac",
    "tpt_flag",
]

TPT_ACCURACY = 0.999


class NumericFailure(FloatingPointError):
    pass


# ---------------------------------------------------------------- data


def make_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg.dataset
    if d.kind == "blobs":
        train = gaussian_blobs(BlobSpec(d.K, d.n_per_class, d.dim, d.center_radius, d.sigma, d.seed))
        test = gaussian_blobs(BlobSpec(d.K, d.n_test_per_class, d.dim, d.center_radius, d.sigma, d.seed + 1_000_003))
    elif d.kind == "rings":
        train = concentric_rings(d.K, d.n_per_class, d.sigma, d.seed)
        test = concentric_rings(d.K, d.n_test_per_class, d.sigma, d.seed + 1_000_003)
    else:
        train = load_idx(d.train_images, d.train_labels, d.K)
        test = load_idx(d.test_images, d.test_labels, d.K) if d.test_images else train
    if d.standardize:
        st = Standardizer.fit(train)
        train, test = st.apply(train), st.apply(test)
    return train, test


# ---------------------------------------------------------------- runlog


@dataclass
class RunLog:
    rows: list[dict] = field(default_factory=list)

    def append(self, row: dict) -> None:
        self.rows.append({c: row.get(c, NA) for c in RUNLOG_COLUMNS})

    def final(self, split: str) -> dict:
        return [r for r in self.rows if r["split"] == split][-1]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, RUNLOG_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _cell(v) for k, v in r.items()})
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def read_csv(cls, path) -> "RunLog":
        with open(path, newline="", encoding="utf-8") as fh:
            return cls([dict(r) for r in csv.DictReader(fh)])


def _cell(v) -> str:
    if v is None:
        return NA
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return NA if math.isnan(v) else repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _num(v) -> float:
    if v is None or v == NA or v == "":
        return math.nan
    return float(v)


# ---------------------------------------------------------------- training


def lr_factor(epoch: int, start: int, every: int) -> float:
    """1 before ``start``; halved at ``start`` and again every ``every`` epochs after."""
    if epoch < start:
        return 1.0
    return 0.5 ** (1 + (epoch - start) // every)


def batch_loss(model: ModelInstance, X, y, cfg: ExperimentConfig, gamma: float, margins):
    """Variant-specific objective on one batch; returns (tape, total, parts)."""
    tape = nn.Tape()
    leaves, h, z, logits = forward_tape(model, X, tape)
    variant = cfg.variant
    ce = losses.cross_entropy(logits, y)
    l2 = losses.l2_penalty(z)
    aux = None
    if variant in MARGIN_VARIANTS:
        s, m_arc, m_cos = margins
        fn = losses.arcface_loss if variant == "ArcFace" else losses.cosface_loss
        aux = fn(h, y, nn.transpose(leaves["classifier.W"]), s, m_arc if variant == "ArcFace" else m_cos)
        total = aux
    else:
        total = ce
        if variant in SCL_VARIANTS:
            aux = losses.supcon_loss(h, y, cfg.train.scl_temperature)
            total = nn.add(total, nn.scale(aux, cfg.train.scl_weight))
        if variant in L2_VARIANTS:
            total = nn.add(total, nn.scale(l2, gamma))
    parts = (ce.value.item(), l2.value.item(), None if aux is None else aux.value.item(), total.value.item())
    return tape, total, parts


def accuracy(model: ModelInstance, data: Dataset) -> float:
    return float((forward_full(model, data.X).logits.argmax(axis=1) == data.y).mean())


def latent_metrics(model: ModelInstance, data: Dataset, k: int) -> dict:
    z = forward_full(model, data.X).z
    out: dict = {}
    batch = LatentBatch(z, data.y, data.K)
    try:
        rep = collapse_report(batch, k)
        out.update(
            sigma_w_trace=rep.sigma_w_trace,
            nc1=rep.nc1,
            separation_ratio=rep.separation_ratio_mean,
            norm_cov=rep.norm_cov,
            norm_cov_class_means=rep.norm_cov_class_means,
            entropy_per_dim=rep.entropy_per_dim,
            nc2_equinorm=rep.nc2_equinorm,
            nc2_equiangularity_dev=rep.nc2_equiangularity_dev,
            nc2_cos_std=rep.nc2_cos_std,
        )
        b = binarity_scores(batch)
        out.update(
            binarity_llh=b.llh,
            binarity_sigma=b.sigma,
            binarity_peaks=b.peaks,
            binarity_min_llh=b.min_llh,
            binarity_min_peaks=b.min_peaks,
        )
    except MetricInputError as exc:
        log.warning("latent metrics skipped: %s", exc)
    return out


@dataclass
class RunResult:
    config: ExperimentConfig
    runlog: RunLog
    model: ModelInstance
    train: Dataset
    test: Dataset
    output_dir: Path | None
    seconds: float


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> RunResult:
    """Train one configuration end to end and (optionally) write its artifacts."""
    t0 = time.perf_counter()
    out = Path(cfg.output_dir)
    if write:
        write_effective_config(cfg)
    train, test = make_datasets(cfg)
    spec = cfg.architecture(train.X.shape[1], train.K)
    model = build_model(spec, cfg.seed)
    state = nn.OptimizerState()
    schedule = cfg.schedule.build()
    margin = cfg.margin.build()
    tc = cfg.train
    runlog = RunLog()
    tpt = False
    l2_active = cfg.variant in L2_VARIANTS
    base = {"variant": cfg.variant, "seed": cfg.seed, "l2_reduction": "mean", "l2_active": int(l2_active)}

    for epoch in range(tc.epochs):
        gamma = losses.gamma_at(schedule, epoch)
        margins = losses.margin_at(margin, epoch, tc.epochs - 1)
        factor = lr_factor(epoch, tc.lr_halving_start, tc.lr_halving_every)
        lr = tc.learning_rate * factor

        def rate(name, _lr=lr):
            return tc.learning_rate if name == "classifier.W" else _lr

        last_good = model.copy()
        sums = np.zeros(4)
        has_aux = False
        n_seen = 0
        for idx in batches(train, tc.batch_size, cfg.seed, epoch):
            tape, total, parts = batch_loss(model, train.X[idx], train.y[idx], cfg, gamma, margins)
            if not math.isfinite(parts[3]):
                _fail(model=last_good, out=out if write else None, epoch=epoch, msg="non-finite loss")
            grads = nn.backward(tape, total)
            try:
                nn.adamw_step(model.params, grads, state, lr=rate, weight_decay=tc.weight_decay)
            except nn.NonFiniteError as exc:
                _fail(model=last_good, out=out if write else None, epoch=epoch, msg=str(exc))
            w = len(idx)
            n_seen += w
            has_aux = parts[2] is not None
            sums += w * np.array([parts[0], parts[1], parts[2] or 0.0, parts[3]])
        means = sums / n_seen
        with np.errstate(all="ignore"):
            probe = forward_full(model, train.X)
        if not (np.all(np.isfinite(probe.logits)) and np.all(np.isfinite(probe.z))):
            _fail(model=last_good, out=out if write else None, epoch=epoch, msg="non-finite forward pass")
        train_acc = accuracy(model, train)
        if train_acc >= TPT_ACCURACY:
            tpt = True
        cadence = epoch % tc.metric_cadence == 0 or epoch == tc.epochs - 1
        row = dict(
            base,
            epoch=epoch,
            split="train",
            accuracy=train_acc,
            loss_ce=means[0],
            loss_l2=means[1],
            loss_aux=means[2] if has_aux else None,
            loss_total=means[3],
            gamma=gamma,
            lr=lr,
            tpt_flag=int(tpt),
        )
        if cadence:
            row.update(latent_metrics(model, train, tc.entropy_k))
        runlog.append(row)
        if cadence:
            tr = forward_full(model, test.X)
            test_row = dict(
                base,
                epoch=epoch,
                split="test",
                accuracy=float((tr.logits.argmax(axis=1) == test.y).mean()),
                loss_ce=losses.cross_entropy(tr.logits, test.y),
                loss_l2=losses.l2_penalty(tr.z),
                gamma=gamma,
                lr=lr,
                tpt_flag=int(tpt),
            )
            if epoch == tc.epochs - 1 and cfg.robustness.enabled:
                rc = cfg.robustness
                summary = robustness_sweep(
                    model, test, DeepFoolConfig(rc.max_iter, rc.overshoot, rc.sample_count), seed=cfg.seed
                )
                test_row.update(
                    robustness_mean=summary.mean,
                    robustness_median=summary.median,
                    robustness_std=summary.std,
                    robustness_mean_all=summary.mean_all,
                    robustness_converged_frac=summary.converged_frac,
                )
            runlog.append(test_row)

    if write:
        out.mkdir(parents=True, exist_ok=True)
        runlog.to_csv(out / "runlog.csv")
        save_checkpoint(model, out / "model.ckpt")
        z = forward_full(model, train.X).z
        write_latents(out / "latents_train.lpcz", LatentBatch(z, train.y, train.K))
    return RunResult(cfg, runlog, model, train, test, out if write else None, time.perf_counter() - t0)


def _fail(model: ModelInstance, out: Path | None, epoch: int, msg: str):
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, out / "last_good.ckpt")
    raise NumericFailure(f"epoch {epoch}: {msg}; last good parameters kept")


# ---------------------------------------------------------------- long format and summaries

PLOT_KINDS = {
    "nc_metrics": {
        "sigma_w_trace": ("train", "sigma_w_trace"),
        "nc1": ("train", "nc1"),
        "nc2_equinorm": ("train", "nc2_equinorm"),
        "nc2_equiangularity_dev": ("train", "nc2_equiangularity_dev"),
        "nc2_cos_std": ("train", "nc2_cos_std"),
    },
    "binarity": {
        "llh": ("train", "binarity_llh"),
        "sigma": ("train", "binarity_sigma"),
        "peaks": ("train", "binarity_peaks"),
    },
    "collapse": {
        "separation_ratio": ("train", "separation_ratio"),
        "sigma_w_trace": ("train", "sigma_w_trace"),
        "norm_cov": ("train", "norm_cov"),
        "entropy_per_dim": ("train", "entropy_per_dim"),
    },
    "training": {
        "loss_ce": ("train", "loss_ce"),
        "loss_l2": ("train", "loss_l2"),
        "loss_total": ("train", "loss_total"),
        "gamma": ("train", "gamma"),
        "accuracy_train": ("train", "accuracy"),
        "accuracy_test": ("test", "accuracy"),
    },
    "robustness": {
        "robustness_mean": ("test", "robustness_mean"),
        "robustness_median": ("test", "robustness_median"),
        "robustness_converged_frac": ("test", "robustness_converged_frac"),
    },
}
PLOT_KINDS["all"] = {k: v for kind in list(PLOT_KINDS.values()) for k, v in kind.items()}

LONG_COLUMNS = ["epoch", "metric", "value", "variant", "seed"]


def export_plot_data(runlog: RunLog, kind: str) -> list[dict]:
    """Tidy rows (epoch, metric, value, variant, seed), skipping NA cells."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown kind {kind!r}; expected one of {sorted(PLOT_KINDS)}")
    if not runlog.rows:
        raise ValueError("empty runlog")
    out = []
    for r in runlog.rows:
        for metric, (split, col) in PLOT_KINDS[kind].items():
            if r["split"] != split:
                continue
            v = _num(r[col]) if not isinstance(r[col], float) else r[col]
            if math.isnan(v):
                continue
            out.append({"epoch": int(r["epoch"]), "metric": metric, "value": v, "variant": r["variant"], "seed": int(r["seed"])})
    return out


def write_long_csv(rows: list[dict], path=None) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, LONG_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _cell(r[k]) for k in LONG_COLUMNS})
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_long_csv(path_or_text) -> list[dict]:
    text = Path(path_or_text).read_text(encoding="utf-8") if isinstance(path_or_text, Path) else path_or_text
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        if r["epoch"] == "epoch":  # header of a concatenated file
            continue
        rows.append({"epoch": int(r["epoch"]), "metric": r["metric"], "value": float(r["value"]), "variant": r["variant"], "seed": int(r["seed"])})
    return rows


SUMMARY_METRICS = (
    "separation_ratio",
    "sigma_w_trace",
    "norm_cov",
    "entropy_per_dim",
    "robustness_mean",
    "robustness_median",
    "accuracy_test",
)


def final_values(long_rows: list[dict]) -> dict[tuple[str, int], dict[str, float]]:
    """Last-epoch value of each metric per (variant, seed)."""
    last: dict[tuple[str, int], dict[str, tuple[int, float]]] = defaultdict(dict)
    for r in long_rows:
        key = (r["variant"], r["seed"])
        prev = last[key].get(r["metric"])
        if prev is None or r["epoch"] >= prev[0]:
            last[key][r["metric"]] = (r["epoch"], r["value"])
    return {k: {m: v for m, (_, v) in d.items()} for k, d in sorted(last.items())}


def summarize(long_rows: list[dict], failures: dict[str, int] | None = None) -> list[dict]:
    """Mean and population std over seeds for every variant, in first-seen order."""
    finals = final_values(long_rows)
    order = list(dict.fromkeys(r["variant"] for r in long_rows))
    failures = failures or {}
    table = []
    for variant in order:
        runs = [v for (var, _), v in finals.items() if var == variant]
        row = {"variant": variant, "n_runs": len(runs), "n_failed": failures.get(variant, 0)}
        for m in SUMMARY_METRICS:
            vals = np.array([r[m] for r in runs if m in r and not math.isnan(r[m])])
            row[f"{m}_mean"] = float(vals.mean()) if vals.size else math.nan
            row[f"{m}_std"] = float(vals.std()) if vals.size else math.nan
        table.append(row)
    return table


def pearson_separation_robustness(long_rows: list[dict], robustness: str = "robustness_mean") -> tuple[float, int]:
    """Pearson r across runs between final mean separation ratio and robustness."""
    pairs = [
        (v["separation_ratio"], v[robustness])
        for v in final_values(long_rows).values()
        if "separation_ratio" in v and robustness in v
    ]
    if len(pairs) < 3:
        return math.nan, len(pairs)
    a = np.array(pairs)
    return float(np.corrcoef(a[:, 0], a[:, 1])[0, 1]), len(pairs)


def write_summary_csv(table: list[dict], path=None) -> str:
    if not table:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, list(table[0].keys()), lineterminator="\n")
    w.writeheader()
    for r in table:
        w.writerow({k: _cell(v) for k, v in r.items()})
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


# ---------------------------------------------------------------- ablation suites

PRESETS: dict[str, dict] = {
    # the toy comparison: LPC with a 2-d head against the plain baseline
    "toy": {"variants": ["LPC", "NoPen"], "overrides": {"LPC": ["model.penultimate_dim=2"]}},
    "ablation": {
        "variants": [
            "LPC",
            "LPC-Wide",
            "LPC-Narrow",
            "LPC-SCL",
            "LPC-NoPen",
            "LinPen",
            "NonlinPen",
            "SCL",
            "ArcFace",
            "CosFace",
            "NoPen",
        ],
        "overrides": {},
    },
    "correlation": {
        "variants": ["LPC", "LPC-Narrow", "LinPen", "NoPen"],
        "overrides": {},
    },
}


def per_run_table(long_rows: list[dict], select: str = "accuracy_test") -> list[dict]:
    """One row per (variant, seed) with final metrics; ``best`` marks the top ``select`` session per variant."""
    finals = final_values(long_rows)
    rows = []
    for (variant, seed), vals in finals.items():
        row = {"variant": variant, "seed": seed}
        row.update({m: vals.get(m, math.nan) for m in SUMMARY_METRICS})
        rows.append(row)
    for variant in dict.fromkeys(r["variant"] for r in rows):
        mine = [r for r in rows if r["variant"] == variant]
        scores = [(-math.inf if math.isnan(r[select]) else r[select]) for r in mine]
        top = int(np.argmax(scores))
        for i, r in enumerate(mine):
            r["best"] = int(i == top)
    return rows


@dataclass
class SuiteResult:
    table: list[dict]
    long_rows: list[dict]
    failures: dict[str, list[str]]
    pearson: float
    n_pairs: int
    runs: list[dict] = field(default_factory=list)


def ablation_suite(
    preset: str,
    seeds: list[int],
    base: ExperimentConfig | None = None,
    out_dir=None,
    overrides: list[str] | None = None,
) -> SuiteResult:
    """Run every (variant, seed) pair of ``preset`` and reduce to a mean/std table."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    spec = PRESETS[preset]
    base = base or ExperimentConfig()
    if overrides:
        base = parse_overrides(overrides, base)
    root = Path(out_dir) if out_dir is not None else None
    long_rows: list[dict] = []
    failures: dict[str, list[str]] = defaultdict(list)
    for variant in spec["variants"]:
        for seed in seeds:
            items = [f"variant={variant}", f"seed={seed}"]
            if variant in ("LPC-NoPen", "SCL", "ArcFace", "CosFace", "NoPen", "NonlinPen", "LPC-Narrow", "LPC-Wide"):
                items.append("model.penultimate_dim=none")
            items += spec["overrides"].get(variant, [])
            if root is not None:
                items.append(f"output_dir={root / f'{variant}_seed{seed}'}")
            try:
                cfg = parse_overrides(items, base)
                res = run_experiment(cfg, write=root is not None)
            except (NumericFailure, ValueError) as exc:
                log.error("suite run %s seed %d failed: %s", variant, seed, exc)
                failures[variant].append(str(exc))
                continue
            long_rows.extend(export_plot_data(res.runlog, "all"))
    table = summarize(long_rows, {k: len(v) for k, v in failures.items()})
    runs = per_run_table(long_rows)
    r, n = pearson_separation_robustness(long_rows)
    if root is not None:
        root.mkdir(parents=True, exist_ok=True)
        write_summary_csv(table, root / "summary.csv")
        write_summary_csv(runs, root / "runs.csv")
        write_long_csv(long_rows, root / "long.csv")
    return SuiteResult(table, long_rows, dict(failures), r, n, runs)
