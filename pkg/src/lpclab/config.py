"""Experiment configuration and its ``key = value`` file format.

Example::

    # toy collapse run
    variant = LPC
    seed = 0
    dataset.kind = blobs
    model.penultimate_dim = 2
    schedule.gamma_max = 1000
    train.epochs = 500

Keys are dotted ``section.field`` names (top-level keys have no section).
Values are bare: numbers, ``true``/``false``, ``none``, comma-separated
integer lists, or text. Unknown keys, bad types and constraint violations
raise :class:`ConfigError` naming the key and line.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .losses import GammaSchedule, MarginSchedule
from .models import VARIANTS, ArchitectureSpec, ConfigError as ModelConfigError, NO_HEAD


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "blobs"
    K: int = 3
    n_per_class: int = 300
    n_test_per_class: int = 100
    dim: int = 2
    center_radius: float = 3.0
    sigma: float = 0.1
    seed: int = 0
    standardize: bool = True
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""


@dataclass(frozen=True)
class ModelConfig:
    backbone_widths: tuple[int, ...] = (64, 64)
    penultimate_dim: int | None = None


@dataclass(frozen=True)
class ScheduleConfig:
    gamma0: float = 1e-2
    gamma_step: float = 1.05
    gamma_max: float = 1e3

    def build(self) -> GammaSchedule:
        return GammaSchedule(self.gamma0, self.gamma_step, self.gamma_max)


@dataclass(frozen=True)
class MarginConfig:
    s_start: float = 16.0
    s_end: float = 64.0
    arc_start: float = 0.1
    arc_end: float = 0.5
    cos_start: float = 0.05
    cos_end: float = 0.25

    def build(self) -> MarginSchedule:
        return MarginSchedule(**dataclasses.asdict(self))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 0.5e-4
    lr_halving_start: int = 250
    lr_halving_every: int = 50
    metric_cadence: int = 10
    scl_weight: float = 1.0
    scl_temperature: float = 0.05
    entropy_k: int = 20


@dataclass(frozen=True)
class RobustnessConfig:
    enabled: bool = True
    max_iter: int = 50
    overshoot: float = 0.02
    sample_count: int = 1000


@dataclass(frozen=True)
class ExperimentConfig:
    variant: str = "LPC"
    seed: int = 0
    output_dir: str = "runs/default"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    margin: MarginConfig = field(default_factory=MarginConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    robustness: RobustnessConfig = field(default_factory=RobustnessConfig)

    def architecture(self, input_dim: int, num_classes: int) -> ArchitectureSpec:
        return ArchitectureSpec(
            variant=self.variant,
            input_dim=input_dim,
            num_classes=num_classes,
            backbone_widths=self.model.backbone_widths,
            penultimate_dim=self.model.penultimate_dim,
        )


SECTIONS = ("dataset", "model", "schedule", "margin", "train", "robustness")

_POSITIVE = lambda v: v > 0  # noqa: E731
_NONNEG = lambda v: v >= 0  # noqa: E731

CONSTRAINTS: dict[str, tuple[Any, str]] = {
    "variant": (lambda v: v in VARIANTS, f"must be one of {', '.join(VARIANTS)}"),
    "dataset.kind": (lambda v: v in ("blobs", "rings", "idx"), "must be blobs, rings or idx"),
    "dataset.K": (lambda v: v >= 2, "must be >= 2"),
    "dataset.n_per_class": (_POSITIVE, "must be positive"),
    "dataset.n_test_per_class": (_POSITIVE, "must be positive"),
    "dataset.dim": (lambda v: v >= 2, "must be >= 2"),
    "dataset.sigma": (_NONNEG, "must be nonnegative"),
    "model.backbone_widths": (lambda v: all(w > 0 for w in v), "widths must be positive"),
    "model.penultimate_dim": (lambda v: v is None or v > 0, "must be positive"),
    "schedule.gamma0": (_POSITIVE, "must be positive"),
    "schedule.gamma_step": (lambda v: v > 1, "must exceed 1"),
    "schedule.gamma_max": (_POSITIVE, "must be positive"),
    "train.epochs": (lambda v: v >= 1, "must be >= 1"),
    "train.batch_size": (lambda v: v >= 1, "must be >= 1"),
    "train.learning_rate": (_POSITIVE, "must be positive"),
    "train.weight_decay": (_NONNEG, "must be nonnegative"),
    "train.lr_halving_every": (lambda v: v >= 1, "must be >= 1"),
    "train.metric_cadence": (lambda v: v >= 1, "must be >= 1"),
    "train.entropy_k": (lambda v: v >= 1, "must be >= 1"),
    "train.scl_temperature": (_POSITIVE, "must be positive"),
    "robustness.max_iter": (lambda v: v >= 1, "must be >= 1"),
    "robustness.overshoot": (_NONNEG, "must be nonnegative"),
    "robustness.sample_count": (lambda v: v >= 1, "must be >= 1"),
}


def _field_types() -> dict[str, Any]:
    types = {f.name: f.type for f in fields(ExperimentConfig) if f.name not in SECTIONS}
    for sec in SECTIONS:
        cls = {f.name: f for f in fields(ExperimentConfig)}[sec].default_factory
        for f in fields(cls):
            types[f"{sec}.{f.name}"] = f.type
    return types


FIELD_TYPES = _field_types()


def _convert(raw: str, typ: str, key: str, line: int | None):
    text = raw.strip()
    try:
        if typ == "int":
            return int(text)
        if typ == "float":
            return float(text)
        if typ == "bool":
            low = text.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(text)
        if typ == "str":
            return text
        if typ == "int | None":
            return None if text.lower() in ("none", "") else int(text)
        if typ == "tuple[int, ...]":
            return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"cannot read {text!r} as {typ}", key, line) from None
    raise ConfigError(f"unsupported field type {typ}", key, line)


def config_from_pairs(pairs: list[tuple[str, str, int | None]], base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Build a config from ``(key, raw_value, line)`` triples on top of ``base``."""
    top: dict[str, Any] = {}
    sections: dict[str, dict[str, Any]] = {s: {} for s in SECTIONS}
    lines: dict[str, int | None] = {}
    for key, raw, line in pairs:
        if key not in FIELD_TYPES:
            raise ConfigError("unknown key", key, line)
        value = _convert(raw, FIELD_TYPES[key], key, line)
        check = CONSTRAINTS.get(key)
        if check is not None and not check[0](value):
            raise ConfigError(check[1], key, line)
        lines[key] = line
        if "." in key:
            sec, name = key.split(".", 1)
            sections[sec][name] = value
        else:
            top[key] = value
    base = base or ExperimentConfig()
    kwargs = {s: dataclasses.replace(getattr(base, s), **sections[s]) for s in SECTIONS}
    cfg = dataclasses.replace(base, **top, **kwargs)
    _cross_validate(cfg, lines)
    return cfg


def _cross_validate(cfg: ExperimentConfig, lines: dict[str, int | None]) -> None:
    if cfg.schedule.gamma0 > cfg.schedule.gamma_max:
        raise ConfigError("gamma0 exceeds gamma_max", "schedule.gamma0", lines.get("schedule.gamma0"))
    if cfg.variant in NO_HEAD and cfg.model.penultimate_dim is not None:
        key = "model.penultimate_dim"
        raise ConfigError(f"variant {cfg.variant} has no penultimate layer", key, lines.get(key))
    if cfg.dataset.kind == "idx" and not (cfg.dataset.train_images and cfg.dataset.train_labels):
        raise ConfigError("idx datasets need train_images and train_labels", "dataset.kind", lines.get("dataset.kind"))
    try:
        cfg.architecture(cfg.dataset.dim, cfg.dataset.K)
    except ModelConfigError as exc:
        raise ConfigError(str(exc), "variant", lines.get("variant")) from None


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    pairs = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", None, lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"duplicate key (first on line {seen[key]})", key, lineno)
        seen[key] = lineno
        pairs.append((key, raw, lineno))
    return config_from_pairs(pairs, base)


def parse_overrides(items: list[str], base: ExperimentConfig) -> ExperimentConfig:
    """Apply ``key=value`` command-line overrides."""
    pairs = []
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        pairs.append((k.strip(), v, None))
    return config_from_pairs(pairs, base)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def format_config(cfg: ExperimentConfig) -> str:
    out = ["# effective configuration"]
    for f in fields(cfg):
        if f.name not in SECTIONS:
            out.append(f"{f.name} = {_format(getattr(cfg, f.name))}")
    for sec in SECTIONS:
        sub = getattr(cfg, sec)
        for f in fields(sub):
            out.append(f"{sec}.{f.name} = {_format(getattr(sub, f.name))}")
    return "\n".join(out) + "\n"


def parse_config(path, echo: bool = True, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Read a config file; with ``echo`` write the effective config into its output_dir."""
    cfg = parse_config_text(Path(path).read_text(encoding="utf-8"), base)
    if echo:
        write_effective_config(cfg)
    return cfg


def write_effective_config(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.effective.txt"
    path.write_text(format_config(cfg), encoding="utf-8")
    return path
