"""MLP classifiers for the eleven ablation variants, plus checkpoint I/O."""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import nn

VARIANTS = (
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
)

LINEAR_HEAD = frozenset({"LPC", "LPC-Wide", "LPC-Narrow", "LPC-SCL", "LinPen"})
NONLINEAR_HEAD = frozenset({"NonlinPen"})
NO_HEAD = frozenset({"LPC-NoPen", "SCL", "ArcFace", "CosFace", "NoPen"})
L2_VARIANTS = frozenset({"LPC", "LPC-Wide", "LPC-Narrow", "LPC-SCL", "LPC-NoPen"})
SCL_VARIANTS = frozenset({"LPC-SCL", "SCL"})
MARGIN_VARIANTS = frozenset({"ArcFace", "CosFace"})

# desk-scale head widths; ratios follow the 16/64/128 family
DEFAULT_PENULTIMATE = {"LPC-Narrow": 2, "LPC-Wide": 32}
DEFAULT_PENULTIMATE_DIM = 8


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ArchitectureSpec:
    variant: str
    input_dim: int
    num_classes: int
    backbone_widths: tuple[int, ...] = (64, 64)
    penultimate_dim: int | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        object.__setattr__(self, "backbone_widths", tuple(int(w) for w in self.backbone_widths))
        if self.input_dim < 1 or any(w < 1 for w in self.backbone_widths):
            raise ConfigError("input_dim and backbone widths must be positive")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        if self.variant in NO_HEAD:
            if self.penultimate_dim is not None:
                raise ConfigError(f"variant {self.variant} has no penultimate layer; drop penultimate_dim")
        else:
            if self.penultimate_dim is None:
                dim = DEFAULT_PENULTIMATE.get(self.variant, DEFAULT_PENULTIMATE_DIM)
                object.__setattr__(self, "penultimate_dim", dim)
            elif self.penultimate_dim < 1:
                raise ConfigError("penultimate_dim must be positive")

    @property
    def has_head(self) -> bool:
        return self.variant not in NO_HEAD

    @property
    def hidden_dim(self) -> int:
        return self.backbone_widths[-1] if self.backbone_widths else self.input_dim

    @property
    def latent_dim(self) -> int:
        return self.penultimate_dim if self.has_head else self.hidden_dim

    def param_shapes(self) -> "OrderedDict[str, tuple[int, int]]":
        shapes: OrderedDict[str, tuple[int, int]] = OrderedDict()
        prev = self.input_dim
        for i, w in enumerate(self.backbone_widths):
            shapes[f"backbone.{i}.W"] = (prev, w)
            shapes[f"backbone.{i}.b"] = (1, w)
            prev = w
        if self.has_head:
            shapes["head.W"] = (prev, self.penultimate_dim)
            shapes["head.b"] = (1, self.penultimate_dim)
            prev = self.penultimate_dim
        # classifier bias is structurally absent
        shapes["classifier.W"] = (prev, self.num_classes)
        return shapes


@dataclass
class ModelInstance:
    spec: ArchitectureSpec
    params: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    def copy(self) -> "ModelInstance":
        return ModelInstance(self.spec, OrderedDict((k, v.copy()) for k, v in self.params.items()))


class ForwardTrace(NamedTuple):
    h: np.ndarray
    z: np.ndarray
    logits: np.ndarray


def build_model(spec: ArchitectureSpec, seed: int) -> ModelInstance:
    rng = nn.seed_rng(seed)
    params: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, (r, c) in spec.param_shapes().items():
        if name.endswith(".b"):
            params[name] = np.zeros((r, c))
        else:
            params[name] = nn.glorot_uniform(rng, r, c)
    return ModelInstance(spec, params)


def _check_input(model: ModelInstance, x) -> np.ndarray:
    x = nn.as_tensor2d(x, "x")
    if x.shape[1] != model.spec.input_dim:
        raise nn.DimensionError(f"input width {x.shape[1]} != model input_dim {model.spec.input_dim}")
    if not np.all(np.isfinite(x)):
        raise nn.NonFiniteError("non-finite model input")
    return x


def forward_full(model: ModelInstance, x) -> ForwardTrace:
    x = _check_input(model, x)
    p, spec = model.params, model.spec
    h = x
    for i in range(len(spec.backbone_widths)):
        h = nn.swish(nn.dense_forward(h, p[f"backbone.{i}.W"], p[f"backbone.{i}.b"]))
    z = h
    if spec.has_head:
        z = nn.dense_forward(h, p["head.W"], p["head.b"])
        if spec.variant in NONLINEAR_HEAD:
            z = nn.swish(z)
    logits = nn.dense_forward(z, p["classifier.W"])
    return ForwardTrace(h, z, logits)


def forward_tape(model: ModelInstance, x, tape: nn.Tape, watch_input: bool = False):
    """Forward pass recorded on ``tape``.

    Returns ``(params, h, z, logits)`` where ``params`` maps names to the
    watched leaves (or, with ``watch_input``, the input is the only leaf and
    ``params`` holds ``{"x": leaf}``).
    """
    x = _check_input(model, x)
    spec = model.spec
    if watch_input:
        xin = tape.watch("x", x)
        leaves = {"x": xin}
        p = {k: nn.Var(v) for k, v in model.params.items()}
    else:
        xin = nn.Var(x)
        leaves = {k: tape.watch(k, v) for k, v in model.params.items()}
        p = leaves
    h = xin
    for i in range(len(spec.backbone_widths)):
        h = nn.swish_op(nn.dense(h, p[f"backbone.{i}.W"], p[f"backbone.{i}.b"]))
    z = h
    if spec.has_head:
        z = nn.dense(h, p["head.W"], p["head.b"])
        if spec.variant in NONLINEAR_HEAD:
            z = nn.swish_op(z)
    logits = nn.matmul(z, p["classifier.W"])
    return leaves, h, z, logits


def predict(model: ModelInstance, x) -> np.ndarray:
    return forward_full(model, x).logits.argmax(axis=1)


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = "LPCCKPT 1"


def save_checkpoint(model: ModelInstance, path) -> None:
    """Text header (spec line plus one ``param`` line per tensor) then little-endian float64 payload."""
    s = model.spec
    lines = [
        CHECKPOINT_MAGIC,
        f"spec variant={s.variant} input_dim={s.input_dim} num_classes={s.num_classes} "
        f"backbone={','.join(map(str, s.backbone_widths)) or '-'} "
        f"penultimate={s.penultimate_dim if s.penultimate_dim is not None else '-'}",
    ]
    for name, arr in model.params.items():
        lines.append(f"param {name} {arr.shape[0]} {arr.shape[1]}")
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("ascii")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in model.params.values())
    Path(path).write_bytes(header + payload)


def load_checkpoint(path) -> ModelInstance:
    raw = Path(path).read_bytes()
    end = raw.find(b"\nend\n")
    if not raw.startswith(CHECKPOINT_MAGIC.encode()) or end < 0:
        raise ValueError(f"{path}: not an LPC checkpoint")
    lines = raw[: end + 1].decode("ascii").splitlines()
    fields = dict(kv.split("=", 1) for kv in lines[1].split()[1:])
    spec = ArchitectureSpec(
        variant=fields["variant"],
        input_dim=int(fields["input_dim"]),
        num_classes=int(fields["num_classes"]),
        backbone_widths=tuple(int(w) for w in fields["backbone"].split(",")) if fields["backbone"] != "-" else (),
        penultimate_dim=None if fields["penultimate"] == "-" else int(fields["penultimate"]),
    )
    offset = end + len(b"\nend\n")
    params: OrderedDict[str, np.ndarray] = OrderedDict()
    for line in lines[2:]:
        _, name, r, c = line.split()
        n = int(r) * int(c)
        chunk = raw[offset : offset + 8 * n]
        if len(chunk) != 8 * n:
            raise ValueError(f"{path}: truncated payload for {name} at byte {offset}")
        params[name] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(int(r), int(c))
        offset += 8 * n
    if dict((k, v.shape) for k, v in params.items()) != dict(spec.param_shapes()):
        raise ValueError(f"{path}: parameter shapes do not match spec")
    return ModelInstance(spec, params)
