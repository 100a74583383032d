"""Training objectives: cross-entropy + gamma * L2 on latents, and the comparison losses.

Every loss here accepts either plain arrays (returns a float) or tape
variables (returns a scalar :class:`~lpclab.nn.Var`), so the same code path
serves evaluation and training.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import nn


class LabelError(ValueError):
    pass


def _check_labels(labels, k: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.size and (y.min() < 0 or y.max() >= k):
        raise LabelError(f"labels must lie in [0, {k}); got range [{y.min()}, {y.max()}]")
    return y


def _wrap(x):
    return x if isinstance(x, nn.Var) else nn.Var(nn.as_tensor2d(x))


def _out(v: nn.Var, was_var: bool):
    return v if was_var else float(v.value.item())


# ---------------------------------------------------------------- CE and L2


def cross_entropy(logits, labels):
    was_var = isinstance(logits, nn.Var)
    logits = _wrap(logits)
    y = _check_labels(labels, logits.shape[1])
    if y.size != logits.shape[0]:
        raise LabelError(f"{y.size} labels for {logits.shape[0]} rows")
    return _out(nn.cross_entropy_op(logits, y), was_var)


def l2_penalty(z):
    """Batch mean of squared Euclidean latent norms."""
    was_var = isinstance(z, nn.Var)
    z = _wrap(z)
    return _out(nn.mean_all(nn.row_sq_norm(z)), was_var)


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    l2: float
    gamma_used: float
    total: float
    auxiliary: float | None = None
    auxiliary_weight: float = 0.0


def combined_loss(trace, labels, gamma: float) -> LossBreakdown:
    """CE on the logits plus ``gamma`` times the L2 penalty on ``trace.z``."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    ce = cross_entropy(trace.logits, labels)
    l2 = l2_penalty(trace.z)
    return LossBreakdown(ce=ce, l2=l2, gamma_used=gamma, total=ce + gamma * l2)


# ---------------------------------------------------------------- schedules


@dataclass(frozen=True)
class GammaSchedule:
    gamma0: float = 1e-2
    gamma_step: float = 1.05
    gamma_max: float = 1e6

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ValueError("gamma0 must be positive")
        if not self.gamma_step > 1:
            raise ValueError("gamma_step must exceed 1")
        if not self.gamma0 <= self.gamma_max:
            raise ValueError("gamma0 must not exceed gamma_max")


def gamma_at(schedule: GammaSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    # compare in log space so huge epochs never overflow
    if epoch * math.log(schedule.gamma_step) >= math.log(schedule.gamma_max / schedule.gamma0):
        return float(schedule.gamma_max)
    return float(min(schedule.gamma0 * schedule.gamma_step**epoch, schedule.gamma_max))


@dataclass(frozen=True)
class MarginSchedule:
    s_start: float = 16.0
    s_end: float = 64.0
    arc_start: float = 0.1
    arc_end: float = 0.5
    cos_start: float = 0.05
    cos_end: float = 0.25


def margin_at(schedule: MarginSchedule, epoch: int, total_epochs: int) -> tuple[float, float, float]:
    """Linear ramp of (scale, arcface margin, cosface margin) over the run."""
    if total_epochs <= 0:
        frac = 1.0
    else:
        frac = min(max(epoch / total_epochs, 0.0), 1.0)

    def lerp(a, b):
        return a + (b - a) * frac

    return (
        lerp(schedule.s_start, schedule.s_end),
        lerp(schedule.arc_start, schedule.arc_end),
        lerp(schedule.cos_start, schedule.cos_end),
    )


# ---------------------------------------------------------------- comparison losses


def supcon_loss(features, labels, temperature: float = 0.05):
    """Supervised contrastive loss over cosine similarities.

    Anchors without a positive in the batch are skipped; if none has one the
    loss is 0 and a ``RuntimeWarning`` is emitted.
    """
    was_var = isinstance(features, nn.Var)
    f = _wrap(features)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = f.shape[0]
    if n < 2:
        raise ValueError("supcon_loss needs at least two samples")
    same = y[:, None] == y[None, :]
    not_self = ~np.eye(n, dtype=bool)
    pos = same & not_self
    n_pos = pos.sum(axis=1)
    anchors = n_pos > 0
    if not anchors.any():
        warnings.warn("supcon_loss: no anchor has a positive in this batch", RuntimeWarning, stacklevel=2)
        zero = nn.scale(nn.total(f), 0.0)
        return _out(zero, was_var)
    u = nn.normalize_rows(f)
    sim = nn.scale(nn.matmul(u, nn.transpose(u)), 1.0 / temperature)
    lse = nn.logsumexp_op(sim, mask=not_self)
    # per-anchor weights 1/|P(i)|, averaged over anchors that have positives
    w = np.where(pos, 1.0 / np.maximum(n_pos, 1)[:, None], 0.0) / anchors.sum()
    pos_term = nn.total(nn.mul(sim, w))
    lse_term = nn.total(nn.mul(lse, w.sum(axis=1, keepdims=True)))
    return _out(nn.add(lse_term, nn.scale(pos_term, -1.0)), was_var)


def _cosines(features, class_weights) -> nn.Var:
    """(N, K) cosines between feature rows and class-weight rows."""
    return nn.matmul(nn.normalize_rows(features), nn.transpose(nn.normalize_rows(class_weights)))


def arcface_loss(features, labels, class_weights, s: float, m: float):
    """CE over ``s*cos(theta_k)`` with the true-class angle widened to ``theta_y + m``."""
    was_var = isinstance(features, nn.Var) or isinstance(class_weights, nn.Var)
    f, w = _wrap(features), _wrap(class_weights)
    y = _check_labels(labels, w.shape[0])
    cos = _cosines(f, w)
    target = nn.cos_op(nn.add(nn.arccos_op(nn.pick(cos, y)), m))
    onehot = np.zeros(cos.shape)
    onehot[np.arange(cos.shape[0]), y] = 1.0
    logits = nn.scale(nn.add(cos, nn.mul(nn.add(target, nn.scale(nn.pick(cos, y), -1.0)), onehot)), s)
    return _out(nn.cross_entropy_op(logits, y), was_var)


def cosface_loss(features, labels, class_weights, s: float, m: float):
    """CE over ``s*cos(theta_k)`` with ``m`` subtracted from the true-class cosine."""
    was_var = isinstance(features, nn.Var) or isinstance(class_weights, nn.Var)
    f, w = _wrap(features), _wrap(class_weights)
    y = _check_labels(labels, w.shape[0])
    cos = _cosines(f, w)
    onehot = np.zeros(cos.shape)
    onehot[np.arange(cos.shape[0]), y] = 1.0
    logits = nn.scale(nn.add(cos, -m * onehot), s)
    return _out(nn.cross_entropy_op(logits, y), was_var)
