"""DeepFool minimal perturbations and dataset-level robustness sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .datasets import Dataset
from .models import ModelInstance, forward_full, forward_tape


class DeepFoolAbort(RuntimeError):
    pass


@dataclass(frozen=True)
class DeepFoolConfig:
    max_iter: int = 50
    overshoot: float = 0.02
    sample_count: int = 1000

    def __post_init__(self):
        if self.max_iter < 1 or self.overshoot < 0 or self.sample_count < 1:
            raise ValueError("invalid DeepFoolConfig")


@dataclass(frozen=True)
class PerturbationResult:
    r: np.ndarray
    iterations: int
    rel_norm: float
    original_label: int
    final_label: int
    converged: bool


def logit_gradients(model: ModelInstance, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logits at ``x`` and their (K, d) Jacobian, one backward pass per class."""
    K = model.spec.num_classes
    grads = np.empty((K, x.size))
    logits = None
    for k in range(K):
        tape = nn.Tape()
        leaves, _, _, out = forward_tape(model, x.reshape(1, -1), tape, watch_input=True)
        if logits is None:
            logits = out.value[0].copy()
        g = nn.backward(tape, nn.pick(out, [k]))
        grads[k] = g["x"][0]
    return logits, grads


def deepfool(model: ModelInstance, x, config: DeepFoolConfig = DeepFoolConfig()) -> PerturbationResult:
    """Iteratively step to the linearized nearest decision boundary until the prediction flips.

    The reference label is the model's own prediction at ``x``. Raises
    :class:`DeepFoolAbort` when every logit-gradient difference vanishes.
    """
    x0 = np.asarray(x, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(x0)):
        raise nn.NonFiniteError("deepfool: non-finite input")
    logits0 = forward_full(model, x0.reshape(1, -1)).logits[0]
    if not np.all(np.isfinite(logits0)):
        raise nn.NonFiniteError("deepfool: non-finite forward")
    y0 = int(np.argmax(logits0))
    scale = 1.0 + config.overshoot
    r_tot = np.zeros_like(x0)
    xi = x0
    label = y0
    it = 0
    while label == y0 and it < config.max_iter:
        f, G = logit_gradients(model, xi)
        w = G - G[y0]
        df = np.abs(f - f[y0])
        wn = np.linalg.norm(w, axis=1)
        usable = wn >= 1e-20
        usable[y0] = False
        if not usable.any():
            raise DeepFoolAbort(f"deepfool: logit gradient differences vanish at iteration {it}")
        dist = np.full(f.size, np.inf)
        dist[usable] = df[usable] / wn[usable]
        k = int(np.argmin(dist))
        r_tot = r_tot + (df[k] / wn[k] ** 2) * w[k]
        xi = x0 + scale * r_tot
        it += 1
        label = int(np.argmax(forward_full(model, xi.reshape(1, -1)).logits[0]))
    r = scale * r_tot
    xn = np.linalg.norm(x0)
    rel = float(np.linalg.norm(r) / xn) if xn > 0 else math.inf
    return PerturbationResult(r, it, rel, y0, label, label != y0)


@dataclass(frozen=True)
class RobustnessSummary:
    mean: float
    median: float
    std: float
    mean_all: float
    converged_frac: float
    n_samples: int
    n_converged: int

    @property
    def empty(self) -> bool:
        return self.n_converged == 0


def robustness_sweep(
    model: ModelInstance, data: Dataset, config: DeepFoolConfig = DeepFoolConfig(), seed: int = 0
) -> RobustnessSummary:
    """DeepFool over a seeded sample of ``data``.

    ``mean``/``median``/``std`` cover converged samples only; ``mean_all``
    also includes the final perturbation of non-converged (but not aborted)
    samples.
    """
    n = len(data)
    if n == 0:
        raise ValueError("empty dataset")
    m = min(config.sample_count, n)
    idx = np.sort(nn.seed_rng(seed).choice(n, size=m, replace=False))
    ok, every = [], []
    for i in idx:
        try:
            res = deepfool(model, data.X[i], config)
        except DeepFoolAbort:
            continue
        every.append(res.rel_norm)
        if res.converged:
            ok.append(res.rel_norm)
    ok_a = np.asarray(ok)
    nan = math.nan
    return RobustnessSummary(
        mean=float(ok_a.mean()) if ok else nan,
        median=float(np.median(ok_a)) if ok else nan,
        std=float(ok_a.std()) if ok else nan,
        mean_all=float(np.mean(every)) if every else nan,
        converged_frac=len(ok) / m,
        n_samples=m,
        n_converged=len(ok),
    )
