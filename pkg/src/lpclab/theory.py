"""Latent dynamics against a frozen linear classifier.

Each latent point is moved by plain gradient descent on
``CE(W z + b, y) + gamma * |z|^2``. With ``gamma = 0`` the points drift
outward forever; with ``gamma > 0`` every class is pulled onto a single
point on a common shell, faster and tighter for larger ``gamma``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import seed_rng, softmax


@dataclass(frozen=True)
class FrozenClassifier:
    W: np.ndarray  # (K, P)
    b: np.ndarray | None = None

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        b = np.zeros(W.shape[0]) if self.b is None else np.asarray(self.b, dtype=np.float64).reshape(-1)
        if len(np.unique(W.round(12), axis=0)) != W.shape[0]:
            raise ValueError("classifier rows must be distinct")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @property
    def K(self) -> int:
        return self.W.shape[0]

    def logits(self, Z: np.ndarray) -> np.ndarray:
        return np.atleast_2d(Z) @ self.W.T + self.b


def simplex_classifier(K: int, P: int | None = None, scale: float = 1.0) -> FrozenClassifier:
    """Centered regular simplex with unit rows, embedded in P >= K-1 dimensions."""
    P = K - 1 if P is None else P
    if P < K - 1:
        raise ValueError("a K-simplex needs at least K-1 dimensions")
    if K == 3 and P == 2:
        ang = 2 * np.pi * np.arange(3) / 3
        W = np.column_stack([np.cos(ang), np.sin(ang)])
    else:
        E = np.eye(K) - 1.0 / K
        # orthonormal basis of the centered subspace
        U, _, _ = np.linalg.svd(E)
        W = E @ U[:, : K - 1]
        W = np.hstack([W, np.zeros((K, P - (K - 1)))])
    W = scale * W / np.linalg.norm(W, axis=1, keepdims=True)
    return FrozenClassifier(W)


def point_loss(z, label: int, clf: FrozenClassifier, gamma: float) -> float:
    f = clf.logits(np.asarray(z, dtype=np.float64))[0]
    m = f.max()
    return float(m + np.log(np.exp(f - m).sum()) - f[label] + gamma * np.dot(z, z))


def latent_gradient(z, label: int, clf: FrozenClassifier, gamma: float) -> np.ndarray:
    """Cross-entropy pull ``-W_y + sum_i p_i W_i`` plus compression ``2*gamma*z``."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    z = np.asarray(z, dtype=np.float64)
    p = softmax(clf.logits(z))[0]
    return ce_gradient(p, label, clf) + 2.0 * gamma * z


def ce_gradient(p: np.ndarray, label: int, clf: FrozenClassifier) -> np.ndarray:
    return p @ clf.W - clf.W[label]


@dataclass
class LatentCloud:
    Z: np.ndarray
    labels: np.ndarray
    history: list[tuple[int, np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if not np.all(np.isfinite(self.Z)):
            raise ValueError("latent cloud has non-finite points")


def separated_cloud(
    clf: FrozenClassifier, n_per_class: int = 30, radius: float = 1.0, spread: float = 0.3, seed: int = 0
) -> LatentCloud:
    """Points scattered around ``radius * W_p / |W_p|``; every point starts correctly classified."""
    rng = seed_rng(seed)
    dirs = clf.W / np.linalg.norm(clf.W, axis=1, keepdims=True)
    labels = np.repeat(np.arange(clf.K), n_per_class)
    Z = radius * dirs[labels] + spread * rng.standard_normal((labels.size, clf.W.shape[1]))
    wrong = np.flatnonzero(clf.logits(Z).argmax(axis=1) != labels)
    # redraw misclassified points until the cloud satisfies class separation
    while wrong.size:
        Z[wrong] = radius * dirs[labels[wrong]] + spread * rng.standard_normal((wrong.size, clf.W.shape[1]))
        wrong = np.flatnonzero(clf.logits(Z).argmax(axis=1) != labels)
    return LatentCloud(Z, labels)


@dataclass(frozen=True)
class ShellStats:
    radius: float
    radial_spread: float
    diameter: float


def shell_stats(cloud: LatentCloud) -> dict[int, ShellStats]:
    out = {}
    for c in np.unique(cloud.labels):
        pts = cloud.Z[cloud.labels == c]
        norms = np.linalg.norm(pts, axis=1)
        diffs = pts[:, None, :] - pts[None, :, :]
        diam = float(np.sqrt((diffs**2).sum(axis=2)).max())
        out[int(c)] = ShellStats(float(norms.mean()), float(norms.std()), diam)
    return out


def _cloud_loss_and_grad(Z, labels, clf, gamma):
    f = clf.logits(Z)
    m = f.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(f - m).sum(axis=1))
    rows = np.arange(Z.shape[0])
    loss = lse - f[rows, labels] + gamma * (Z * Z).sum(axis=1)
    p = np.exp(f - lse[:, None])
    grad = p @ clf.W - clf.W[labels] + 2.0 * gamma * Z
    return float(loss.sum()), grad


@dataclass
class CollapseRun:
    gamma: float
    stats: dict[int, ShellStats]
    cloud: LatentCloud
    step_size: float


def simulate_collapse(
    clf: FrozenClassifier,
    cloud: LatentCloud,
    gammas,
    steps: int = 2000,
    step_size: float = 0.1,
    record_every: int = 0,
) -> list[CollapseRun]:
    """Full-batch gradient descent on each latent, once per gamma.

    The step is halved whenever the summed loss would increase.
    ``record_every > 0`` stores snapshots in each returned cloud's history.
    """
    bad = np.flatnonzero(clf.logits(cloud.Z).argmax(axis=1) != cloud.labels)
    if bad.size:
        raise ValueError(f"class separation violated at init for points {bad.tolist()}")
    runs = []
    for gamma in gammas:
        Z = cloud.Z.copy()
        eta = step_size
        history = [(0, Z.copy())] if record_every else []
        loss, grad = _cloud_loss_and_grad(Z, cloud.labels, clf, gamma)
        for step in range(1, steps + 1):
            while True:
                Zn = Z - eta * grad
                ln, gn = _cloud_loss_and_grad(Zn, cloud.labels, clf, gamma)
                if ln <= loss or eta < 1e-12:
                    break
                eta *= 0.5
            Z, loss, grad = Zn, ln, gn
            if record_every and step % record_every == 0:
                history.append((step, Z.copy()))
        final = LatentCloud(Z, cloud.labels.copy(), history)
        runs.append(CollapseRun(float(gamma), shell_stats(final), final, eta))
    return runs


def export_trajectories(path, runs: list[CollapseRun]) -> None:
    P = runs[0].cloud.Z.shape[1] if runs else 0
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["gamma", "step", "point_id", "label"] + [f"z{j}" for j in range(P)] + ["norm"])
        for run in runs:
            snaps = run.cloud.history or [(-1, run.cloud.Z)]
            for step, Z in snaps:
                norms = np.linalg.norm(Z, axis=1)
                for i, (z, lab) in enumerate(zip(Z, run.cloud.labels)):
                    w.writerow([repr(run.gamma), step, i, int(lab)] + [repr(float(v)) for v in z] + [repr(float(norms[i]))])
