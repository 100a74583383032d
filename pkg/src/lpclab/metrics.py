"""Geometry of penultimate latents: scatter matrices, NC1/NC2, separation ratio, norm CoV, kNN entropy."""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma, gammaln

log = logging.getLogger(__name__)

EPS_DEN = 1e-12
EPS_DIST = 1e-30
PINV_RTOL = 1e-10


class MetricInputError(ValueError):
    pass


@dataclass(frozen=True)
class LatentBatch:
    Z: np.ndarray
    labels: np.ndarray
    K: int

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=np.float64)
        if Z.ndim == 1:
            Z = Z.reshape(-1, 1)
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if Z.ndim != 2 or Z.shape[0] != y.size or Z.shape[1] < 1:
            raise MetricInputError(f"latents {Z.shape} do not match {y.size} labels")
        if y.size and (y.min() < 0 or y.max() >= self.K):
            raise MetricInputError(f"labels outside [0, {self.K})")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "labels", y)

    @property
    def N(self) -> int:
        return self.Z.shape[0]

    @property
    def P(self) -> int:
        return self.Z.shape[1]


@dataclass(frozen=True)
class ClassStats:
    means: np.ndarray  # (K, P)
    global_mean: np.ndarray  # (P,)
    counts: np.ndarray  # (K,)


def class_stats(batch: LatentBatch) -> ClassStats:
    counts = np.bincount(batch.labels, minlength=batch.K)
    if np.any(counts == 0):
        raise MetricInputError(f"empty classes: {np.flatnonzero(counts == 0).tolist()}")
    sums = np.zeros((batch.K, batch.P))
    np.add.at(sums, batch.labels, batch.Z)
    means = sums / counts[:, None]
    return ClassStats(means, batch.Z.mean(axis=0), counts)


def within_class_cov(batch: LatentBatch, stats: ClassStats | None = None) -> tuple[np.ndarray, float]:
    """Within-class scatter, each sample against its own class mean, normalized by N."""
    stats = class_stats(batch) if stats is None else stats
    D = batch.Z - stats.means[batch.labels]
    sw = D.T @ D / batch.N
    return sw, float(np.trace(sw))


def between_class_cov(stats: ClassStats) -> np.ndarray:
    """Unweighted average over classes of the centered mean outer products."""
    K = stats.means.shape[0]
    if K < 2:
        raise MetricInputError("between-class covariance needs K >= 2")
    M = stats.means - stats.global_mean
    return M.T @ M / K


def pinv_psd(A: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    A = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(A)
    top = np.abs(w).max() if w.size else 0.0
    keep = np.abs(w) > rtol * top
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / w[keep]
    return (V * inv) @ V.T


def nc1_metric(sigma_w: np.ndarray, sigma_b: np.ndarray, K: int, P: int) -> float:
    return float(np.trace(sigma_w @ pinv_psd(sigma_b)) / (K * P))


def separation_ratio(batch: LatentBatch, stats: ClassStats | None = None) -> tuple[np.ndarray, float]:
    """Per-sample nearest-other-centroid distance over own-centroid distance, and its mean."""
    stats = class_stats(batch) if stats is None else stats
    if batch.K < 2:
        raise MetricInputError("separation ratio needs K >= 2")
    dist = np.linalg.norm(batch.Z[:, None, :] - stats.means[None, :, :], axis=2)  # (N, K)
    rows = np.arange(batch.N)
    own = dist[rows, batch.labels]
    dist[rows, batch.labels] = np.inf
    other = dist.min(axis=1)
    guarded = own < EPS_DEN
    if guarded.any():
        log.debug("separation_ratio: %d samples hit the denominator guard", int(guarded.sum()))
    ratio = other / np.maximum(own, EPS_DEN)
    return ratio, float(ratio.mean())


def norm_cov(Z: np.ndarray | LatentBatch) -> float:
    """Population std of row norms divided by their mean."""
    Z = Z.Z if isinstance(Z, LatentBatch) else np.asarray(Z, dtype=np.float64)
    norms = np.linalg.norm(Z.reshape(Z.shape[0], -1), axis=1)
    mean = norms.mean()
    if not mean > 0:
        raise MetricInputError("norm_cov undefined for all-zero latents")
    return float(norms.std() / mean)


def log_unit_ball_volume(P: int) -> float:
    return 0.5 * P * math.log(math.pi) - float(gammaln(0.5 * P + 1.0))


def kl_entropy(Z: np.ndarray | LatentBatch, k: int = 20) -> float:
    """Kozachenko-Leonenko differential entropy (nats) divided by the dimension."""
    Z = Z.Z if isinstance(Z, LatentBatch) else np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z.reshape(-1, 1)
    N, P = Z.shape
    if N <= 1:
        raise MetricInputError(f"kl_entropy needs more than one sample, got N={N}")
    if N <= k:
        log.warning("kl_entropy: k=%d reduced to N-1=%d", k, N - 1)
        k = N - 1
    tree = cKDTree(Z)
    dist, _ = tree.query(Z, k=k + 1)
    r = dist[:, -1]
    if np.any(r < EPS_DIST):
        log.debug("kl_entropy: %d neighbour distances clamped", int((r < EPS_DIST).sum()))
    r = np.maximum(r, EPS_DIST)
    h = digamma(N) - digamma(k) + log_unit_ball_volume(P) + P * np.mean(np.log(r))
    return float(h / P)


def nc2_metrics(stats: ClassStats) -> tuple[float, float, float]:
    """(equinorm CoV, mean |cos + 1/(K-1)|, std of pairwise cosines) of centered class means."""
    K = stats.means.shape[0]
    if K < 2:
        raise MetricInputError("NC2 needs K >= 2")
    V = stats.means - stats.global_mean
    norms = np.linalg.norm(V, axis=1)
    if np.any(norms == 0):
        raise MetricInputError("a centered class mean has zero norm")
    equinorm = float(norms.std() / norms.mean())
    U = V / norms[:, None]
    iu = np.triu_indices(K, 1)
    cos = (U @ U.T)[iu]
    return equinorm, float(np.mean(np.abs(cos + 1.0 / (K - 1)))), float(cos.std())


def discrete_entropy_bound(K: int) -> float:
    """Entropy (nats) of K equally likely collapse points."""
    if K < 1:
        raise ValueError("K must be >= 1")
    return math.log(K)


@dataclass(frozen=True)
class CollapseReport:
    sigma_w_trace: float
    nc1: float
    separation_ratio_mean: float
    norm_cov: float
    norm_cov_class_means: float
    entropy_per_dim: float
    nc2_equinorm: float
    nc2_equiangularity_dev: float
    nc2_cos_std: float

    def as_dict(self) -> dict:
        return asdict(self)


def collapse_report(batch: LatentBatch, k: int = 20) -> CollapseReport:
    stats = class_stats(batch)
    sw, tr = within_class_cov(batch, stats)
    sb = between_class_cov(stats)
    _, rbar = separation_ratio(batch, stats)
    try:
        nc2 = nc2_metrics(stats)
    except MetricInputError:
        nc2 = (math.nan, math.nan, math.nan)
    try:
        ncov_means = norm_cov(stats.means)
    except MetricInputError:
        ncov_means = math.nan
    return CollapseReport(
        sigma_w_trace=tr,
        nc1=nc1_metric(sw, sb, batch.K, batch.P),
        separation_ratio_mean=rbar,
        norm_cov=norm_cov(batch.Z),
        norm_cov_class_means=ncov_means,
        entropy_per_dim=kl_entropy(batch.Z, k),
        nc2_equinorm=nc2[0],
        nc2_equiangularity_dev=nc2[1],
        nc2_cos_std=nc2[2],
    )


# ---------------------------------------------------------------- LPCZ latent files

LPCZ_MAGIC = b"LPCZ"
LPCZ_VERSION = 1


def write_latents(path, batch: LatentBatch) -> None:
    header = LPCZ_MAGIC + struct.pack("<IIII", LPCZ_VERSION, batch.N, batch.P, batch.K)
    body = np.ascontiguousarray(batch.Z, dtype="<f8").tobytes() + batch.labels.astype("<u4").tobytes()
    Path(path).write_bytes(header + body)


def read_latents(path) -> LatentBatch:
    raw = Path(path).read_bytes()
    if raw[:4] != LPCZ_MAGIC:
        raise ValueError(f"{path}: byte 0: missing LPCZ magic")
    if len(raw) < 20:
        raise ValueError(f"{path}: byte {len(raw)}: header truncated")
    version, N, P, K = struct.unpack_from("<IIII", raw, 4)
    if version != LPCZ_VERSION:
        raise ValueError(f"{path}: byte 4: unsupported version {version}")
    need = 20 + 8 * N * P + 4 * N
    if len(raw) != need:
        raise ValueError(f"{path}: byte {len(raw)}: expected {need} bytes")
    Z = np.frombuffer(raw, dtype="<f8", count=N * P, offset=20).astype(np.float64).reshape(N, P)
    y = np.frombuffer(raw, dtype="<u4", count=N, offset=20 + 8 * N * P).astype(np.int64)
    return LatentBatch(Z, y, K)
