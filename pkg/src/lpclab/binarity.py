"""Two-component 1-D Gaussian mixtures and the per-coordinate binarity scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .metrics import LatentBatch, MetricInputError

VAR_FLOOR = 1e-12
LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class GmmFit:
    means: tuple[float, float]
    stds: tuple[float, float]
    weights: tuple[float, float]
    mean_log_likelihood: float
    iterations: int
    converged: bool


def _component_logpdf(x, mu, var, w):
    # (n, 2) log of w_j * N(x | mu_j, var_j)
    return np.log(w) - 0.5 * (LOG_2PI + np.log(var) + (x[:, None] - mu) ** 2 / var)


def mixture_logpdf(x, fit: GmmFit) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    var = np.square(fit.stds)
    return logsumexp(_component_logpdf(x, np.array(fit.means), var, np.array(fit.weights)), axis=1)


def fit_bimodal_gmm(values, tol: float = 1e-8, max_iter: int = 500) -> GmmFit:
    """EM for a two-component mixture.

    Means start at the 25th/75th percentiles with equal weights and the
    sample variance shared by both components. Stops when the mean
    log-likelihood improves by less than ``tol``.
    """
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    if x.size < 4:
        raise MetricInputError(f"need at least 4 values, got {x.size}")
    mu = np.percentile(x, [25, 75]).astype(np.float64)
    var = np.full(2, max(x.var(), VAR_FLOOR))
    w = np.array([0.5, 0.5])
    prev = -np.inf
    ll = -np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        comp = _component_logpdf(x, mu, var, w)
        norm = logsumexp(comp, axis=1)
        ll = float(norm.mean())
        if ll - prev < tol:
            converged = True
            break
        prev = ll
        resp = np.exp(comp - norm[:, None])
        nk = resp.sum(axis=0)
        # a component that lost all mass keeps its old parameters
        alive = nk > 1e-300
        safe = np.where(alive, nk, 1.0)
        new_mu = (resp * x[:, None]).sum(axis=0) / safe
        mu = np.where(alive, new_mu, mu)
        new_var = (resp * (x[:, None] - mu) ** 2).sum(axis=0) / safe
        var = np.maximum(np.where(alive, new_var, var), VAR_FLOOR)
        w = np.clip(nk / x.size, 1e-300, None)
        w = w / w.sum()
    order = np.argsort(mu, kind="stable")
    mu, var, w = mu[order], var[order], w[order]
    return GmmFit(
        means=(float(mu[0]), float(mu[1])),
        stds=(float(np.sqrt(var[0])), float(np.sqrt(var[1]))),
        weights=(float(w[0]), float(w[1])),
        mean_log_likelihood=ll,
        iterations=it,
        converged=converged,
    )


@dataclass(frozen=True)
class BinarityReport:
    llh: float
    sigma: float
    peaks: float
    llh_per_dim: tuple[float, ...]
    peaks_per_dim: tuple[float, ...]

    @property
    def min_llh(self) -> float:
        return min(self.llh_per_dim)

    @property
    def min_peaks(self) -> float:
        return min(self.peaks_per_dim)


def binarity_scores(batch: LatentBatch | np.ndarray) -> BinarityReport:
    """Fit a bimodal mixture to every latent coordinate and average the scores."""
    Z = batch.Z if isinstance(batch, LatentBatch) else np.asarray(batch, dtype=np.float64)
    llh, sig, peaks = [], [], []
    for j in range(Z.shape[1]):
        fit = fit_bimodal_gmm(Z[:, j])
        llh.append(float(mixture_logpdf(Z[:, j], fit).mean()))
        s = 0.5 * (fit.stds[0] + fit.stds[1])
        sig.append(s)
        peaks.append(abs(fit.means[1] - fit.means[0]) / s)
    return BinarityReport(
        llh=float(np.mean(llh)),
        sigma=float(np.mean(sig)),
        peaks=float(np.mean(peaks)),
        llh_per_dim=tuple(llh),
        peaks_per_dim=tuple(peaks),
    )
