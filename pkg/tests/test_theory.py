import csv
import math

import numpy as np
import pytest

from lpclab.theory import (
    FrozenClassifier,
    LatentCloud,
    ce_gradient,
    export_trajectories,
    latent_gradient,
    point_loss,
    separated_cloud,
    shell_stats,
    simplex_classifier,
    simulate_collapse,
)
from lpclab.nn import softmax


def fd_grad(f, z, h=1e-5):
    g = np.empty_like(z)
    for j in range(z.size):
        e = np.zeros_like(z)
        e[j] = h
        g[j] = (f(z + e) - f(z - e)) / (2 * h)
    return g


def test_latent_gradient_matches_finite_differences(rng):
    worst = 0.0
    for _ in range(100):
        K, P = rng.integers(2, 6), rng.integers(2, 6)
        clf = FrozenClassifier(rng.normal(size=(K, P)), rng.normal(size=K))
        z = rng.normal(size=P)
        y = int(rng.integers(K))
        gamma = float(rng.uniform(0, 2))
        g = latent_gradient(z, y, clf, gamma)
        fd = fd_grad(lambda v: point_loss(v, y, clf, gamma), z)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
    assert worst < 1e-6


def test_saturated_softmax_kills_ce_term():
    clf = simplex_classifier(3)
    z = 60.0 * clf.W[1]
    p = softmax(clf.logits(z))[0]
    assert p[1] > 1 - 1e-9
    assert np.linalg.norm(ce_gradient(p, 1, clf)) < 1e-6
    assert z @ latent_gradient(z, 1, clf, 0.5) > 0


def test_compression_dominates_far_out():
    clf = simplex_classifier(3)
    z = np.array([30.0, 5.0])
    g = latent_gradient(z, 0, clf, 10.0)
    cos = g @ z / (np.linalg.norm(g) * np.linalg.norm(z))
    assert math.degrees(math.acos(min(cos, 1.0))) < 1.0


def test_negative_gamma_rejected():
    with pytest.raises(ValueError):
        latent_gradient(np.ones(2), 0, simplex_classifier(3), -1.0)


def test_duplicate_rows_rejected():
    with pytest.raises(ValueError):
        FrozenClassifier(np.ones((2, 3)))


def test_simplex_classifier_geometry():
    clf = simplex_classifier(4, 5)
    G = clf.W @ clf.W.T
    np.testing.assert_allclose(np.diag(G), 1.0, atol=1e-14)
    off = G[~np.eye(4, dtype=bool)]
    np.testing.assert_allclose(off, -1 / 3, atol=1e-14)


def test_zero_gamma_norms_grow():
    clf = simplex_classifier(3)
    cloud = separated_cloud(clf, n_per_class=10, seed=1)
    (run,) = simulate_collapse(clf, cloud, [0.0], steps=200, record_every=1)
    norms = np.array([np.linalg.norm(Z, axis=1) for _, Z in run.cloud.history])
    assert np.all(np.diff(norms, axis=0) > 0)


def test_spread_and_diameter_shrink_with_gamma():
    clf = simplex_classifier(3)
    runs = simulate_collapse(clf, separated_cloud(clf, seed=2), [0.01, 0.1, 1.0])
    spread = [max(s.radial_spread for s in r.stats.values()) for r in runs]
    diam = [max(s.diameter for s in r.stats.values()) for r in runs]
    assert spread[0] > spread[1] > spread[2]
    assert diam[0] >= diam[1] >= diam[2]
    for r in runs:
        radii = [s.radius for s in r.stats.values()]
        assert max(radii) / min(radii) - 1 < 0.05


def test_misclassified_init_rejected():
    clf = simplex_classifier(3)
    cloud = LatentCloud([clf.W[1], clf.W[2]], [0, 2])
    with pytest.raises(ValueError, match=r"\[0\]"):
        simulate_collapse(clf, cloud, [0.1])


def test_shell_stats_geometry(rng):
    same = LatentCloud(np.tile([1.0, 2.0], (5, 1)), [0] * 5)
    s = shell_stats(same)[0]
    assert s.radial_spread == 0 and s.diameter == 0
    ang = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    circle = LatentCloud(2 * np.column_stack([np.cos(ang), np.sin(ang)]), [0] * 8)
    s = shell_stats(circle)[0]
    assert s.radius == pytest.approx(2.0)
    assert s.radial_spread == pytest.approx(0.0, abs=1e-15)
    assert s.diameter == pytest.approx(4.0)
    Z = rng.normal(size=(12, 3))
    y = np.array([0, 1] * 6)
    for c, st_ in shell_stats(LatentCloud(Z, y)).items():
        pts = Z[y == c]
        d = max(np.linalg.norm(a - b) for a in pts for b in pts)
        assert st_.diameter == pytest.approx(d, rel=1e-14)


def test_trajectory_export(tmp_path):
    clf = simplex_classifier(3)
    runs = simulate_collapse(clf, separated_cloud(clf, n_per_class=4), [0.1, 1.0], steps=20, record_every=10)
    path = tmp_path / "traj.csv"
    export_trajectories(path, runs)
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == ["gamma", "step", "point_id", "label", "z0", "z1", "norm"]
    assert len(rows) == 2 * 3 * 12
    assert {r["step"] for r in rows} == {"0", "10", "20"}
    last = [r for r in rows if r["gamma"] == "1.0" and r["step"] == "20"]
    Z = np.array([[float(r["z0"]), float(r["z1"])] for r in last])
    np.testing.assert_array_equal(Z, runs[1].cloud.Z)
