from collections import OrderedDict

import numpy as np
import pytest

from lpclab.datasets import BlobSpec, Dataset, gaussian_blobs
from lpclab.models import ArchitectureSpec, ModelInstance, build_model, forward_full
from lpclab.robustness import DeepFoolAbort, DeepFoolConfig, deepfool, robustness_sweep


def linear_model(W):
    W = np.asarray(W, dtype=np.float64)
    s = ArchitectureSpec("NoPen", input_dim=W.shape[0], num_classes=W.shape[1], backbone_widths=())
    return ModelInstance(s, OrderedDict({"classifier.W": W}))


def hyperplane_distance(W, x):
    f = x @ W
    y = int(np.argmax(f))
    return min(abs(f[k] - f[y]) / np.linalg.norm(W[:, k] - W[:, y]) for k in range(W.shape[1]) if k != y)


def test_affine_binary_closed_form(rng):
    W = rng.normal(size=(5, 2))
    m = linear_model(W)
    for _ in range(20):
        x = rng.normal(size=5)
        res = deepfool(m, x)
        f = x @ W
        exact = abs(f[1] - f[0]) / np.linalg.norm(W[:, 1] - W[:, 0])
        assert np.linalg.norm(res.r) / 1.02 == pytest.approx(exact, rel=1e-10)
        assert res.iterations == 1 and res.converged
        assert res.rel_norm == pytest.approx(np.linalg.norm(res.r) / np.linalg.norm(x))


def test_converged_flips_prediction(rng):
    m = build_model(ArchitectureSpec("LPC", input_dim=3, num_classes=4, backbone_widths=(8,)), 1)
    for _ in range(5):
        x = rng.normal(size=3)
        res = deepfool(m, x)
        if res.converged:
            before = forward_full(m, [x]).logits.argmax()
            after = forward_full(m, [x + res.r]).logits.argmax()
            assert before != after == res.final_label


def test_zero_weights_abort_and_empty_sweep():
    m = linear_model(np.zeros((2, 3)))
    with pytest.raises(DeepFoolAbort):
        deepfool(m, np.ones(2))
    data = gaussian_blobs(BlobSpec(n_per_class=5))
    s = robustness_sweep(m, data, DeepFoolConfig(sample_count=10))
    assert s.converged_frac == 0.0 and s.empty and np.isnan(s.mean)


def test_linear_model_on_noiseless_blobs_matches_closed_form(rng):
    data = gaussian_blobs(BlobSpec(K=3, n_per_class=10, sigma=0.0))
    W = rng.normal(size=(2, 3))
    m = linear_model(W)
    cfg = DeepFoolConfig(sample_count=30)
    summary = robustness_sweep(m, data, cfg, seed=4)
    expected = [1.02 * hyperplane_distance(W, x) / np.linalg.norm(x) for x in data.X]
    assert summary.n_converged == 30
    assert summary.mean == pytest.approx(np.mean(expected), rel=1e-9)


def test_sweep_deterministic():
    m = build_model(ArchitectureSpec("NoPen", input_dim=2, num_classes=3, backbone_widths=(8,)), 0)
    data = gaussian_blobs(BlobSpec(n_per_class=20))
    cfg = DeepFoolConfig(sample_count=15)
    assert robustness_sweep(m, data, cfg, seed=3) == robustness_sweep(m, data, cfg, seed=3)


def test_scaling_weights_leaves_perturbation_unchanged(rng):
    W = rng.normal(size=(4, 3))
    x = rng.normal(size=4)
    a = deepfool(linear_model(W), x)
    b = deepfool(linear_model(7.5 * W), x)
    np.testing.assert_allclose(a.r, b.r, rtol=1e-12)
    assert a.final_label == b.final_label


def test_rel_norm_invariant_to_input_scaling(rng):
    W = rng.normal(size=(4, 3))
    x = rng.normal(size=4)
    m = linear_model(W)
    assert deepfool(m, 3.0 * x).rel_norm == pytest.approx(deepfool(m, x).rel_norm, rel=1e-12)


def test_non_finite_input_rejected():
    from lpclab.nn import NonFiniteError

    with pytest.raises(NonFiniteError):
        deepfool(linear_model(np.eye(2)), [np.nan, 0.0])
