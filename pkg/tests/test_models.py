import math
from collections import OrderedDict

import numpy as np
import pytest

from lpclab import nn
from lpclab.models import (
    NO_HEAD,
    VARIANTS,
    ArchitectureSpec,
    ConfigError,
    ModelInstance,
    build_model,
    forward_full,
    load_checkpoint,
    save_checkpoint,
)


def spec(variant, **kw):
    kw.setdefault("input_dim", 3)
    kw.setdefault("num_classes", 4)
    kw.setdefault("backbone_widths", (8, 6))
    return ArchitectureSpec(variant, **kw)


@pytest.mark.parametrize("variant", sorted(NO_HEAD))
def test_no_head_variants_have_z_equal_h(variant, rng):
    m = build_model(spec(variant), seed=1)
    tr = forward_full(m, rng.normal(size=(7, 3)))
    assert tr.z is tr.h or np.array_equal(tr.z, tr.h)
    assert tr.logits.shape == (7, 4)


@pytest.mark.parametrize("variant", sorted(NO_HEAD))
def test_no_head_variants_reject_penultimate_dim(variant):
    with pytest.raises(ConfigError):
        spec(variant, penultimate_dim=4)


def test_linpen_and_lpc_share_shapes():
    a = build_model(spec("LPC", penultimate_dim=5), 0)
    b = build_model(spec("LinPen", penultimate_dim=5), 0)
    assert [(k, v.shape) for k, v in a.params.items()] == [(k, v.shape) for k, v in b.params.items()]


def test_family_default_widths_are_ordered():
    dims = [spec(v).penultimate_dim for v in ("LPC-Narrow", "LPC", "LPC-Wide")]
    assert dims[0] < dims[1] < dims[2]


def test_classifier_has_no_bias():
    for v in VARIANTS:
        names = list(build_model(spec(v), 0).params)
        assert "classifier.W" in names
        assert not any(n.startswith("classifier.b") for n in names)


def test_nonlinpen_head_applies_swish(rng):
    lin = build_model(spec("LinPen"), 3)
    non = ModelInstance(spec("NonlinPen"), OrderedDict((k, v.copy()) for k, v in lin.params.items()))
    x = rng.normal(size=(5, 3))
    a, b = forward_full(lin, x), forward_full(non, x)
    np.testing.assert_array_equal(a.h, b.h)
    np.testing.assert_allclose(b.z, nn.swish(a.z))
    assert np.any(a.z < 0)
    assert not np.allclose(a.z, b.z)


def test_degenerate_identity_model_passes_input_through(rng):
    s = ArchitectureSpec("NoPen", input_dim=3, num_classes=3, backbone_widths=())
    m = ModelInstance(s, OrderedDict({"classifier.W": np.eye(3)}))
    x = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(forward_full(m, x).logits, x)


def test_identical_rows_identical_trace(rng):
    m = build_model(spec("LPC"), 0)
    x = np.repeat(rng.normal(size=(1, 3)), 2, axis=0)
    for arr in forward_full(m, x):
        assert np.array_equal(arr[0], arr[1])


def test_forward_is_pure(rng):
    m = build_model(spec("LPC-SCL"), 5)
    x = rng.normal(size=(6, 3))
    a, b = forward_full(m, x), forward_full(m, x)
    for u, v in zip(a, b):
        assert u.tobytes() == v.tobytes()


def test_forward_matches_hand_stepped_2_16_2():
    s = ArchitectureSpec("NoPen", input_dim=2, num_classes=2, backbone_widths=(16,))
    m = build_model(s, seed=7)
    W1, b1, W2 = m.params["backbone.0.W"], m.params["backbone.0.b"], m.params["classifier.W"]
    x = [0.3, -1.2]
    hidden = []
    for j in range(16):
        a = x[0] * W1[0, j] + x[1] * W1[1, j] + b1[0, j]
        hidden.append(a / (1.0 + math.exp(-a)))
    logits = [sum(hidden[j] * W2[j, k] for j in range(16)) for k in range(2)]
    np.testing.assert_allclose(forward_full(m, [x]).logits[0], logits, rtol=1e-13)


def test_width_mismatch_raises():
    m = build_model(spec("LPC"), 0)
    with pytest.raises(nn.DimensionError):
        forward_full(m, np.zeros((2, 5)))


def test_same_seed_same_init():
    a, b = build_model(spec("LPC"), 11), build_model(spec("LPC"), 11)
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    c = build_model(spec("LPC"), 12)
    assert not np.array_equal(a.params["head.W"], c.params["head.W"])


@pytest.mark.parametrize("variant", ["LPC", "NoPen", "NonlinPen"])
def test_checkpoint_round_trip(variant, tmp_path, rng):
    m = build_model(spec(variant), 2)
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path)
    back = load_checkpoint(path)
    assert back.spec == m.spec
    for k in m.params:
        assert back.params[k].tobytes() == m.params[k].tobytes()
    header = path.read_bytes().split(b"\nend\n")[0].decode()
    r, c = m.params["classifier.W"].shape
    assert f"param classifier.W {r} {c}" in header


def test_checkpoint_truncated(tmp_path):
    m = build_model(spec("LPC"), 2)
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(path)
