import math
from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as nph

from lpclab import nn

from conftest import central_difference, tape_grad

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_dense_forward_scalar():
    assert nn.dense_forward([[2.0]], [[3.0]], [[1.0]]).tolist() == [[7.0]]


def test_dense_forward_identity(rng):
    x = rng.normal(size=(5, 4))
    np.testing.assert_array_equal(nn.dense_forward(x, np.eye(4), np.zeros((1, 4))), x)


def test_dense_forward_matches_triple_loop(rng):
    x, W, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=(1, 2))
    ref = np.zeros((3, 2))
    for n in range(3):
        for j in range(2):
            ref[n, j] = b[0, j] + sum(x[n, i] * W[i, j] for i in range(4))
    np.testing.assert_allclose(nn.dense_forward(x, W, b), ref, rtol=0, atol=1e-12)


def test_dense_forward_shape_error_names_shapes():
    with pytest.raises(nn.DimensionError, match=r"\(2, 3\).*\(4, 1\)"):
        nn.dense_forward(np.zeros((2, 3)), np.zeros((4, 1)))


def test_swish_values():
    assert nn.swish(np.array([0.0]))[0] == 0.0
    assert abs(nn.swish(np.array([20.0]))[0] - 20.0) < 1e-6
    assert nn.swish(np.array([1.0]))[0] == pytest.approx(0.731058578630004879, abs=1e-15)
    assert np.all(np.isfinite(nn.swish(np.array([-1e6, 1e6]))))


def test_softmax_examples():
    np.testing.assert_allclose(nn.softmax(np.zeros((1, 4))), [[0.25] * 4])
    np.testing.assert_allclose(nn.softmax([[0.0, math.log(3)]]), [[0.25, 0.75]], atol=1e-15)


@given(nph.arrays(np.float64, nph.array_shapes(min_dims=2, max_dims=2, max_side=6), elements=finite), finite)
def test_softmax_rows_and_shift_invariance(v, c):
    p = nn.softmax(v)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    q = nn.softmax(v + c)
    np.testing.assert_allclose(p, q, atol=1e-12)
    np.testing.assert_array_equal(p.argmax(axis=1), q.argmax(axis=1))


def test_softmax_huge_logits_finite():
    p = nn.softmax([[1e300, 0.0, -1e300]])
    assert np.all(np.isfinite(p))
    assert p[0, 0] == 1.0


def test_backward_quadratic(rng):
    theta = rng.normal(size=(3, 2))
    _, g = tape_grad(lambda t: nn.total(nn.mul(t, t)), t=theta)
    np.testing.assert_array_equal(g["t"], 2 * theta)


def test_backward_unused_parameter_zero(rng):
    a, b = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    _, g = tape_grad(lambda a, b: nn.total(nn.mul(a, a)), a=a, b=b)
    np.testing.assert_array_equal(g["b"], np.zeros((2, 2)))


def test_tape_is_consumed(rng):
    tape = nn.Tape()
    t = tape.watch("t", rng.normal(size=(2, 2)))
    loss = nn.total(t)
    nn.backward(tape, loss)
    with pytest.raises(nn.TapeError):
        nn.backward(tape, loss)
    with pytest.raises(nn.TapeError):
        nn.total(t)


def test_backward_requires_scalar(rng):
    tape = nn.Tape()
    t = tape.watch("t", rng.normal(size=(2, 2)))
    with pytest.raises(nn.TapeError):
        nn.backward(tape, nn.scale(t, 2.0))


@pytest.mark.parametrize(
    "build",
    [
        lambda x, W, b: nn.total(nn.swish_op(nn.dense(x, W, b))),
        lambda x, W, b: nn.total(nn.logsumexp_op(nn.dense(x, W, b))),
        lambda x, W, b: nn.total(nn.normalize_rows(nn.dense(x, W, b))),
        lambda x, W, b: nn.total(nn.cos_op(nn.arccos_op(nn.scale(nn.normalize_rows(nn.dense(x, W, b)), 0.9)))),
        lambda x, W, b: nn.total(nn.matmul(nn.transpose(x), nn.row_sq_norm(nn.dense(x, W, b)))),
        lambda x, W, b: nn.cross_entropy_op(nn.dense(x, W, b), [0, 2, 1, 1]),
        lambda x, W, b: nn.total(nn.pick(nn.dense(x, W, b), [2, 0, 1, 0])),
    ],
)
def test_primitive_gradients_match_finite_differences(build, rng):
    arrays = {"x": rng.normal(size=(4, 3)), "W": rng.normal(size=(3, 3)), "b": rng.normal(size=(1, 3))}
    _, g = tape_grad(build, **arrays)
    for name, arr in arrays.items():

        def f():
            return build(**{k: nn.Var(v) for k, v in arrays.items()}).value.item()

        fd = central_difference(f, arr)
        np.testing.assert_allclose(g[name], fd, rtol=1e-6, atol=1e-8)


def test_masked_logsumexp_gradient(rng):
    x = rng.normal(size=(4, 4))
    mask = ~np.eye(4, dtype=bool)
    _, g = tape_grad(lambda x: nn.total(nn.logsumexp_op(x, mask)), x=x)
    fd = central_difference(lambda: float(nn.logsumexp_rows(x, mask).sum()), x)
    np.testing.assert_allclose(g["x"], fd, atol=1e-8)
    assert np.all(np.diag(g["x"]) == 0)


# ---------------------------------------------------------------- AdamW


def scalar_adamw(theta, grads, lr, wd, b1=0.9, b2=0.999, eps=1e-8):
    """Hand-rolled scalar AdamW, one line per textbook step."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        theta = theta - lr * wd * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        theta = theta - lr * mhat / (math.sqrt(vhat) + eps)
    return theta


def _run(theta, grads, lr, wd):
    params = OrderedDict(p=np.array([[theta]]))
    state = nn.OptimizerState()
    for g in grads:
        nn.adamw_step(params, {"p": np.array([[g]])}, state, lr=lr, weight_decay=wd)
    return params["p"].item(), state


def test_adamw_first_step_is_signed_lr():
    theta, _ = _run(0.0, [0.37], lr=0.01, wd=0.0)
    assert theta == pytest.approx(-0.01 * 0.37 / (0.37 + 1e-8), abs=1e-15)


def test_adamw_zero_gradient_keeps_params():
    theta, _ = _run(1.5, [0.0, 0.0, 0.0], lr=0.01, wd=0.0)
    assert theta == 1.5


def test_adamw_matches_scalar_oracle():
    theta, state = _run(1.0, [0.5], lr=0.01, wd=0.1)
    assert theta == pytest.approx(scalar_adamw(1.0, [0.5], 0.01, 0.1), abs=1e-15)
    assert state.t == 1
    grads = [0.5, -0.2, 1.3, 0.0, -4.0]
    theta, state = _run(1.0, grads, lr=0.01, wd=0.1)
    assert theta == pytest.approx(scalar_adamw(1.0, grads, 0.01, 0.1), abs=1e-14)
    assert state.t == len(grads)


@settings(max_examples=30)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=8), st.floats(-5, 5))
def test_adamw_without_decay_is_adam(grads, theta0):
    adam = scalar_adamw(theta0, grads, 1e-3, 0.0)
    theta, _ = _run(theta0, grads, lr=1e-3, wd=0.0)
    assert theta == pytest.approx(adam, abs=1e-12)


def test_adamw_matches_torch_adamw(rng):
    torch = pytest.importorskip("torch")
    p0 = rng.normal(size=(3, 2))
    grads = [rng.normal(size=(3, 2)) for _ in range(6)]
    tp = torch.tensor(p0.copy(), dtype=torch.float64, requires_grad=True)
    opt = torch.optim.AdamW([tp], lr=3e-3, weight_decay=0.5e-4)
    params = OrderedDict(w=p0.copy())
    state = nn.OptimizerState()
    for g in grads:
        opt.zero_grad()
        tp.grad = torch.tensor(g)
        opt.step()
        nn.adamw_step(params, {"w": g}, state, lr=3e-3, weight_decay=0.5e-4)
    np.testing.assert_allclose(params["w"], tp.detach().numpy(), rtol=0, atol=1e-13)


def test_adamw_rejects_non_finite_gradient():
    params = OrderedDict(p=np.ones((1, 1)))
    with pytest.raises(nn.NonFiniteError, match="'p'"):
        nn.adamw_step(params, {"p": np.array([[np.nan]])}, nn.OptimizerState())
    assert params["p"].item() == 1.0


def test_adamw_per_parameter_learning_rates():
    params = OrderedDict(a=np.zeros((1, 1)), b=np.zeros((1, 1)))
    g = {"a": np.ones((1, 1)), "b": np.ones((1, 1))}
    nn.adamw_step(params, g, nn.OptimizerState(), lr=lambda n: 0.1 if n == "a" else 0.01, weight_decay=0.0)
    assert params["a"].item() == pytest.approx(-0.1)
    assert params["b"].item() == pytest.approx(-0.01)


# ---------------------------------------------------------------- RNG


def test_seed_rng_reproducible():
    a = nn.seed_rng(42).random(100)
    b = nn.seed_rng(42).random(100)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, nn.seed_rng(43).random(100))


def test_glorot_bounds():
    W = nn.glorot_uniform(nn.seed_rng(0), 30, 10)
    assert np.abs(W).max() <= math.sqrt(6 / 40)
