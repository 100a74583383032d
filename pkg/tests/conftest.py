import numpy as np
import pytest

from lpclab import nn


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Brute-force gradient of scalar ``f`` at ``x``; ``x`` is restored afterwards."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def tape_grad(fn, **arrays):
    """Gradients of ``fn(**vars)`` for each named array via the tape."""
    tape = nn.Tape()
    vs = {k: tape.watch(k, v) for k, v in arrays.items()}
    out = fn(**vs)
    return out.value.item(), nn.backward(tape, out)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
