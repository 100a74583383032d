"""Dense float64 primitives with a small reverse-mode tape and AdamW.

Every value is a 2-D ``numpy.float64`` array (a "Tensor2D"). Differentiable
computations are recorded on a :class:`Tape`; :func:`backward` replays the
tape once in reverse and returns gradients for the watched leaves.

Random numbers come from numpy's PCG64 bit generator (``seed_rng``), so a
given seed reproduces weight init and shuffles on any platform.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def as_tensor2d(x, name: str = "tensor") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"{name}: expected 2-D data, got shape {arr.shape}")
    return arr


def seed_rng(seed: int) -> np.random.Generator:
    """Deterministic PCG64 generator for ``seed``."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


# ---------------------------------------------------------------- plain ops


def dense_forward(x, W, b=None) -> np.ndarray:
    x = as_tensor2d(x, "x")
    W = as_tensor2d(W, "W")
    if x.shape[1] != W.shape[0]:
        raise DimensionError(f"dense_forward: x {x.shape} incompatible with W {W.shape}")
    out = x @ W
    if b is not None:
        b = as_tensor2d(b, "b")
        if b.shape != (1, W.shape[1]):
            raise DimensionError(f"dense_forward: bias {b.shape} incompatible with W {W.shape}")
        out = out + b
    return out


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def swish(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x * sigmoid(x)


def softmax(logits) -> np.ndarray:
    logits = as_tensor2d(logits, "logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def logsumexp_rows(x, mask=None) -> np.ndarray:
    """Row-wise log-sum-exp as an (N, 1) column; ``mask`` selects the summed entries."""
    x = as_tensor2d(x)
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = x.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return m + np.log(np.exp(x - m).sum(axis=1, keepdims=True))


# ---------------------------------------------------------------- the tape


class Var:
    """A node on a tape: a value plus the closure that pulls gradients back."""

    __slots__ = ("value", "tape", "parents", "pullback", "name")

    def __init__(self, value, tape: "Tape | None" = None, parents=(), pullback=None, name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.pullback = pullback
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __rsub__(self, other):
        return add(other, scale(self, -1.0))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, name={self.name!r})"


class Tape:
    """Records differentiable operations in creation (topological) order."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.leaves: OrderedDict[str, Var] = OrderedDict()
        self.consumed = False

    def watch(self, name: str, value) -> Var:
        if name in self.leaves:
            raise TapeError(f"leaf {name!r} already watched")
        v = Var(np.array(value, dtype=np.float64), self, name=name)
        self.leaves[name] = v
        self.nodes.append(v)
        return v

    def record(self, value, parents, pullback) -> Var:
        if self.consumed:
            raise TapeError("tape already consumed by backward()")
        v = Var(value, self, parents, pullback)
        self.nodes.append(v)
        return v


def _value(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var) and x.tape is not None:
            return x.tape
    return None


def _op(value, inputs, pullback):
    """Record ``value`` if any input lives on a tape, else return a constant Var."""
    tape = _tape_of(*inputs)
    if tape is None:
        return Var(value)
    return tape.record(value, tuple(inputs), pullback)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(tape: Tape, loss: Var) -> OrderedDict:
    """Gradients of scalar ``loss`` for every watched leaf, in watch order."""
    if tape.consumed:
        raise TapeError("tape already consumed; run a fresh forward pass")
    if loss.tape is not tape:
        raise TapeError("loss was not recorded on this tape")
    if loss.value.size != 1:
        raise TapeError(f"loss must be scalar, got shape {loss.value.shape}")
    tape.consumed = True
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None or node.pullback is None:
            if node.name is not None and g is not None:
                grads[id(node)] = g
            continue
        for parent, pg in zip(node.parents, node.pullback(g)):
            if not isinstance(parent, Var) or parent.tape is not tape or pg is None:
                continue
            pg = _unbroadcast(pg, parent.value.shape)
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    out = OrderedDict()
    for name, leaf in tape.leaves.items():
        out[name] = grads.get(id(leaf), np.zeros_like(leaf.value))
    return out


# ---------------------------------------------------------------- differentiable ops


def add(a, b) -> Var:
    av, bv = _value(a), _value(b)
    return _op(av + bv, (a, b), lambda g: (g, g))


def mul(a, b) -> Var:
    av, bv = _value(a), _value(b)
    return _op(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, c: float) -> Var:
    return _op(_value(a) * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Var:
    av, bv = _value(a), _value(b)
    if av.shape[-1] != bv.shape[0]:
        raise DimensionError(f"matmul: {av.shape} @ {bv.shape}")
    return _op(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a) -> Var:
    return _op(_value(a).T.copy(), (a,), lambda g: (g.T,))


def dense(x, W, b=None) -> Var:
    out = matmul(x, W)
    if b is not None:
        out = add(out, b)
    return out


def swish_op(x) -> Var:
    xv = _value(x)
    s = sigmoid(xv)
    return _op(xv * s, (x,), lambda g: (g * (s + xv * s * (1.0 - s)),))


def total(x) -> Var:
    xv = _value(x)
    return _op(np.array([[xv.sum()]]), (x,), lambda g: (np.full_like(xv, g.item()),))


def mean_all(x) -> Var:
    return scale(total(x), 1.0 / _value(x).size)


def row_sq_norm(x) -> Var:
    """(N, 1) column of squared row norms."""
    xv = _value(x)
    return _op((xv * xv).sum(axis=1, keepdims=True), (x,), lambda g: (2.0 * g * xv,))


def normalize_rows(x, eps: float = 1e-12) -> Var:
    xv = _value(x)
    n = np.maximum(np.sqrt((xv * xv).sum(axis=1, keepdims=True)), eps)
    u = xv / n

    def pull(g):
        return ((g - u * (g * u).sum(axis=1, keepdims=True)) / n,)

    return _op(u, (x,), pull)


def logsumexp_op(x, mask=None) -> Var:
    xv = _value(x)
    lse = logsumexp_rows(xv, mask)
    p = np.exp(np.where(mask, xv, -np.inf) - lse) if mask is not None else np.exp(xv - lse)
    return _op(lse, (x,), lambda g: (g * p,))


def cos_op(x) -> Var:
    xv = _value(x)
    return _op(np.cos(xv), (x,), lambda g: (-g * np.sin(xv),))


def arccos_op(x, clip: float = 1.0 - 1e-12) -> Var:
    """arccos of the argument clamped to [-1, 1].

    The derivative is evaluated at the argument clamped to ``[-clip, clip]``
    so it stays finite at the poles; inputs outside [-1, 1] get zero gradient.
    """
    xv = _value(x)
    c = np.clip(xv, -clip, clip)
    d = np.where(np.abs(xv) <= 1.0, -1.0 / np.sqrt(1.0 - c * c), 0.0)
    return _op(np.arccos(np.clip(xv, -1.0, 1.0)), (x,), lambda g: (g * d,))


def pick(x, index: Sequence[int]) -> Var:
    """(N, 1) column with x[n, index[n]]."""
    xv = _value(x)
    idx = np.asarray(index, dtype=np.int64)
    rows = np.arange(xv.shape[0])

    def pull(g):
        out = np.zeros_like(xv)
        out[rows, idx] = g[:, 0]
        return (out,)

    return _op(xv[rows, idx].reshape(-1, 1), (x,), pull)


def cross_entropy_op(logits, labels: Sequence[int]) -> Var:
    """Batch-mean cross-entropy in log-sum-exp form (fused for stability)."""
    lv = _value(logits)
    y = np.asarray(labels, dtype=np.int64)
    n = lv.shape[0]
    lse = logsumexp_rows(lv)
    val = float((lse[:, 0] - lv[np.arange(n), y]).mean())
    p = np.exp(lv - lse)

    def pull(g):
        d = p.copy()
        d[np.arange(n), y] -= 1.0
        return (g.item() * d / n,)

    return _op(np.array([[val]]), (logits,), pull)


# ---------------------------------------------------------------- optimizer


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adamw_step(
    params: "OrderedDict[str, np.ndarray]",
    grads: "dict[str, np.ndarray]",
    state: OptimizerState,
    lr: float | Callable[[str], float] = 1e-3,
    weight_decay: float = 0.5e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> OptimizerState:
    """One AdamW update in place on ``params``.

    ``lr`` may be a callable mapping a parameter name to its learning rate so
    that groups (e.g. the classifier) can follow their own schedule. Weight
    decay is decoupled: ``p -= lr * wd * p`` before the Adam step, as in
    PyTorch's ``AdamW``.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"adamw_step: non-finite gradient for {name!r}; step aborted")
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"adamw_step: grad {g.shape} vs param {name} {p.shape}")
        rate = lr(name) if callable(lr) else lr
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p *= 1.0 - rate * weight_decay
        p -= rate * (m / c1) / (np.sqrt(v / c2) + eps)
    return state
