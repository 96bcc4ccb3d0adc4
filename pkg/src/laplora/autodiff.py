"""A small tape-based reverse-mode autodiff engine over float64 numpy arrays.

Operations executed inside ``with Tape() as tape:`` are recorded whenever one
of their inputs requires a gradient; ``tape.backward(loss)`` then replays the
tape in reverse.  Only the handful of ops needed by the GCN model exist.

    >>> w = Tensor(np.ones((2, 1)), requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_all(matmul(Tensor([[1.0, 2.0]]), w))
    >>> tape.backward(loss)
    >>> w.grad.ravel().tolist()
    [1.0, 2.0]
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, DataError, ParameterError, ShapeError
from .graph import SparseMatrix

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "matmul",
    "sparse_matmul",
    "add",
    "mul",
    "relu",
    "sigmoid",
    "dropout",
    "sum_all",
    "log_softmax_cross_entropy",
    "Adam",
    "adam_step",
]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # op outputs are fresh arrays, no defensive copy
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class _Node:
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of operations; inputs always precede their consumers."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, inputs: tuple, fn) -> Tensor:
    if _ACTIVE and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE[-1].nodes.append(_Node(inputs, out, fn))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on the tape that requires it."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    keep = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.get(id(node.output))
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                keep[key] = inp
    for key, t in keep.items():
        g = grads[key]
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = Tensor._wrap(a.data @ b.data)

    def bw(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    return _record(out, (a, b), bw)


def sparse_matmul(s: SparseMatrix, x) -> Tensor:
    """``S @ X`` for a constant sparse ``S``."""
    x = _as_tensor(x)
    if x.data.ndim != 2 or x.shape[0] != s.n_cols:
        raise ShapeError(f"sparse_matmul: cannot multiply {s.shape} by {x.shape}")
    mat = s.to_scipy()
    out = Tensor._wrap(np.asarray(mat @ x.data))

    def bw(g):
        return (np.asarray(mat.T @ g),)

    return _record(out, (x,), bw)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor._wrap(a.data + b.data)
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), bw)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor._wrap(a.data * b.data)
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return _record(out, (a, b), bw)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    on = x.data > 0
    out = Tensor._wrap(np.where(on, x.data, 0.0))
    return _record(out, (x,), lambda g: (g * on,))


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    s = expit(x.data)
    out = Tensor._wrap(s)
    return _record(out, (x,), lambda g: (g * s * (1.0 - s),))


def dropout(x, rate: float, seed, training: bool = True) -> Tensor:
    """Inverted dropout; ``seed`` is an int or a ``numpy.random.Generator``."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    x = _as_tensor(x)
    if not training or rate == 0.0:
        return x
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = Tensor._wrap(x.data * keep)
    return _record(out, (x,), lambda g: (g * keep,))


def sum_all(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor._wrap(np.asarray(np.sum(x.data)))
    return _record(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def log_softmax_cross_entropy(logits, labels, mask) -> Tensor:
    """Mean negative log-likelihood over the rows selected by ``mask``."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],) or mask.shape != labels.shape:
        raise ShapeError("logits must be N x C with labels and mask of length N")
    rows = np.flatnonzero(mask)
    if len(rows) == 0:
        raise DataError("cross-entropy mask selects no nodes")
    logp = log_softmax(logits.data[rows])
    picked = labels[rows]
    out = Tensor._wrap(np.asarray(-logp[np.arange(len(rows)), picked].mean()))

    def bw(g):
        grad = np.zeros_like(logits.data)
        p = np.exp(logp)
        p[np.arange(len(rows)), picked] -= 1.0
        grad[rows] = p * (g / len(rows))
        return (grad,)

    return _record(out, (logits,), bw)


def adam_step(
    params: Sequence[Tensor],
    state: dict,
    t: int,
    lr: float = 0.01,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One Adam update at step ``t`` (1-based), weight decay added to the gradient.

    ``state`` maps ``id(param)`` to its ``(m, v)`` moments and is updated in place.
    """
    if t < 1:
        raise ParameterError("Adam step count starts at 1")
    for p in params:
        if p.grad is None:
            raise ContractError(f"parameter {p.name or p!r} has no gradient")
        g = p.grad + weight_decay * p.data if weight_decay else p.grad
        m, v = state.get(id(p), (np.zeros_like(p.data), np.zeros_like(p.data)))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state[id(p)] = (m, v)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    def __init__(self, params, lr=0.01, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.state: dict = {}

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        adam_step(
            self.params, self.state, self.t, self.lr, self.betas[0], self.betas[1],
            self.eps, self.weight_decay,
        )
