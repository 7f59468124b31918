"""Small reverse-mode autodiff over float64 numpy arrays.

Every loss in the package is a scalar built from a handful of array ops,
so a tape of closures is enough: each op records its parents and a
function mapping the upstream gradient to one gradient per parent.
``Tensor.backward`` walks the graph once in reverse topological order.

Also here: the scalar building blocks the losses share (squared
Euclidean distance, tempered softmax, Shannon entropy) and the
central-difference gradient used to check everything else.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericError

__all__ = [
    "Tensor",
    "as_tensor",
    "concat",
    "logsumexp",
    "log_softmax",
    "softmax",
    "softmax_entropy",
    "euclidean_sq",
    "pairwise_sq_dists",
    "shannon_entropy",
    "finite_diff_grad",
]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # sum out axes that broadcasting added or stretched
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An array plus the bookkeeping needed to differentiate through it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable | None = _backward

    # -- basics ------------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    @staticmethod
    def _make(data, parents: Sequence[Tensor], backward: Callable) -> Tensor:
        tracked = tuple(p for p in parents)
        if any(p.requires_grad for p in tracked):
            return Tensor(data, True, tracked, backward)
        return Tensor(data)

    # -- elementwise arithmetic ---------------------------------------------
    def __add__(self, other) -> Tensor:
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __neg__(self) -> Tensor:
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> Tensor:
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> Tensor:
        return as_tensor(other) + (-self)

    def __mul__(self, other) -> Tensor:
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._make(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> Tensor:
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._make(
            a / b,
            (self, other),
            lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)),
        )

    def __rtruediv__(self, other) -> Tensor:
        return as_tensor(other) / self

    def __pow__(self, exponent: float) -> Tensor:
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        a = self.data
        return Tensor._make(a**exponent, (self,), lambda g: (g * exponent * a ** (exponent - 1),))

    def __matmul__(self, other) -> Tensor:
        other = as_tensor(other)
        a, b = self.data, other.data

        def backward(g):
            if a.ndim == 1 and b.ndim == 1:
                return g * b, g * a
            if a.ndim == 1:
                return b @ g, np.outer(a, g)
            if b.ndim == 1:
                return np.outer(g, b), a.T @ g
            return g @ b.T, a.T @ g

        return Tensor._make(a @ b, (self, other), backward)

    def __rmatmul__(self, other) -> Tensor:
        return as_tensor(other) @ self

    # -- unary maps -----------------------------------------------------------
    def exp(self) -> Tensor:
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self) -> Tensor:
        a = self.data
        return Tensor._make(np.log(a), (self,), lambda g: (g / a,))

    def tanh(self) -> Tensor:
        out = np.tanh(self.data)
        return Tensor._make(out, (self,), lambda g: (g * (1.0 - out * out),))

    def sigmoid(self) -> Tensor:
        a = self.data
        # split by sign so exp never overflows
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        out[~pos] = ea / (1.0 + ea)
        return Tensor._make(out, (self,), lambda g: (g * out * (1.0 - out),))

    def clip(self, lo: float, hi: float) -> Tensor:
        a = self.data
        inside = (a >= lo) & (a <= hi)
        return Tensor._make(np.clip(a, lo, hi), (self,), lambda g: (g * inside,))

    # -- reductions and reshaping ---------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        count = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> Tensor:
        old = self.shape
        return Tensor._make(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    @property
    def T(self) -> Tensor:
        return Tensor._make(self.data.T, (self,), lambda g: (g.T,))

    def __getitem__(self, index) -> Tensor:
        shape = self.shape

        def backward(g):
            full = np.zeros(shape)
            np.add.at(full, index, g)
            return (full,)

        return Tensor._make(self.data[index], (self,), backward)

    # -- backward -------------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every tracked leaf.

        ``self`` must be a scalar unless an explicit upstream ``grad`` is given.
        Each node's closure runs exactly once.
        """
        if grad is None:
            if self.data.size != 1:
                raise InvalidArgumentError("backward() without grad needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(parts: Iterable, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._make(np.concatenate([p.data for p in parts], axis=axis), parts, backward)


def logsumexp(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Max-shifted log-sum-exp; the gradient is the softmax along ``axis``."""
    x = as_tensor(x)
    shift = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - shift)
    s = e.sum(axis=axis, keepdims=True)
    out = np.log(s) + shift
    soft = e / s

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    value = out if keepdims else np.squeeze(out, axis=axis)
    return Tensor._make(value, (x,), backward)


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise InvalidArgumentError(f"temperature must be > 0, got {tau}")


def log_softmax(v, tau: float = 1.0, axis: int = -1) -> Tensor:
    _check_tau(tau)
    z = as_tensor(v) * (1.0 / tau)
    return z - logsumexp(z, axis=axis, keepdims=True)


def softmax(v, tau: float = 1.0, axis: int = -1) -> Tensor:
    """p_j = exp(v_j / tau) / sum_k exp(v_k / tau), stabilised by max-subtraction."""
    return log_softmax(v, tau, axis).exp()


def softmax_entropy(v, tau: float = 1.0, axis: int = -1) -> Tensor:
    """Entropy of ``softmax(v / tau)`` along ``axis`` without ever taking log(0).

    Uses H = -sum p * log p with log p from log_softmax, which stays finite
    even when p underflows to zero.
    """
    logp = log_softmax(v, tau, axis)
    return -(logp.exp() * logp).sum(axis=axis)


def euclidean_sq(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1:] != b.shape[-1:]:
        raise InvalidArgumentError(f"dimension mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return (d * d).sum(axis=-1)


def pairwise_sq_dists(x, y=None) -> Tensor:
    """Matrix of squared distances between rows of ``x`` and rows of ``y``.

    Built from explicit differences, not the |x|^2 + |y|^2 - 2xy expansion,
    so the diagonal of ``pairwise_sq_dists(x)`` is exactly zero.
    """
    x = as_tensor(x)
    y = x if y is None else as_tensor(y)
    if x.shape[-1] != y.shape[-1]:
        raise InvalidArgumentError(f"dimension mismatch: {x.shape} vs {y.shape}")
    n, m, d = x.shape[0], y.shape[0], x.shape[1]
    diff = x.reshape(n, 1, d) - y.reshape(1, m, d)
    return (diff * diff).sum(axis=-1)


def shannon_entropy(p) -> float:
    """H(p) = -sum p ln p in nats, with 0 ln 0 taken as 0."""
    p = np.asarray(p.data if isinstance(p, Tensor) else p, dtype=np.float64)
    if np.any(p < 0):
        raise InvalidArgumentError("probabilities must be non-negative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise InvalidArgumentError(f"probabilities must sum to 1, got {p.sum()!r}")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def finite_diff_grad(f: Callable[[np.ndarray], float], params, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array.

    Probes ``f(p + eps*e_i)`` and ``f(p - eps*e_i)`` for every coordinate.
    """
    p = np.array(params, dtype=np.float64, copy=True)
    grad = np.zeros_like(p)
    flat, gflat = p.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(p))
        flat[i] = orig - eps
        lo = float(f(p))
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"non-finite function value while probing coordinate {i}")
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad
