"""Reverse-mode differentiation over numpy-valued nodes.

Each call to :func:`grad` records a fresh expression graph. Nodes hold
numpy arrays and follow numpy broadcasting; a scalar graph is simply the
0-d case. Every primitive also accepts plain arrays, in which case it
returns a plain array and records nothing, so model and flow code can be
written once and evaluated with or without gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


class NonFiniteError(FloatingPointError):
    """Raised when a recorded primitive produces NaN or infinity."""

    def __init__(self, primitive: str, message: str = ""):
        self.primitive = primitive
        super().__init__(f"non-finite value produced by '{primitive}'" + (f": {message}" if message else ""))


class Var:
    __slots__ = ("value", "grad", "parents", "op")
    __array_ufunc__ = None  # make ndarray <op> Var defer to Var's reflected operators

    def __init__(self, value, parents=(), op="leaf"):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.parents = parents  # tuple of (Var, vjp) pairs
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(op={self.op!r}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return _record(-self.value, "neg", (self, lambda g: -g))

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def backward(self):
        """Accumulate d(self)/d(node) into ``node.grad`` for every ancestor."""
        if self.value.size != 1:
            raise ValueError("backward() needs a scalar output")
        order = _topological_order(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node.grad is None:
                continue
            for parent, vjp in node.parents:
                contribution = _unbroadcast(vjp(node.grad), parent.value.shape)
                parent.grad = contribution if parent.grad is None else parent.grad + contribution


def _topological_order(root: Var) -> list[Var]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _unbroadcast(g, shape):
    g = np.asarray(g, dtype=float)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return np.broadcast_to(g, shape)


def _record(value, op, *links):
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(op)
    return Var(value, tuple(link for link in links if link is not None), op)


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _link(x, vjp):
    return (x, vjp) if isinstance(x, Var) else None


def _tracked(*xs) -> bool:
    return any(isinstance(x, Var) for x in xs)


def value(x) -> np.ndarray:
    """Plain array behind ``x`` (identity on arrays)."""
    return _val(x)


# ---------------------------------------------------------------- arithmetic


def add(x, y):
    if not _tracked(x, y):
        return _val(x) + _val(y)
    return _record(_val(x) + _val(y), "add", _link(x, lambda g: g), _link(y, lambda g: g))


def sub(x, y):
    if not _tracked(x, y):
        return _val(x) - _val(y)
    return _record(_val(x) - _val(y), "sub", _link(x, lambda g: g), _link(y, lambda g: -g))


def mul(x, y):
    xv, yv = _val(x), _val(y)
    if not _tracked(x, y):
        return xv * yv
    return _record(xv * yv, "mul", _link(x, lambda g: g * yv), _link(y, lambda g: g * xv))


def div(x, y):
    xv, yv = _val(x), _val(y)
    if not _tracked(x, y):
        return xv / yv
    out = xv / yv
    return _record(out, "div", _link(x, lambda g: g / yv), _link(y, lambda g: -g * out / yv))


def power(x, exponent: float):
    xv = _val(x)
    out = xv**exponent
    if not _tracked(x):
        return out
    return _record(out, "power", (x, lambda g: g * exponent * xv ** (exponent - 1)))


def matmul(x, y):
    xv, yv = _val(x), _val(y)
    out = xv @ yv
    if not _tracked(x, y):
        return out
    return _record(
        out,
        "matmul",
        _link(x, lambda g: g @ np.swapaxes(yv, -1, -2)),
        _link(y, lambda g: np.swapaxes(xv, -1, -2) @ g),
    )


# ---------------------------------------------------------------- elementwise


def exp(x):
    out = np.exp(_val(x))
    if not _tracked(x):
        return out
    return _record(out, "exp", (x, lambda g: g * out))


def log(x):
    xv = _val(x)
    if not _tracked(x):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(xv)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xv)
    return _record(out, "log", (x, lambda g: g / xv))


def sigmoid(x):
    xv = _val(x)
    out = _sigmoid(xv)
    if not _tracked(x):
        return out
    return _record(out, "sigmoid", (x, lambda g: g * out * (1.0 - out)))


def log_sigmoid(x):
    """log(sigmoid(x)) without cancellation."""
    xv = _val(x)
    out = -np.logaddexp(0.0, -xv)
    if not _tracked(x):
        return out
    return _record(out, "log_sigmoid", (x, lambda g: g * _sigmoid(-xv)))


def softplus(x):
    xv = _val(x)
    out = np.logaddexp(0.0, xv)
    if not _tracked(x):
        return out
    return _record(out, "softplus", (x, lambda g: g * _sigmoid(xv)))


def tanh(x):
    out = np.tanh(_val(x))
    if not _tracked(x):
        return out
    return _record(out, "tanh", (x, lambda g: g * (1.0 - out * out)))


def clip(x, lo: float, hi: float):
    xv = _val(x)
    out = np.clip(xv, lo, hi)
    if not _tracked(x):
        return out
    inside = (xv >= lo) & (xv <= hi)
    return _record(out, "clip", (x, lambda g: g * inside))


def norm_logpdf(x):
    """Standard-normal log-density."""
    xv = _val(x)
    out = -0.5 * xv * xv - 0.5 * LOG_2PI
    if not _tracked(x):
        return out
    return _record(out, "norm_logpdf", (x, lambda g: -g * xv))


def _sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# ---------------------------------------------------------------- structural


def sum(x, axis=None):  # noqa: A001
    xv = _val(x)
    out = xv.sum(axis=axis)
    if not _tracked(x):
        return out

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, xv.shape)

    return _record(out, "sum", (x, vjp))


def mean(x, axis=None):
    xv = _val(x)
    n = xv.size if axis is None else xv.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


def cumsum(x, axis=-1):
    xv = _val(x)
    out = np.cumsum(xv, axis=axis)
    if not _tracked(x):
        return out
    return _record(out, "cumsum", (x, lambda g: np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)))


def getitem(x, index):
    xv = _val(x)
    out = xv[index]
    if not _tracked(x):
        return out

    def vjp(g):
        full = np.zeros_like(xv)
        np.add.at(full, index, g)
        return full

    return _record(out, "getitem", (x, vjp))


def reshape(x, shape):
    xv = _val(x)
    out = xv.reshape(shape)
    if not _tracked(x):
        return out
    return _record(out, "reshape", (x, lambda g: np.reshape(g, xv.shape)))


def transpose(x, axes):
    xv = _val(x)
    out = np.transpose(xv, axes)
    if not _tracked(x):
        return out
    inverse = np.argsort(axes)
    return _record(out, "transpose", (x, lambda g: np.transpose(g, inverse)))


def concatenate(xs, axis=-1):
    values = [_val(x) for x in xs]
    out = np.concatenate(values, axis=axis)
    if not _tracked(*xs):
        return out
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]
    links = []
    for i, x in enumerate(xs):
        if isinstance(x, Var):
            links.append((x, lambda g, i=i: np.split(g, bounds, axis=axis)[i]))
    return _record(out, "concatenate", *links)


# ---------------------------------------------------------------- Bernstein


def bernstein_basis(degree: int, x: np.ndarray) -> np.ndarray:
    """Bernstein basis ``C(M,i) x^i (1-x)^(M-i)`` along a new trailing axis.

    Powers are taken directly, so the endpoints 0 and 1 give exact unit
    vectors.
    """
    x = np.asarray(x, dtype=float)[..., None]
    i = np.arange(degree + 1, dtype=float)
    return binomial_row(degree) * x**i * (1.0 - x) ** (degree - i)


_BINOMIAL_ROWS: dict[int, np.ndarray] = {}


def binomial_row(degree: int) -> np.ndarray:
    # math.comb is exact in arbitrary precision; float conversion is correctly rounded.
    row = _BINOMIAL_ROWS.get(degree)
    if row is None:
        row = np.array([float(math.comb(degree, i)) for i in range(degree + 1)])
        row.flags.writeable = False
        _BINOMIAL_ROWS[degree] = row
    return row


def _bernstein_value(coef, x):
    degree = coef.shape[-1] - 1
    basis = bernstein_basis(degree, x)
    return (basis * coef[..., None, :]).sum(-1), basis


def bernstein(coef, x):
    """Evaluate ``sum_i coef_i b_{i,M}(x)`` with coef of shape (..., M+1), x of shape (..., T).

    Leading dimensions broadcast; the result has shape (..., T).
    """
    cv, xv = _val(coef), _val(x)
    if cv.shape[-1] < 1:
        raise ValueError("need at least one Bernstein coefficient")
    if np.any((xv < 0.0) | (xv > 1.0)):
        raise ValueError("Bernstein argument outside [0, 1]")
    out, basis = _bernstein_value(cv, xv)
    if not _tracked(coef, x):
        return out

    def d_coef(g):
        return (np.asarray(g)[..., None] * basis).sum(-2)

    def d_x(g):
        degree = cv.shape[-1] - 1
        if degree == 0:
            return np.zeros_like(np.asarray(g) * xv)
        slope, _ = _bernstein_value(degree * np.diff(cv, axis=-1), xv)
        return g * slope

    return _record(out, "bernstein", _link(coef, d_coef), _link(x, d_x))


# ---------------------------------------------------------------- gradients


@dataclass(frozen=True)
class GradientResult:
    value: float
    gradient: np.ndarray


def grad(f: Callable[[Var], Var], x) -> GradientResult:
    """Value and gradient of a scalar function of a real vector."""
    leaf = Var(np.array(x, dtype=float, copy=True))
    out = f(leaf)
    if not isinstance(out, Var):
        # f does not depend on its input
        return GradientResult(float(np.asarray(out)), np.zeros_like(leaf.value))
    out.backward()
    g = np.zeros_like(leaf.value) if leaf.grad is None else np.array(leaf.grad, dtype=float)
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("backward", "gradient has non-finite entries")
    return GradientResult(float(out.value), g)


def check_gradient(f: Callable, x, h: float = 1e-5) -> float:
    """Largest per-coordinate |analytic - central difference| / max(1, |analytic|)."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=float)
    analytic = grad(f, x).gradient
    worst = 0.0
    for i in range(x.size):
        up, down = x.copy(), x.copy()
        up.flat[i] += h
        down.flat[i] -= h
        fd = (float(_val(f(up))) - float(_val(f(down)))) / (2.0 * h)
        worst = max(worst, abs(analytic.flat[i] - fd) / max(1.0, abs(analytic.flat[i])))
    return worst
