"""Small reverse-mode autodiff over rank-2 float64 arrays.

Operations record themselves on the innermost active :class:`Tape`. Outside a
tape they are plain numpy evaluations, which keeps inference cheap.

    with Tape() as tape:
        loss = ndiff.sum(ndiff.mul(x, x))
    (gx,) = tape.gradient(loss, [x])
"""

from __future__ import annotations

import math

import numpy as np


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ContractError(ValueError):
    pass


_TAPES: list["Tape"] = []


class Tensor:
    """A 2-D float64 value, optionally a node on a tape."""

    __slots__ = ("value", "_parents", "_vjp", "__weakref__")

    def __init__(self, value, _parents=(), _vjp=None):
        arr = np.array(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim > 2:
            raise DimensionError(f"rank {arr.ndim} tensors are not supported")
        self.value = arr
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return self.value.copy()

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered record of the ops evaluated while it is active."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def gradient(self, output: Tensor, params) -> list[np.ndarray]:
        """Adjoints of a scalar ``output`` with respect to ``params``.

        The tape itself is not modified, so repeated calls agree exactly.
        """
        if output.value.size != 1:
            raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
        adj = {id(output): np.ones_like(output.value)}
        for node in reversed(self.nodes):
            g = adj.get(id(node))
            if g is None or node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None:
                    continue
                key = id(parent)
                if key in adj:
                    adj[key] = adj[key] + pg
                else:
                    adj[key] = pg
        return [adj.get(id(p), np.zeros_like(p.value)).copy() for p in params]


def backward(tape: Tape, output: Tensor, params) -> list[np.ndarray]:
    return tape.gradient(output, params)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.value = value
    if _TAPES:
        out._parents = parents
        out._vjp = vjp
        _TAPES[-1].nodes.append(out)
    else:
        out._parents = ()
        out._vjp = None
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    # only row-vector / scalar broadcasting is allowed
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _node(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _node(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _node(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    av, bv = a.value, b.value
    return _node(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    return _node(a.value * c, (a,), lambda g: (g * c,))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    x = a.value
    if np.any(x <= 0):
        raise DomainError("log of a non-positive value")
    return _node(np.log(x), (a,), lambda g: (g / x,))


def softmax_row(a) -> Tensor:
    a = _as_tensor(a)
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _node(out, (a,), vjp)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; the gradient is zero where the clamp is active."""
    a = _as_tensor(a)
    x = a.value
    mask = (x >= lo) & (x <= hi)
    return _node(np.clip(x, lo, hi), (a,), lambda g: (g * mask,))


def sum(a) -> Tensor:  # noqa: A001
    a = _as_tensor(a)
    shape = a.shape
    return _node(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def square(a) -> Tensor:
    a = _as_tensor(a)
    x = a.value
    return _node(x * x, (a,), lambda g: (2.0 * g * x,))


def concat_rows(*ts) -> Tensor:
    """Stack tensors vertically (equal column counts)."""
    ts = [_as_tensor(t) for t in ts]
    cols = {t.shape[1] for t in ts}
    if len(cols) != 1:
        raise DimensionError(f"concat_rows: column counts differ {sorted(cols)}")
    bounds = np.cumsum([0] + [t.shape[0] for t in ts])

    def vjp(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(ts)))

    return _node(np.vstack([t.value for t in ts]), tuple(ts), vjp)


def concat_cols(*ts) -> Tensor:
    """Place tensors side by side (equal row counts)."""
    ts = [_as_tensor(t) for t in ts]
    rows = {t.shape[0] for t in ts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ {sorted(rows)}")
    bounds = np.cumsum([0] + [t.shape[1] for t in ts])

    def vjp(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(ts)))

    return _node(np.hstack([t.value for t in ts]), tuple(ts), vjp)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    r = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=(fan_in, fan_out))


class SGD:
    """Plain SGD, with an optional heavy-ball momentum term."""

    def __init__(self, lr: float, momentum: float = 0.0):
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        self.lr = lr
        self.momentum = momentum
        self._velocity: dict[int, np.ndarray] = {}

    def step(self, params, grads):
        if len(params) != len(grads):
            raise DimensionError(f"{len(params)} params but {len(grads)} grads")
        for p, g in zip(params, grads):
            if p.value.shape != g.shape:
                raise DimensionError(f"sgd_step: param {p.value.shape} vs grad {g.shape}")
            if self.momentum:
                v = self._velocity.get(id(p))
                v = g if v is None else self.momentum * v + g
                self._velocity[id(p)] = v
                g = v
            p.value = p.value - self.lr * g


def sgd_step(params, grads, lr: float):
    SGD(lr).step(params, grads)
    return params
