"""Dense float64 tensor algebra with reverse-mode gradients and forward-mode JVPs.

A small tape-based engine: each op records a backward closure on its output
node while gradient recording is enabled.  Forward-mode derivatives are
carried as an optional tangent array alongside the primal value, so a single
evaluation of a function on seeded inputs yields a jacobian-vector product.
Tangent propagation never records on the tape (targets built from JVPs are
always stop-gradiented downstream).
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def grad_enabled() -> bool:
    return _GRAD_ENABLED[-1]


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """Immutable dense array node.

    ``data`` is always float64.  ``tangent`` (same shape, or None) carries the
    forward-mode directional derivative.  ``requires_grad`` marks trainable
    leaves; interior graph nodes get backward closures from the op that made
    them.
    """

    __slots__ = ("data", "tangent", "requires_grad", "grad", "_prev", "_backward")

    def __init__(self, data, requires_grad=False, tangent=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tangent = None if tangent is None else np.asarray(tangent, dtype=np.float64)
        if self.tangent is not None and self.tangent.shape != self.data.shape:
            raise ValueError(
                f"tangent shape {self.tangent.shape} != primal shape {self.data.shape}")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._prev = ()
        self._backward = None

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def in_graph(self):
        return self.requires_grad or self._backward is not None

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def backward(self):
        """Reverse-mode accumulation from this scalar node."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss node")
        topo, seen = [], set()

        def visit(node):
            if id(node) in seen or not node.in_graph:
                return
            seen.add(id(node))
            for p in node._prev:
                visit(p)
            topo.append(node)

        visit(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ---------------------------------------------------

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, tangent, parents, backward):
    """Assemble an op output: tangent always, tape closure only if recording."""
    out = Tensor(data, tangent=tangent)
    if grad_enabled() and any(p.in_graph for p in parents):
        out._prev = tuple(p for p in parents if p.in_graph)

        def hook(g, _backward=backward):
            _backward(g)

        out._backward = hook
    return out


def _accum(node: Tensor, g: np.ndarray):
    if not node.in_graph:
        return
    if node.grad is None:
        node.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        node.grad = node.grad + g


def _tang(x: Tensor) -> np.ndarray | None:
    return x.tangent


# -- elementary ops -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data
    ta, tb = _tang(a), _tang(b)
    tangent = None
    if ta is not None or tb is not None:
        tangent = np.broadcast_to(0.0 if ta is None else ta, data.shape) \
            + np.broadcast_to(0.0 if tb is None else tb, data.shape)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(data, tangent, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data
    ta, tb = _tang(a), _tang(b)
    tangent = None
    if ta is not None or tb is not None:
        tangent = np.broadcast_to(0.0 if ta is None else ta, data.shape) \
            - np.broadcast_to(0.0 if tb is None else tb, data.shape)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(data, tangent, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data
    ta, tb = _tang(a), _tang(b)
    tangent = None
    if ta is not None or tb is not None:
        tangent = np.zeros(data.shape)
        if ta is not None:
            tangent = tangent + ta * b.data
        if tb is not None:
            tangent = tangent + a.data * tb

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, tangent, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data @ b.data
    ta, tb = _tang(a), _tang(b)
    tangent = None
    if ta is not None or tb is not None:
        tangent = np.zeros(data.shape)
        if ta is not None:
            tangent = tangent + ta @ b.data
        if tb is not None:
            tangent = tangent + a.data @ tb

    def backward(g):
        if a.in_graph:
            ga = g @ b.data.T if b.data.ndim == 2 else np.outer(g, b.data)
            _accum(a, _unbroadcast(np.atleast_1d(ga).reshape(a.shape) if ga.shape != a.shape else ga, a.shape))
        if b.in_graph:
            gb = a.data.T @ g if a.data.ndim == 2 else np.outer(a.data, g)
            _accum(b, _unbroadcast(gb.reshape(b.shape) if gb.shape != b.shape else gb, b.shape))

    return _make(data, tangent, (a, b), backward)


def sum_(a, axis=None) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis)
    ta = _tang(a)
    tangent = None if ta is None else ta.sum(axis=axis)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _make(data, tangent, (a,), backward)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    data = a.data.mean(axis=axis)
    ta = _tang(a)
    tangent = None if ta is None else ta.mean(axis=axis)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g / n, a.shape))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g / n, axis), a.shape))

    return _make(data, tangent, (a,), backward)


def square(a) -> Tensor:
    a = as_tensor(a)
    data = a.data ** 2
    ta = _tang(a)
    tangent = None if ta is None else 2.0 * a.data * ta

    def backward(g):
        _accum(a, g * 2.0 * a.data)

    return _make(data, tangent, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)
    ta = _tang(a)
    tangent = None if ta is None else data * ta

    def backward(g):
        _accum(a, g * data)

    return _make(data, tangent, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)
    ta = _tang(a)
    tangent = None if ta is None else ta / a.data

    def backward(g):
        _accum(a, g / a.data)

    return _make(data, tangent, (a,), backward)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    data = np.logaddexp(0.0, a.data)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    ta = _tang(a)
    tangent = None if ta is None else sig * ta

    def backward(g):
        _accum(a, g * sig)

    return _make(data, tangent, (a,), backward)


def silu(a) -> Tensor:
    a = as_tensor(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    data = a.data * sig
    dsig = sig * (1.0 + a.data * (1.0 - sig))
    ta = _tang(a)
    tangent = None if ta is None else dsig * ta

    def backward(g):
        _accum(a, g * dsig)

    return _make(data, tangent, (a,), backward)


def sin(a) -> Tensor:
    a = as_tensor(a)
    data = np.sin(a.data)
    ta = _tang(a)
    tangent = None if ta is None else np.cos(a.data) * ta

    def backward(g):
        _accum(a, g * np.cos(a.data))

    return _make(data, tangent, (a,), backward)


def cos(a) -> Tensor:
    a = as_tensor(a)
    data = np.cos(a.data)
    ta = _tang(a)
    tangent = None if ta is None else -np.sin(a.data) * ta

    def backward(g):
        _accum(a, g * (-np.sin(a.data)))

    return _make(data, tangent, (a,), backward)


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    tangent = None
    if any(t.tangent is not None for t in tensors):
        tangent = np.concatenate(
            [t.tangent if t.tangent is not None else np.zeros(t.shape) for t in tensors],
            axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return _make(data, tangent, tuple(tensors), backward)


def slice_(a, idx) -> Tensor:
    a = as_tensor(a)
    data = a.data[idx]
    ta = _tang(a)
    tangent = None if ta is None else ta[idx]

    def backward(g):
        full = np.zeros(a.shape)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _make(data, tangent, (a,), backward)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    data = np.broadcast_to(a.data, shape).copy()
    ta = _tang(a)
    tangent = None if ta is None else np.broadcast_to(ta, shape).copy()

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))

    return _make(data, tangent, (a,), backward)


def stop_gradient(a) -> Tensor:
    """Value-identical node with no tape history and no tangent."""
    a = as_tensor(a)
    return Tensor(a.data)


# -- derivative drivers ---------------------------------------------------


def grad(loss: Tensor, params: dict) -> dict:
    """Reverse-mode partials of a scalar ``loss`` w.r.t. named parameters.

    Parameters not reached by the loss map to zero arrays.
    """
    if loss.data.size != 1:
        raise ValueError("grad() requires a scalar loss")
    for p in params.values():
        p.grad = None
    loss.backward()
    out = {}
    for name, p in params.items():
        out[name] = np.zeros(p.shape) if p.grad is None else p.grad
    return out


def jvp(f, x: Tensor, v: Tensor):
    """Value and directional derivative of ``f`` at ``x`` along ``v``.

    Runs outside gradient recording; the caller stop-gradients the result.
    """
    x, v = as_tensor(x), as_tensor(v)
    if x.shape != v.shape:
        raise ValueError(f"tangent shape {v.shape} != point shape {x.shape}")
    with no_grad():
        out = f(Tensor(x.data, tangent=v.data))
    tangent = out.tangent if out.tangent is not None else np.zeros(out.shape)
    return Tensor(out.data), Tensor(tangent)


def jvp_joint(f, x: Tensor, s: float, t: float, dx, ds: float, dt: float):
    """Value and total directional derivative of ``f(x, s, t)``.

    The tangent is ``grad_x f . dx + d_s f . ds + d_t f . dt``; ``s`` and
    ``t`` are scalars.
    """
    x = as_tensor(x)
    dx = as_tensor(dx)
    if x.shape != dx.shape:
        raise ValueError(f"tangent shape {dx.shape} != point shape {x.shape}")
    with no_grad():
        xs = Tensor(x.data, tangent=dx.data)
        ss = Tensor(float(s), tangent=float(ds))
        ts = Tensor(float(t), tangent=float(dt))
        out = f(xs, ss, ts)
    tangent = out.tangent if out.tangent is not None else np.zeros(out.shape)
    return Tensor(out.data), Tensor(tangent)
