"""Tape-based reverse-mode automatic differentiation over float64 numpy arrays.

Every primitive's vector-Jacobian product is itself written with primitives, so
running :func:`backward` with ``create_graph=True`` records the adjoint
computation on the same tape and the result can be differentiated again.  That
is what the gradient penalty needs.

Usage::

    w = Tensor(np.ones(3), requires_grad=True)
    with Graph() as g:
        loss = (w * w).sum()
        grads = g.backward(loss)
    grads[w.node_id]
"""
from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Graph", "Record", "NonFiniteError", "ShapeError",
    "no_grad", "active_graph", "as_tensor", "backward", "grad_as_node",
    "matmul", "add", "sub", "mul", "div", "neg", "power", "exp", "log",
    "sigmoid", "tanh", "relu", "softplus", "softmax", "conv1d_same",
    "batch_norm", "sum", "mean", "l2_norm", "concat", "stack", "reshape",
    "transpose", "broadcast_to", "sum_to", "getitem",
]

_ids = itertools.count()


class NonFiniteError(FloatingPointError):
    """A forward or backward value became NaN or infinite."""


class ShapeError(ValueError):
    pass


class _State(threading.local):
    def __init__(self):
        self.graph: Graph | None = None
        self.recording = True
        # during a backward sweep: which inputs of the current record need adjoints
        self.needs: tuple | None = None
        self.adjoint_of: str | None = None  # op whose adjoint is being computed


_state = _State()


class Tensor:
    """Dense float64 array, optionally a node of the active graph."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 copy: bool = True):
        self.data = np.array(data, dtype=np.float64, copy=copy or None)
        self.requires_grad = requires_grad
        self.node_id = next(_ids) if requires_grad else None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f", node={self.node_id}" if self.node_id is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __len__(self):
        return len(self.data)

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)
    def __getitem__(self, key): return getitem(self, key)

    def sum(self, axis=None, keepdims=False): return sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)
    def transpose(self, *axes): return transpose(self, axes or None)

    @property
    def T(self): return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Record:
    """One recorded operation: kind, inputs, output and the closure that maps an
    output adjoint to input adjoints (the closure holds the saved activations)."""

    kind: str
    inputs: tuple
    output: Tensor
    vjp: Callable[[Tensor], Sequence[Tensor | None]]


class Graph:
    """An ordered tape of operation records.  Insertion order is topological."""

    def __init__(self):
        self.records: list[Record] = []
        self._produced: set[int] = set()
        self._prev = None

    def __enter__(self) -> "Graph":
        self._prev = _state.graph
        _state.graph = self
        return self

    def __exit__(self, *exc):
        _state.graph = self._prev
        return False

    def __len__(self):
        return len(self.records)

    def contains(self, t: Tensor) -> bool:
        return t.node_id is not None

    def is_leaf(self, t: Tensor) -> bool:
        return t.node_id is not None and t.node_id not in self._produced

    def append(self, rec: Record):
        self.records.append(rec)
        self._produced.add(rec.output.node_id)

    def backward(self, loss: Tensor, wrt: Sequence[Tensor] | None = None,
                 create_graph: bool = False) -> dict[int, Tensor]:
        return backward(self, loss, wrt=wrt, create_graph=create_graph)


def active_graph() -> Graph | None:
    return _state.graph


class no_grad:
    """Context manager that suspends recording."""

    def __enter__(self):
        self._prev = _state.recording
        _state.recording = False

    def __exit__(self, *exc):
        _state.recording = self._prev
        return False


class _recording:
    def __init__(self, flag: bool):
        self.flag = flag

    def __enter__(self):
        self._prev = _state.recording
        _state.recording = self.flag

    def __exit__(self, *exc):
        _state.recording = self._prev
        return False


def _needs(i: int, t) -> bool:
    if not (isinstance(t, Tensor) and t.requires_grad):
        return False
    return _state.needs is None or _state.needs[i]


def _check_finite(kind: str, arr: np.ndarray):
    # a single reduction: NaN and inf both propagate into the sum
    if not math.isfinite(arr.sum()) and not np.isfinite(arr).all():
        where = f" in the adjoint of '{_state.adjoint_of}'" if _state.adjoint_of else ""
        raise NonFiniteError(f"non-finite value produced by '{kind}'{where}")


# ops that cannot turn finite inputs into non-finite outputs; the check is
# skipped for them since their inputs were already checked when produced
_BOUNDED = frozenset({"getitem", "reshape", "transpose", "concat", "stack", "broadcast_to",
                      "neg", "relu", "sigmoid", "tanh", "softmax", "scatter"})


def _emit(kind: str, data: np.ndarray, inputs: tuple, vjp) -> Tensor:
    if kind not in _BOUNDED:
        _check_finite(kind, data)
    graph = _state.graph
    if (graph is None or not _state.recording
            or not any(isinstance(t, Tensor) and t.requires_grad for t in inputs)):
        return Tensor(data, copy=False)
    out = Tensor(data, requires_grad=True, copy=False)
    graph.append(Record(kind, inputs, out, vjp))
    return out


# ---------------------------------------------------------------------------
# broadcasting helpers

def _unbroadcast_axes(shape, target):
    lead = len(shape) - len(target)
    axes = list(range(lead))
    for i, n in enumerate(target):
        if n == 1 and shape[lead + i] != 1:
            axes.append(lead + i)
    return tuple(axes)


def sum_to(x: Tensor, shape: tuple) -> Tensor:
    """Sum ``x`` down to a broadcast-compatible ``shape``."""
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    axes = _unbroadcast_axes(x.shape, shape)
    data = x.data.sum(axis=axes, keepdims=True) if axes else x.data
    data = data.reshape(shape)
    src = x.shape
    return _emit("sum_to", data, (x,), lambda g: (broadcast_to(g, src),))


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    try:
        data = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None
    src = x.shape
    return _emit("broadcast_to", data, (x,), lambda g: (sum_to(g, src),))


def _binary(kind, fn, a, b) -> np.ndarray:
    # numpy rejects incompatible shapes itself; only the error type changes
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# element-wise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit("add", _binary("add", np.add, a, b), (a, b),
                 lambda g: (sum_to(g, a.shape), sum_to(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit("sub", _binary("sub", np.subtract, a, b), (a, b),
                 lambda g: (sum_to(g, a.shape), sum_to(neg(g), b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", -a.data, (a,), lambda g: (neg(g),))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit("mul", _binary("mul", np.multiply, a, b), (a, b),
                 lambda g: (sum_to(mul(g, b), a.shape) if _needs(0, a) else None,
                            sum_to(mul(g, a), b.shape) if _needs(1, b) else None))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if np.any(b.data == 0):
        raise NonFiniteError("non-finite value produced by 'div' (division by zero)")
    out_data = _binary("div", np.divide, a, b)

    def vjp(g):
        ga = sum_to(div(g, b), a.shape) if _needs(0, a) else None
        gb = None
        if _needs(1, b):
            gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    return _emit("div", out_data, (a, b), vjp)


def power(a, p: float) -> Tensor:
    """Element-wise ``a ** p`` for a constant exponent."""
    a = as_tensor(a)
    p = float(p)
    if p == 2.0:
        data = a.data * a.data
    else:
        data = a.data ** p

    def vjp(g):
        if p == 2.0:
            return (mul(g, mul(a, 2.0)),)
        return (mul(g, mul(power(a, p - 1.0), p)),)

    return _emit("pow", data, (a,), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = None

    def vjp(g):
        return (mul(g, out),)

    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    out = _emit("exp", data, (a,), vjp)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NonFiniteError("non-finite value produced by 'log' (non-positive input)")
    return _emit("log", np.log(a.data), (a,), lambda g: (div(g, a),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # the tanh form never overflows
    data = 0.5 * (1.0 + np.tanh(0.5 * x))
    out = None

    def vjp(g):
        return (mul(g, mul(out, sub(1.0, out))),)

    out = _emit("sigmoid", data, (a,), vjp)
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = None

    def vjp(g):
        return (mul(g, sub(1.0, mul(out, out))),)

    out = _emit("tanh", np.tanh(a.data), (a,), vjp)
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > 0).astype(np.float64)
    return _emit("relu", a.data * mask, (a,), lambda g: (mul(g, mask),))


def softplus(a) -> Tensor:
    """``log(1 + exp(a))`` computed without overflow."""
    a = as_tensor(a)
    x = a.data
    data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _emit("softplus", data, (a,), lambda g: (mul(g, sigmoid(a)),))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)
    out = None

    def vjp(g):
        inner = sum(mul(g, out), axis=axis, keepdims=True)
        return (mul(out, sub(g, inner)),)

    out = _emit("softmax", data, (a,), vjp)
    return out


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., m, n) and ``b`` of shape (n, p) or (..., n, p)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def vjp(g):
        ga = gb = None
        if _needs(0, a):
            ga = sum_to(matmul(g, _swap(b)), a.shape)
        if _needs(1, b):
            if a.ndim > 2 and b.ndim == 2:
                a2 = reshape(a, (-1, a.shape[-1]))
                g2 = reshape(g, (-1, g.shape[-1]))
                gb = matmul(_swap(a2), g2)
            else:
                gb = sum_to(matmul(_swap(a), g), b.shape)
        return ga, gb

    return _emit("matmul", data, (a, b), vjp)


def _swap(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit("transpose", np.transpose(a.data, axes).copy(), (a,),
                 lambda g: (transpose(g, inv),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {src} to {tuple(shape)}") from None
    return _emit("reshape", data, (a,), lambda g: (reshape(g, src),))


# ---------------------------------------------------------------------------
# reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def _expand_back(g: Tensor, axes, keepdims, shape):
    if not keepdims:
        kshape = tuple(1 if i in axes else n for i, n in enumerate(shape))
        g = reshape(g, kshape)
    return broadcast_to(g, shape)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    src = a.shape
    data = a.data.sum(axis=axes, keepdims=keepdims)
    return _emit("sum", np.asarray(data), (a,),
                 lambda g: (_expand_back(g, axes, keepdims, src),))


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    src = a.shape
    data = a.data.mean(axis=axes, keepdims=keepdims)
    return _emit("mean", np.asarray(data), (a,),
                 lambda g: (_expand_back(mul(g, 1.0 / count), axes, keepdims, src),))


def l2_norm(a, axis=-1, keepdims: bool = False) -> Tensor:
    """Euclidean norm over ``axis``.  Where the norm is exactly zero the adjoint
    is taken to be zero."""
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    nk = np.sqrt((a.data * a.data).sum(axis=axes, keepdims=True))
    data = nk if keepdims else nk.reshape([n for i, n in enumerate(a.shape) if i not in axes])
    src = a.shape
    out = None

    def vjp(g):
        o = out if keepdims else _expand_back_noexpand(out, axes, src)
        gk = g if keepdims else _expand_back_noexpand(g, axes, src)
        zero = (o.data == 0).astype(np.float64)
        safe = add(o, zero)
        return (mul(a, div(gk, safe)),)

    out = _emit("l2_norm", data, (a,), vjp)
    return out


def _expand_back_noexpand(g, axes, shape):
    kshape = tuple(1 if i in axes else n for i, n in enumerate(shape))
    return reshape(g, kshape)


# ---------------------------------------------------------------------------
# structural

def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no inputs")
    ndim = ts[0].ndim
    ax = axis % ndim
    for t in ts[1:]:
        if t.ndim != ndim or any(t.shape[i] != ts[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ts[0].shape} and {t.shape} on axis {axis}")
    data = np.concatenate([t.data for t in ts], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def vjp(g):
        out = []
        for i, t in enumerate(ts):
            if not t.requires_grad:
                out.append(None)
                continue
            key = [slice(None)] * ndim
            key[ax] = slice(int(bounds[i]), int(bounds[i + 1]))
            out.append(getitem(g, tuple(key)))
        return out

    return _emit("concat", data, tuple(ts), vjp)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = axis % (ts[0].ndim + 1)
    expanded = [reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in ts]
    return concat(expanded, axis=ax)


def getitem(a, key) -> Tensor:
    """Basic (slice/int) indexing."""
    a = as_tensor(a)
    data = a.data[key]
    src = a.shape
    return _emit("getitem", np.array(data), (a,), lambda g: (_scatter(g, key, src),))


def _scatter(g, key, shape) -> Tensor:
    g = as_tensor(g)
    data = np.zeros(shape)
    data[key] = g.data
    return _emit("scatter", data, (g,), lambda h: (getitem(h, key),))


# ---------------------------------------------------------------------------
# convolution and normalization

def _windows(x: np.ndarray, width: int) -> np.ndarray:
    pad = (width - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    # (B, L, C, K) -> (B, L, K, C)
    win = np.lib.stride_tricks.sliding_window_view(xp, width, axis=1)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2))


def conv1d_same(x, w) -> Tensor:
    """Stride-1 'same' convolution over the length axis.

    ``x`` is (batch, length, in_channels), ``w`` is (width, in_channels,
    out_channels) with odd ``width``.  Output is (batch, length, out_channels).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1] or w.shape[0] % 2 == 0:
        raise ShapeError(f"conv1d_same: incompatible shapes {x.shape} and {w.shape}")
    width, cin, cout = w.shape
    bsz, length, _ = x.shape
    win = _windows(x.data, width).reshape(bsz * length, width * cin)
    data = (win @ w.data.reshape(width * cin, cout)).reshape(bsz, length, cout)

    def vjp(g):
        gx = gw = None
        if _needs(0, x):
            gx = conv1d_same(g, transpose(getitem(w, slice(None, None, -1)), (0, 2, 1)))
        if _needs(1, w):
            gw = _conv1d_weight_grad(x, g, width)
        return gx, gw

    return _emit("conv1d_same", data, (x, w), vjp)


def _conv1d_weight_grad(x, g, width: int) -> Tensor:
    x, g = as_tensor(x), as_tensor(g)
    bsz, length, cin = x.shape
    cout = g.shape[2]
    win = _windows(x.data, width).reshape(bsz * length, width * cin)
    data = (win.T @ g.data.reshape(bsz * length, cout)).reshape(width, cin, cout)

    def vjp(h):
        gx = gg = None
        if _needs(0, x):
            gx = conv1d_same(g, transpose(getitem(h, slice(None, None, -1)), (0, 2, 1)))
        if _needs(1, g):
            gg = conv1d_same(x, h)
        return gx, gg

    return _emit("conv1d_wgrad", data, (x, g), vjp)


def batch_norm(x, gamma, beta, axes=(0, 1), eps: float = 1e-5) -> Tensor:
    """Training-mode batch normalization over ``axes`` using batch statistics.

    The adjoint differentiates through the batch mean and variance.  Eval mode
    is plain affine arithmetic and lives in the model code.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = tuple(axes)
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    xhat = xc / np.sqrt(var + eps)
    data = xhat * gamma.data + beta.data

    def vjp(g):
        # recomputed from tensors so the adjoint is itself differentiable
        m = mean(x, axis=axes, keepdims=True)
        c = sub(x, m)
        v = mean(mul(c, c), axis=axes, keepdims=True)
        inv = power(add(v, eps), -0.5)
        xh = mul(c, inv)
        gx = None
        if _needs(0, x):
            dxh = mul(g, gamma)
            t1 = sub(dxh, mean(dxh, axis=axes, keepdims=True))
            t2 = mul(xh, mean(mul(dxh, xh), axis=axes, keepdims=True))
            gx = mul(sub(t1, t2), inv)
        gg = sum_to(mul(g, xh), gamma.shape) if _needs(1, gamma) else None
        gb = sum_to(g, beta.shape) if _needs(2, beta) else None
        return gx, gg, gb

    out = _emit("batch_norm", data, (x, gamma, beta), vjp)
    return out


# ---------------------------------------------------------------------------
# reverse sweep

def backward(graph: Graph, loss: Tensor, wrt: Sequence[Tensor] | None = None,
             create_graph: bool = False) -> dict[int, Tensor]:
    """Accumulate adjoints of ``loss`` by sweeping ``graph`` in reverse.

    Returns a map node-id -> adjoint for every leaf reached (or for the nodes in
    ``wrt`` when given; unreached ones get zeros).  With ``create_graph`` the
    adjoint arithmetic is recorded on ``graph`` so it can be differentiated.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    wanted = None
    if wrt is not None:
        for t in wrt:
            if t.node_id is None:
                raise ValueError("backward: wrt tensor is not part of the graph")
        wanted = {t.node_id for t in wrt}
    if loss.node_id is None:
        if wanted is None:
            return {}
        return {t.node_id: Tensor(np.zeros(t.shape)) for t in wrt}

    records = graph.records[:]
    relevant = None
    if wanted is not None:
        # forward sweep: nodes from which a wanted node is reachable downstream
        relevant = set(wanted)
        for rec in records:
            if any(isinstance(t, Tensor) and t.node_id in relevant for t in rec.inputs):
                relevant.add(rec.output.node_id)

    adj: dict[int, Tensor] = {loss.node_id: Tensor(np.ones(loss.shape))}
    produced = graph._produced
    with _recording(create_graph):
        for rec in reversed(records):
            g = adj.get(rec.output.node_id)
            if g is None:
                continue
            if relevant is not None and rec.output.node_id not in relevant:
                continue
            if rec.output.node_id not in (wanted or ()):
                del adj[rec.output.node_id]
            if relevant is None:
                _state.needs = None
            else:
                _state.needs = tuple(isinstance(t, Tensor) and t.node_id in relevant
                                     for t in rec.inputs)
            _state.adjoint_of = rec.kind
            try:
                grads = rec.vjp(g)
            finally:
                _state.needs = None
                _state.adjoint_of = None
            for t, gi in zip(rec.inputs, grads):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                if relevant is not None and t.node_id not in relevant:
                    continue
                if gi.shape != t.shape:
                    raise ShapeError(f"adjoint shape {gi.shape} != {t.shape} in '{rec.kind}'")
                prev = adj.get(t.node_id)
                adj[t.node_id] = gi if prev is None else add(prev, gi)

    if wanted is not None:
        return {t.node_id: adj.get(t.node_id, Tensor(np.zeros(t.shape))) for t in wrt}
    return {k: v for k, v in adj.items() if k not in produced}


def grad_as_node(graph: Graph, scalar: Tensor, wrt: Tensor) -> Tensor:
    """d(scalar)/d(wrt) emitted as a differentiable node of ``graph``."""
    if wrt.node_id is None:
        raise ValueError("grad_as_node: wrt is not a node of the graph")
    if scalar.size != 1:
        raise ShapeError(f"grad_as_node: expected a scalar, got shape {scalar.shape}")
    return backward(graph, scalar, wrt=[wrt], create_graph=True)[wrt.node_id]
