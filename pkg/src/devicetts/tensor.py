"""Dense tensors with tape-based reverse-mode differentiation.

Arrays live in numpy; every differentiable primitive and its backward rule is
defined here.  Ops are recorded only while a :class:`Graph` is active and at
least one operand requires a gradient, so inference runs without overhead.

Matrix products go through a non-optimised ``einsum`` rather than BLAS: each
output row is then computed with the same reduction order no matter how many
rows are in the batch, which keeps windowed (streaming) evaluation bit-equal
to whole-sequence evaluation.
"""

from __future__ import annotations

import contextlib
from collections import defaultdict
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "Tensor", "Graph", "ShapeError", "OpCounter",
    "get_dtype", "precision", "tensor", "parameter",
    "matmul", "add", "sub", "mul", "scale", "concat", "slice_", "reshape",
    "take", "sigmoid", "tanh", "relu", "abs_", "sum_", "mean", "fsmn_memory",
    "backward",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested primitive."""


_DTYPE = np.float32


def get_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(bits: int) -> Iterator[None]:
    """Switch the engine-wide float width (32 or 64) inside the block."""
    global _DTYPE
    if bits not in (32, 64):
        raise ValueError(f"precision must be 32 or 64, got {bits}")
    prev = _DTYPE
    _DTYPE = np.float64 if bits == 64 else np.float32
    try:
        yield
    finally:
        _DTYPE = prev


class Tensor:
    """A dense row-major array, optionally a node on the active graph."""

    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != np.float32 and arr.dtype != np.float64:
            arr = arr.astype(_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

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

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), self.requires_grad, self.name)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"


def tensor(data) -> Tensor:
    """Constant tensor in the current precision."""
    return Tensor(np.asarray(data, dtype=_DTYPE))


def parameter(data, name: str | None = None) -> Tensor:
    """Trainable leaf in the current precision."""
    return Tensor(np.array(data, dtype=_DTYPE), requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# graph recording


class Graph:
    """Records primitive ops in execution order for a later backward pass.

    Use as a context manager; ops executed inside the block whose inputs
    require gradients are appended to :attr:`nodes`.
    """

    _active: list["Graph"] = []

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Graph":
        Graph._active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Graph._active.pop()

    @classmethod
    def current(cls) -> "Graph | None":
        return cls._active[-1] if cls._active else None

    def backward(self, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``loss`` w.r.t. each of ``params``.

        Leaves the loss does not reach get a zero gradient.  Nodes are
        visited once, in reverse recording order.
        """
        if loss.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return [grads.get(id(p), np.zeros_like(p.data)) for p in params]


def backward(graph: Graph, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    return graph.backward(loss, params)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], bw: Callable) -> Tensor:
    out = Tensor(data)
    graph = Graph.current()
    if graph is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = bw
        graph.nodes.append(out)
    return out


# ---------------------------------------------------------------------------
# op counting


class OpCounter:
    """Tallies multiply-accumulates and elementwise FLOPs of executed ops.

    Counts are attributed to the innermost :meth:`scope` label.
    """

    _active: list["OpCounter"] = []

    def __init__(self):
        self.macs: dict[str, int] = defaultdict(int)
        self.elementwise: dict[str, int] = defaultdict(int)
        self._scopes: list[str] = []

    def __enter__(self) -> "OpCounter":
        OpCounter._active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        OpCounter._active.remove(self)

    @property
    def total_macs(self) -> int:
        return sum(self.macs.values())

    @property
    def total_elementwise(self) -> int:
        return sum(self.elementwise.values())

    @property
    def total_flops(self) -> int:
        return 2 * self.total_macs + self.total_elementwise

    def snapshot(self) -> tuple[int, int]:
        return self.total_macs, self.total_elementwise


@contextlib.contextmanager
def scope(label: str) -> Iterator[None]:
    """Attribute counted ops inside the block to ``label``."""
    for c in OpCounter._active:
        c._scopes.append(label)
    try:
        yield
    finally:
        for c in OpCounter._active:
            c._scopes.pop()


def _count(macs: int = 0, elementwise: int = 0) -> None:
    for c in OpCounter._active:
        label = c._scopes[-1] if c._scopes else "other"
        if macs:
            c.macs[label] += int(macs)
        if elementwise:
            c.elementwise[label] += int(elementwise)


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[T,K] @ b[K,N]``; a 1-D ``a`` is treated as a single row."""
    if a.ndim not in (1, 2) or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    if a.ndim == 1:
        out = np.einsum("k,kn->n", ad, bd)
    else:
        out = np.einsum("tk,kn->tn", ad, bd)
    _count(macs=out.size * b.shape[0])

    def bw(g):
        if a.ndim == 1:
            return np.einsum("n,kn->k", g, bd), np.einsum("k,n->kn", ad, g)
        return np.einsum("tn,kn->tk", g, bd), np.einsum("tk,tn->kn", ad, g)

    return _make(out, (a, b), bw)


def _check_binary(op: str, a: Tensor, b: Tensor) -> bool:
    """True when ``b`` is a per-row vector broadcast over ``a``'s time axis."""
    if a.shape == b.shape:
        return False
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return True
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    bcast = _check_binary("add", a, b)
    out = a.data + b.data
    _count(elementwise=out.size)

    def bw(g):
        return g, (g.sum(axis=0) if bcast else g)

    return _make(out, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    bcast = _check_binary("sub", a, b)
    out = a.data - b.data
    _count(elementwise=out.size)

    def bw(g):
        return g, (-g.sum(axis=0) if bcast else -g)

    return _make(out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    bcast = _check_binary("mul", a, b)
    ad, bd = a.data, b.data
    out = ad * bd
    _count(elementwise=out.size)

    def bw(g):
        gb = g * ad
        return g * bd, (gb.sum(axis=0) if bcast else gb)

    return _make(out, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python scalar constant."""
    out = a.data * a.data.dtype.type(c)
    _count(elementwise=out.size)
    return _make(out, (a,), lambda g: (g * g.dtype.type(c),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Join along the feature axis (default) or the time axis (``axis=0``)."""
    if not xs:
        raise ShapeError("concat: no inputs")
    ax = axis % xs[0].ndim
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or any(
            x.shape[i] != xs[0].shape[i] for i in range(x.ndim) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {xs[0].shape} and {x.shape}")
    out = np.concatenate([x.data for x in xs], axis=ax)
    bounds = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(out, tuple(xs), bw)


def slice_(x: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice along time (default) or feature axis."""
    ax = axis % x.ndim
    n = x.shape[ax]
    if not 0 <= start <= stop <= n:
        raise ShapeError(f"slice: [{start}:{stop}] out of range for axis of length {n}")
    idx = [slice(None)] * x.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)
    out = x.data[idx]

    def bw(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return _make(out, (x,), bw)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def take(x: Tensor, indices) -> Tensor:
    """Gather rows ``x[indices]``; backward scatter-adds into the rows."""
    idx = np.asarray(indices, dtype=np.int64)
    n = x.shape[0]
    if idx.ndim != 1:
        raise ShapeError(f"take: indices must be 1-D, got shape {idx.shape}")
    bad = np.nonzero((idx < 0) | (idx >= n))[0]
    if bad.size:
        p = int(bad[0])
        raise IndexError(f"take: index {int(idx[p])} at position {p} out of range [0, {n})")
    out = x.data[idx]

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out, (x,), bw)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    _count(elementwise=out.size)
    return _make(out, (x,), lambda g: (g * out * (1 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    _count(elementwise=out.size)
    return _make(out, (x,), lambda g: (g * (1 - out * out),))


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    _count(elementwise=out.size)
    return _make(out, (x,), lambda g: (g * (x.data > 0),))


def abs_(x: Tensor) -> Tensor:
    """|x| with subgradient sign(0) = 0."""
    out = np.abs(x.data)
    _count(elementwise=out.size)
    return _make(out, (x,), lambda g: (g * np.sign(x.data),))


def sum_(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)
    _count(elementwise=x.size)
    return _make(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x: Tensor) -> Tensor:
    n = x.size
    out = np.asarray(x.data.sum() / n, dtype=x.data.dtype)
    _count(elementwise=n)
    return _make(out, (x,), lambda g: (np.full(x.shape, g / n, dtype=x.data.dtype),))


def fsmn_memory(h: Tensor, lookback: Tensor, lookahead: Tensor) -> Tensor:
    """Bidirectional memory filter over the time axis.

    ``out[t] = h[t] + sum_{i=0..N1} lookback[i] * h[t-i]
    + sum_{j=1..N2} lookahead[j-1] * h[t+j]``, frames outside ``[0, T)``
    contributing zero.  Taps are accumulated in a fixed order so any frame
    whose support lies inside the input gets identical bits regardless of
    how much surrounding context was supplied.
    """
    if h.ndim != 2:
        raise ShapeError(f"fsmn_memory: input must be [T, P], got {h.shape}")
    T, P = h.shape
    if lookback.ndim != 2 or lookback.shape[1] != P or lookahead.ndim != 2 or (
        lookahead.shape[1] != P
    ):
        raise ShapeError(
            f"fsmn_memory: filters {lookback.shape}, {lookahead.shape} "
            f"do not match input {h.shape}"
        )
    hd, ad, cd = h.data, lookback.data, lookahead.data
    n1, n2 = ad.shape[0] - 1, cd.shape[0]
    out = hd.copy()
    for i in range(min(n1 + 1, T)):
        out[i:] += ad[i] * hd[: T - i]
    for j in range(1, min(n2, T - 1) + 1):
        out[: T - j] += cd[j - 1] * hd[j:]
    # padded-convolution convention: every tap is charged for every frame
    _count(macs=T * (n1 + 1 + n2) * P, elementwise=T * P)

    def bw(g):
        gh = g.copy()
        ga = np.zeros_like(ad)
        gc = np.zeros_like(cd)
        for i in range(min(n1 + 1, T)):
            gh[: T - i] += ad[i] * g[i:]
            ga[i] = (g[i:] * hd[: T - i]).sum(axis=0)
        for j in range(1, min(n2, T - 1) + 1):
            gh[j:] += cd[j - 1] * g[: T - j]
            gc[j - 1] = (g[: T - j] * hd[j:]).sum(axis=0)
        return gh, ga, gc

    return _make(out, (h, lookback, lookahead), bw)
