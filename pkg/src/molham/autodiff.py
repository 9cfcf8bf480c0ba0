"""Dense float64 tensors with reverse-mode differentiation.

A Tape is an append-only record of primitive operations; append order is a
valid topological order, so the backward pass is a single reverse scan that
visits each node exactly once. Tensors created without a tape are constants
and are never recorded; an expression built purely from constants produces a
constant, so backward over a record with no differentiable leaves is a no-op.

Gradient accumulation follows the fixed reverse-scan order, which makes
training runs bit-reproducible for a given seed.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteValue, ShapeMismatch

Array = np.ndarray


def _np(x) -> Array:
    return np.asarray(x, dtype=np.float64)


class Tape:
    """Append-only computation record for one backward pass."""

    __slots__ = ("_parents", "_backprops", "_grads")

    def __init__(self):
        self._parents: list[tuple[int, ...]] = []
        self._backprops: list[Callable[[Array], tuple[Array, ...]] | None] = []
        self._grads: list[Array | None] = []

    def __len__(self) -> int:
        return len(self._parents)

    def _record(self, parents: tuple[int, ...], backprop) -> int:
        self._parents.append(parents)
        self._backprops.append(backprop)
        return len(self._parents) - 1

    def leaf(self, data) -> "Tensor":
        """Register a differentiable leaf (a trainable parameter)."""
        arr = _np(data)
        node = self._record((), None)
        return Tensor(arr, self, node)

    def backward(self, out: "Tensor") -> None:
        """Accumulate gradients of a scalar output into every node."""
        if out.tape is not self or out.node is None:
            raise ShapeMismatch("output tensor does not belong to this tape")
        if out.data.size != 1:
            raise ShapeMismatch(f"backward needs a scalar output, got shape {out.data.shape}")
        grads: list[Array | None] = [None] * len(self._parents)
        grads[out.node] = np.ones_like(out.data)
        for nid in range(len(self._parents) - 1, -1, -1):
            g = grads[nid]
            bp = self._backprops[nid]
            if g is None or bp is None:
                continue
            for pid, pg in zip(self._parents[nid], bp(g)):
                if grads[pid] is None:
                    grads[pid] = pg
                else:
                    grads[pid] = grads[pid] + pg
        self._grads = grads

    def grad(self, t: "Tensor") -> Array | None:
        if t.tape is not self or t.node is None:
            return None
        if not self._grads:
            return None
        return self._grads[t.node]


class Tensor:
    """float64 array, optionally attached to a Tape node."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: Tape | None = None, node: int | None = None):
        self.data = _np(data)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def requires_grad(self) -> bool:
        return self.tape is not None

    @property
    def grad(self) -> Array | None:
        return None if self.tape is None else self.tape.grad(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = "const" if self.tape is None else f"node={self.node}"
        return f"Tensor(shape={self.data.shape}, {tag})"

    # operator sugar; every operator lowers to a recorded primitive
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __matmul__(self, other): return matmul(self, other)
    def __neg__(self): return mul(self, -1.0)

    @property
    def T(self): return transpose(self)


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(_np(x))


def _tape_of(*ts: Tensor) -> Tape | None:
    tape = None
    for t in ts:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise ShapeMismatch("operands recorded on different tapes")
            tape = t.tape
    return tape


def _make(data: Array, pulls: Sequence[tuple[Tensor, Callable[[Array], Array]]]) -> Tensor:
    """Create the result tensor, recording only tape-attached parents."""
    live = [(t.node, fn) for t, fn in pulls if t.tape is not None]
    tape = _tape_of(*[t for t, _ in pulls])
    if tape is None or not live:
        return Tensor(data)
    parents = tuple(nid for nid, _ in live)

    def backprop(g: Array) -> tuple[Array, ...]:
        return tuple(fn(g) for _, fn in live)

    node = tape._record(parents, backprop)
    return Tensor(data, tape, node)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return np.ascontiguousarray(g.reshape(shape))


# --- arithmetic primitives ---

def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    out = a.data + b.data
    return _make(out, [(a, lambda g: _unbroadcast(g, a.data.shape)),
                       (b, lambda g: _unbroadcast(g, b.data.shape))])


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    out = a.data - b.data
    return _make(out, [(a, lambda g: _unbroadcast(g, a.data.shape)),
                       (b, lambda g: _unbroadcast(-g, b.data.shape))])


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    out = a.data * b.data
    return _make(out, [(a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
                       (b, lambda g: _unbroadcast(g * a.data, b.data.shape))])


def div(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    out = a.data / b.data
    return _make(out, [(a, lambda g: _unbroadcast(g / b.data, a.data.shape)),
                       (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))])


def matmul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul expects rank-2 operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data
    return _make(out, [(a, lambda g: g @ b.data.T),
                       (b, lambda g: a.data.T @ g)])


def transpose(a) -> Tensor:
    a = constant(a)
    if a.ndim != 2:
        raise ShapeMismatch(f"transpose expects rank-2, got {a.data.shape}")
    return _make(np.ascontiguousarray(a.data.T), [(a, lambda g: np.ascontiguousarray(g.T))])


def reshape(a, shape) -> Tensor:
    a = constant(a)
    out = a.data.reshape(shape)
    return _make(np.ascontiguousarray(out), [(a, lambda g: g.reshape(a.data.shape))])


# --- elementwise primitives ---

def _unary(a, out: Array, dfn: Callable[[], Array]) -> Tensor:
    return _make(out, [(a, lambda g: g * dfn())])


def sigmoid(a) -> Tensor:
    a = constant(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _unary(a, out, lambda: out * (1.0 - out))


def tanh(a) -> Tensor:
    a = constant(a)
    out = np.tanh(a.data)
    return _unary(a, out, lambda: 1.0 - out * out)


def sin(a) -> Tensor:
    a = constant(a)
    return _unary(a, np.sin(a.data), lambda: np.cos(a.data))


def cos(a) -> Tensor:
    a = constant(a)
    return _unary(a, np.cos(a.data), lambda: -np.sin(a.data))


def exp(a) -> Tensor:
    a = constant(a)
    out = np.exp(a.data)
    return _unary(a, out, lambda: out)


def log(a) -> Tensor:
    a = constant(a)
    return _unary(a, np.log(a.data), lambda: 1.0 / a.data)


def sqrt(a) -> Tensor:
    a = constant(a)
    out = np.sqrt(a.data)
    return _unary(a, out, lambda: 0.5 / out)


def square(a) -> Tensor:
    a = constant(a)
    return _unary(a, a.data * a.data, lambda: 2.0 * a.data)


def abs_(a) -> Tensor:
    a = constant(a)
    return _unary(a, np.abs(a.data), lambda: np.sign(a.data))


# --- reductions ---

def sum_(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = constant(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def pull(g: Array) -> Array:
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        ge = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(ge, a.data.shape).copy()

    return _make(_np(out), [(a, pull)])


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = constant(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# --- structured primitives ---

def row_softmax(a) -> Tensor:
    """Softmax along the last axis; rows sum to 1."""
    a = constant(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def pull(g: Array) -> Array:
        inner = (g * out).sum(axis=-1, keepdims=True)
        return out * (g - inner)

    return _make(out, [(a, pull)])


def cosine_rows(a, b) -> Tensor:
    """Cosine similarity of corresponding rows; returns an (n, 1) column."""
    a, b = constant(a), constant(b)
    if a.data.shape != b.data.shape or a.ndim != 2:
        raise ShapeMismatch(f"cosine_rows expects equal rank-2 shapes, got {a.data.shape}, {b.data.shape}")
    na = np.linalg.norm(a.data, axis=1, keepdims=True)
    nb = np.linalg.norm(b.data, axis=1, keepdims=True)
    dot = (a.data * b.data).sum(axis=1, keepdims=True)
    out = dot / (na * nb)

    def pull_a(g: Array) -> Array:
        return g * (b.data / (na * nb) - out * a.data / (na * na))

    def pull_b(g: Array) -> Array:
        return g * (a.data / (na * nb) - out * b.data / (nb * nb))

    return _make(out, [(a, pull_a), (b, pull_b)])


def smooth_l1(a, b) -> Tensor:
    """Elementwise smooth L1 of (a - b): quadratic below 1, linear above."""
    a, b = constant(a), constant(b)
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"smooth_l1 expects equal shapes, got {a.data.shape}, {b.data.shape}")
    d = a.data - b.data
    ad = np.abs(d)
    out = np.where(ad < 1.0, 0.5 * d * d, ad - 0.5)
    slope = np.clip(d, -1.0, 1.0)
    return _make(out, [(a, lambda g: g * slope), (b, lambda g: -g * slope)])


def gather_rows(a, idx: Array) -> Tensor:
    """Select rows of a rank-2 tensor by a fixed integer index array."""
    a = constant(a)
    if a.ndim != 2:
        raise ShapeMismatch(f"gather_rows expects rank-2 input, got {a.data.shape}")
    idx = np.asarray(idx, dtype=np.intp)
    out = a.data[idx]

    def pull(g: Array) -> Array:
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return ga

    return _make(out, [(a, pull)])


def concat_rows(parts: Sequence["Tensor"]) -> Tensor:
    """Stack rank-2 tensors along axis 0 (widths must agree)."""
    parts = [constant(p) for p in parts]
    widths = {p.data.shape[1] for p in parts if p.ndim == 2}
    if len(widths) != 1 or any(p.ndim != 2 for p in parts):
        raise ShapeMismatch(f"concat_rows needs rank-2 parts of one width, got "
                            f"{[p.data.shape for p in parts]}")
    out = np.concatenate([p.data for p in parts], axis=0)
    bounds = np.cumsum([0] + [p.data.shape[0] for p in parts])

    pulls = []
    for k, p in enumerate(parts):
        lo, hi = int(bounds[k]), int(bounds[k + 1])
        pulls.append((p, lambda g, lo=lo, hi=hi: g[lo:hi]))
    return _make(out, pulls)


def scatter_matrix(values, value_idx: Array, rows: Array, cols: Array, shape: tuple[int, int]) -> Tensor:
    """Build a matrix with M[rows[k], cols[k]] += values[value_idx[k]].

    The index arrays are fixed integer structure (not differentiated); only
    `values` (rank-1) carries gradient.
    """
    values = constant(values)
    if values.ndim != 1:
        raise ShapeMismatch(f"scatter_matrix expects rank-1 values, got {values.data.shape}")
    out = np.zeros(shape, dtype=np.float64)
    np.add.at(out, (rows, cols), values.data[value_idx])

    def pull(g: Array) -> Array:
        gv = np.zeros(values.data.shape[0], dtype=np.float64)
        np.add.at(gv, value_idx, g[rows, cols])
        return gv

    return _make(out, [(values, pull)])


# --- verification ---

def grad_check(f: Callable[[Tensor], Tensor], x: Array, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    `f` must map a tensor to a scalar tensor and be evaluable both on tape
    leaves and on constants. Relative error is measured against
    max(1, |central difference|) per coordinate.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    x = _np(x)
    tape = Tape()
    xt = tape.leaf(x)
    out = f(xt)
    if not np.isfinite(out.data).all():
        raise NonFiniteValue("function value is not finite")
    if out.tape is None:
        analytic = np.zeros_like(x)  # output never touched the leaf
    else:
        tape.backward(out)
        g = tape.grad(xt)
        analytic = np.zeros_like(x) if g is None else g

    flat = x.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        for sgn in (1.0, -1.0):
            pert = flat.copy()
            pert[i] += sgn * eps
            val = f(constant(pert.reshape(x.shape))).data
            if not np.isfinite(val).all():
                raise NonFiniteValue(f"perturbed function value is not finite at coordinate {i}")
            numeric[i] += sgn * float(val.reshape(-1)[0])
    numeric /= 2.0 * eps
    numeric = numeric.reshape(x.shape)

    denom = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if x.size else 0.0
