"""Reverse-mode automatic differentiation on an explicit tape.

The tape records array-valued operations in topological order; one reverse
sweep yields exact gradients of a scalar loss with respect to every leaf.
Values are ``float64`` throughout.  Nodes are created through the primitive
functions below (or the operator overloads on :class:`Var`); anything else
applied to a :class:`Var` raises, which is what keeps recorded programs
restricted to the registered primitive set.

Subgradient conventions: ``relu`` uses 0 at the kink, and order-statistic
selections (``take`` on indices computed from values) are treated as locally
constant, so the resulting gradients are exact wherever the loss is
differentiable.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import StateError

__all__ = [
    "Tape",
    "Var",
    "UnregisteredPrimitiveError",
    "record_forward",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "relu",
    "maximum",
    "select",
    "matmul",
    "affine",
    "transpose",
    "stack_gate_matrices",
    "concat_vectors",
    "col_slice",
    "col",
    "take",
    "sum_all",
    "insert_col",
    "broadcast_scalar",
]


class UnregisteredPrimitiveError(TypeError, AttributeError):
    """Raised when a recorded program reaches for an unsupported operation."""


class Node:
    __slots__ = ("value", "backprop")

    def __init__(self, value, backprop):
        self.value = value
        self.backprop = backprop


class Tape:
    """Recorded computation: a list of nodes closed under their inputs."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.loss_index: int | None = None

    def _push(self, value, backprop=None) -> "Var":
        self.nodes.append(Node(value, backprop))
        return Var(self, len(self.nodes) - 1)

    def leaf(self, value) -> "Var":
        """Register an input (parameter or constant treated as variable)."""
        return self._push(np.asarray(value, dtype=np.float64))

    def mark_loss(self, var: "Var") -> None:
        if var.tape is not self:
            raise StateError("loss belongs to a different tape")
        self.loss_index = var.index


class Var:
    """Handle to one tape node; supports the registered primitives only."""

    __slots__ = ("tape", "index")

    # Keep numpy from silently routing ufuncs around the tape.
    __array_ufunc__ = None

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return np.shape(self.value)

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getattr__(self, name):
        raise UnregisteredPrimitiveError(
            f"unregistered primitive {name!r} applied to a taped variable"
        )


def record_forward(program: Callable[[Tape], "Var"]):
    """Run ``program`` on a fresh tape and return (loss value, tape).

    The program receives the tape, registers its leaves and must return the
    scalar loss Var.  The recorded value is exactly the value an untaped
    evaluation of the same primitives would produce.
    """
    tape = Tape()
    out = program(tape)
    if not isinstance(out, Var):
        raise StateError("program must return a taped variable")
    tape.mark_loss(out)
    return out.value, tape


def backward(tape: Tape, wrt: Sequence[Var]) -> list[np.ndarray]:
    """Reverse sweep from the recorded loss; returns gradients for ``wrt``.

    Leaves without a path to the loss receive exact zeros.
    """
    if tape.loss_index is None:
        raise StateError("backward called before a forward pass was recorded")
    nodes = tape.nodes
    keep = {v.index for v in wrt}
    grads: list = [None] * len(nodes)
    loss_val = nodes[tape.loss_index].value
    if np.ndim(loss_val) != 0:
        raise StateError("loss must be scalar")
    grads[tape.loss_index] = np.float64(1.0)
    for i in range(tape.loss_index, -1, -1):
        g = grads[i]
        if g is None:
            continue
        bp = nodes[i].backprop
        if bp is not None:
            bp(g, grads)
        if i not in keep:
            grads[i] = None
    out = []
    for v in wrt:
        g = grads[v.index]
        if g is None:
            g = np.zeros_like(nodes[v.index].value)
        out.append(np.asarray(g, dtype=np.float64))
    return out


def _acc(grads, idx, shape, delta, upstream=None):
    """Accumulate ``delta`` into the gradient buffer of node ``idx``.

    A freshly allocated full-shape delta (anything that is not the upstream
    gradient itself) is adopted as the buffer on first touch, which avoids a
    zero-fill pass on the hot path.
    """
    if not shape:
        s = np.sum(delta)
        grads[idx] = s if grads[idx] is None else grads[idx] + s
        return
    cur = grads[idx]
    if cur is None:
        if (
            delta is not upstream
            and isinstance(delta, np.ndarray)
            and delta.base is None
            and delta.shape == shape
            and delta.flags.writeable
        ):
            grads[idx] = delta
        else:
            buf = np.zeros(shape)
            buf += delta
            grads[idx] = buf
    else:
        cur += delta


def _unbroadcast(g, shape):
    """Reduce an upstream gradient to the shape a broadcast operand had."""
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _is_var(x):
    return isinstance(x, Var)


def _tape_of(*args) -> Tape | None:
    for a in args:
        if _is_var(a):
            return a.tape
    return None


def _val(x):
    return x.value if _is_var(x) else np.asarray(x, dtype=np.float64)


def _binary(a, b, fwd, vjp_a, vjp_b):
    tape = _tape_of(a, b)
    va, vb = _val(a), _val(b)
    out = fwd(va, vb)
    if tape is None:
        return out
    ia = a.index if _is_var(a) else None
    ib = b.index if _is_var(b) else None
    sa, sb = np.shape(va), np.shape(vb)

    def bp(g, grads):
        if ia is not None:
            _acc(grads, ia, sa, _unbroadcast(vjp_a(g, va, vb), sa), g)
        if ib is not None:
            _acc(grads, ib, sb, _unbroadcast(vjp_b(g, va, vb), sb), g)

    return tape._push(out, bp)


def _unary(x, fwd, vjp):
    tape = _tape_of(x)
    vx = _val(x)
    out = fwd(vx)
    if tape is None:
        return out
    ix = x.index
    sx = np.shape(vx)

    def bp(g, grads):
        _acc(grads, ix, sx, vjp(g, vx, out), g)

    return tape._push(out, bp)


def add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b):
    return _binary(
        a, b, lambda x, y: x / y, lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y)
    )


def neg(x):
    return _unary(x, lambda v: -v, lambda g, v, out: -g)


def exp(x):
    return _unary(x, np.exp, lambda g, v, out: g * out)


def log(x):
    return _unary(x, np.log, lambda g, v, out: g / v)


def tanh(x):
    return _unary(x, np.tanh, lambda g, v, out: g * (1.0 - out * out))


def _sigmoid_value(v):
    return 1.0 / (1.0 + np.exp(-v))


def sigmoid(x):
    return _unary(x, _sigmoid_value, lambda g, v, out: g * out * (1.0 - out))


def relu(x):
    """max(x, 0) with subgradient 0 at the kink."""
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda g, v, out: g * (v > 0))


def maximum(a, b):
    """Elementwise max; on ties the gradient is routed to ``b``."""
    return _binary(
        a,
        b,
        np.maximum,
        lambda g, x, y: g * (x > y),
        lambda g, x, y: g * (x <= y),
    )


def select(cond, a, b):
    """Comparison-select: where(cond, a, b); ``cond`` is plain data."""
    cond = np.asarray(cond, dtype=bool)
    return _binary(
        a,
        b,
        lambda x, y: np.where(cond, x, y),
        lambda g, x, y: g * cond,
        lambda g, x, y: g * ~cond,
    )


def matmul(a, b):
    return _binary(
        a,
        b,
        lambda x, y: x @ y,
        lambda g, x, y: g @ y.T,
        lambda g, x, y: x.T @ g,
    )


def affine(terms, bias=None):
    """Fused multi-term dot: sum_k X_k @ W_k (+ bias).

    ``terms`` is a sequence of (X, W) pairs; each element may be a Var or a
    constant array.  This is the workhorse of the recurrent cells: one node
    instead of a matmul chain keeps both the node count and the cached
    intermediate arrays small.
    """
    tape = _tape_of(*(v for pair in terms for v in pair), bias)
    vals = [(_val(x), _val(w)) for x, w in terms]
    out = vals[0][0] @ vals[0][1]
    for vx, vw in vals[1:]:
        out = out + vx @ vw
    if bias is not None:
        out = out + _val(bias)
    if tape is None:
        return out
    meta = [
        (
            x.index if _is_var(x) else None,
            w.index if _is_var(w) else None,
            vx,
            vw,
        )
        for (x, w), (vx, vw) in zip(terms, vals)
    ]
    ib = bias.index if _is_var(bias) else None
    sb = np.shape(_val(bias)) if bias is not None else None

    def bp(g, grads):
        for ix, iw, vx, vw in meta:
            if ix is not None:
                _acc(grads, ix, vx.shape, g @ vw.T, g)
            if iw is not None:
                _acc(grads, iw, vw.shape, vx.T @ g, g)
        if ib is not None:
            _acc(grads, ib, sb, _unbroadcast(g, sb), g)

    return tape._push(out, bp)


def transpose(x):
    return _unary(x, lambda v: v.T.copy(), lambda g, v, out: g.T)


def stack_gate_matrices(mats):
    """Concatenate per-gate (d_out, d_in) matrices into one (d_in, n*d_out).

    The stacked layout is what row-major batched inputs multiply against:
    ``z[:, k*d:(k+1)*d] == x @ mats[k].T``.
    """
    tape = _tape_of(*mats)
    vals = [_val(m) for m in mats]
    out = np.concatenate([v.T for v in vals], axis=1)
    if tape is None:
        return out
    idx = [m.index if _is_var(m) else None for m in mats]
    widths = [v.shape[0] for v in vals]
    shapes = [v.shape for v in vals]

    def bp(g, grads):
        lo = 0
        for i, w, s in zip(idx, widths, shapes):
            if i is not None:
                _acc(grads, i, s, g[:, lo : lo + w].T, g)
            lo += w

    return tape._push(out, bp)


def concat_vectors(vecs):
    """Concatenate 1-d arrays (gate biases) into one vector."""
    tape = _tape_of(*vecs)
    vals = [_val(v) for v in vecs]
    out = np.concatenate(vals)
    if tape is None:
        return out
    idx = [v.index if _is_var(v) else None for v in vecs]
    widths = [v.shape[0] for v in vals]

    def bp(g, grads):
        lo = 0
        for i, w in zip(idx, widths):
            if i is not None:
                _acc(grads, i, (w,), g[lo : lo + w], g)
            lo += w

    return tape._push(out, bp)


def col_slice(x, start, stop):
    """View of columns [start, stop) of a 2-d array."""
    tape = _tape_of(x)
    vx = _val(x)
    out = vx[:, start:stop]
    if tape is None:
        return out
    ix = x.index
    sx = vx.shape

    def bp(g, grads):
        if grads[ix] is None:
            grads[ix] = np.zeros(sx)
        grads[ix][:, start:stop] += g

    return tape._push(out, bp)


def col(x, k):
    """1-d view of column ``k`` of a 2-d array."""
    tape = _tape_of(x)
    vx = _val(x)
    out = vx[:, k]
    if tape is None:
        return out
    ix = x.index
    sx = vx.shape

    def bp(g, grads):
        if grads[ix] is None:
            grads[ix] = np.zeros(sx)
        grads[ix][:, k] += g

    return tape._push(out, bp)


def take(x, index):
    """Scalar element x[index]; the index is data-driven but fixed in reverse."""
    tape = _tape_of(x)
    vx = _val(x)
    out = vx[index]
    if tape is None:
        return out
    ix = x.index
    sx = vx.shape

    def bp(g, grads):
        if grads[ix] is None:
            grads[ix] = np.zeros(sx)
        grads[ix][index] += g

    return tape._push(out, bp)


def sum_all(x):
    return _unary(x, np.sum, lambda g, v, out: np.broadcast_to(g, v.shape))


def insert_col(base, v, col):
    """Copy of constant matrix ``base`` with column ``col`` replaced by ``v``.

    Used to build feature matrices: the precomputed constant features plus
    the differentiable portfolio-value column.
    """
    tape = _tape_of(v)
    vb = np.asarray(base, dtype=np.float64)
    vv = _val(v)
    out = vb.copy()
    out[:, col] = vv
    if tape is None:
        return out
    iv = v.index
    sv = vv.shape

    def bp(g, grads):
        _acc(grads, iv, sv, g[:, col], g)

    return tape._push(out, bp)


def broadcast_scalar(x, n):
    """Scalar variable repeated to a length-n vector (gradient sums back)."""
    tape = _tape_of(x)
    vx = _val(x)
    out = np.full(n, float(vx))
    if tape is None:
        return out
    ix = x.index

    def bp(g, grads):
        _acc(grads, ix, (), np.sum(g))

    return tape._push(out, bp)
