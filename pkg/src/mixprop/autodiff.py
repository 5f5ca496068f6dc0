"""Dense float64 tensors with taped reverse-mode differentiation.

The primitive set is deliberately small and closed: matmul (plain and
batched), elementwise arithmetic, smooth activations, reductions,
concatenation/reshaping, row gather / contiguous segment-sum, vector norms
and softmax.  Higher-level layers compose these primitives; every primitive
has an analytic backward that is checked against central finite differences
in the test suite.

Reductions support two modes:

* fast (default) - plain numpy reductions; deterministic on a fixed
  platform, used for training.
* exact - summands are sorted into a canonical value order before
  summation, which makes every reduction independent of the order of its
  inputs.  Under this mode permuting rows of an aggregation input cannot
  change the output by even one ulp, which is what makes bitwise
  permutation-invariance checks possible.  Enabled via ``exact_reductions()``.

Tensors are immutable once created (their buffers are marked read-only);
a Tape must never be shared across concurrent builders.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericFault

_GRAD_ENABLED = True
_EXACT_REDUCTIONS = False


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def exact_reductions():
    """Route forward reductions through canonical (sorted) summation."""
    global _EXACT_REDUCTIONS
    prev = _EXACT_REDUCTIONS
    _EXACT_REDUCTIONS = True
    try:
        yield
    finally:
        _EXACT_REDUCTIONS = prev


def exact_mode_active() -> bool:
    return _EXACT_REDUCTIONS


def _reduce_sum(a: np.ndarray, axis) -> np.ndarray:
    """Sum that is order-canonical in exact mode.

    Sorting puts the summands of every output element into a canonical
    sequence, so any permutation of the input along ``axis`` yields a
    bitwise identical sum.
    """
    if _EXACT_REDUCTIONS:
        if axis is None:
            return np.add.reduce(np.sort(a, axis=None))
        return np.add.reduce(np.sort(a, axis=axis), axis=axis)
    return np.add.reduce(a, axis=axis)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericFault(f"non-finite value produced by primitive '{op}'")


class Tensor:
    """Immutable float64 array plus the backward closure that produced it."""

    __slots__ = ("data", "requires_grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "leaf")
        arr = arr.view()
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._vjp = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op!r}, grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    @property
    def T(self):
        return transpose(self, None)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor], vjp) -> Tensor:
    """Wrap an op result; records parents/vjp only when grad is live."""
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    arr = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
    arr = arr.view()
    arr.flags.writeable = False
    out.data = arr
    live = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = live
    out._parents = tuple(parents) if live else ()
    out._vjp = vjp if live else None
    out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, "add", (a, b), vjp)


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        a = _as_tensor(a)
        c = float(b)

        def vjp_scale(g):
            return (g * c,)

        return _make(a.data * c, "scale", (a,), vjp_scale)
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, "mul", (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _make(out, "div", (a, b), vjp)


# ---------------------------------------------------------------------------
# matrix products
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ContractError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    if _EXACT_REDUCTIONS:
        # BLAS' narrow-output kernels make a row's bits depend on its
        # position; the plain einsum loop does not, which permutation
        # exactness relies on
        out = np.einsum("ik,kj->ij", a.data, b.data, optimize=False)
    else:
        out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out, "matmul", (a, b), vjp)


def bmatmul(a, b) -> Tensor:
    """Batched matmul over leading dims, (..., n, k) @ (..., k, m)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 3 or b.data.ndim < 3:
        raise ContractError("bmatmul expects stacked matrices (ndim >= 3)")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, "bmatmul", (a, b), vjp)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def silu(x) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(over="ignore"):
        s = np.exp(np.negative(x.data))
        np.add(s, 1.0, out=s)
        np.divide(1.0, s, out=s)
    out = x.data * s

    def vjp(g):
        return (g * (s * (1.0 + x.data * (1.0 - s))),)

    return _make(out, "silu", (x,), vjp)


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _make(out, "tanh", (x,), vjp)


def sqrt(x, tiny: float = 1e-30) -> Tensor:
    x = _as_tensor(x)
    out = np.sqrt(x.data)

    def vjp(g):
        return (g * 0.5 / np.maximum(out, tiny),)

    return _make(out, "sqrt", (x,), vjp)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = _reduce_sum(x.data, axis)
    if keepdims and axis is not None:
        out = np.expand_dims(out, axis)
    elif keepdims and axis is None:
        out = np.reshape(out, (1,) * x.data.ndim)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(np.reshape(g, (1,) * x.data.ndim), x.shape).copy(),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, x.shape).copy(),)

    return _make(out, "sum", (x,), vjp)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    n = x.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def vecnorm(x, axis: int = -1, keepdims: bool = True, tiny: float = 1e-30) -> Tensor:
    """Euclidean norm along ``axis``; zero vectors get zero gradient."""
    x = _as_tensor(x)
    sq = np.add.reduce(x.data * x.data, axis=axis)
    out = np.sqrt(sq)
    if keepdims:
        out = np.expand_dims(out, axis)

    def vjp(g):
        denom = np.maximum(out if keepdims else np.expand_dims(out, axis), tiny)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (ge * x.data / denom,)

    return _make(out, "vecnorm", (x,), vjp)


def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stable softmax; the denominator honors exact mode."""
    x = _as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    denom = _reduce_sum(e, axis)
    out = e / np.expand_dims(denom, axis)

    def vjp(g):
        inner = np.add.reduce(g * out, axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _make(out, "softmax", (x,), vjp)


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out = np.reshape(x.data, shape)

    def vjp(g):
        return (np.reshape(g, x.shape),)

    return _make(out, "reshape", (x,), vjp)


def transpose(x, axes=None) -> Tensor:
    x = _as_tensor(x)
    out = np.transpose(x.data, axes)
    inv = None if axes is None else tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inv),)

    return _make(out, "transpose", (x,), vjp)


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, "concat", parts, vjp)


def getitem(x, index) -> Tensor:
    """Basic (slice / integer) indexing; use gather for index arrays."""
    x = _as_tensor(x)
    out = x.data[index]

    def vjp(g):
        full = np.zeros(x.shape)
        full[index] = g
        return (full,)

    return _make(out, "getitem", (x,), vjp)


# ---------------------------------------------------------------------------
# indexed gather / segment reductions (message-passing plumbing)
# ---------------------------------------------------------------------------

class GatherPlan:
    """Precomputed scatter plan so gather's backward avoids np.add.at."""

    __slots__ = ("index", "order", "starts", "targets")

    def __init__(self, index: np.ndarray):
        index = np.asarray(index, dtype=np.intp)
        self.index = index
        self.order = np.argsort(index, kind="stable")
        sorted_idx = index[self.order]
        if sorted_idx.size:
            mask = np.empty(sorted_idx.size, dtype=bool)
            mask[0] = True
            np.not_equal(sorted_idx[1:], sorted_idx[:-1], out=mask[1:])
            self.starts = np.flatnonzero(mask)
            self.targets = sorted_idx[self.starts]
        else:
            self.starts = np.zeros(0, dtype=np.intp)
            self.targets = np.zeros(0, dtype=np.intp)


def gather(x, plan) -> Tensor:
    """Select rows ``x[plan.index]`` along axis 0."""
    x = _as_tensor(x)
    if not isinstance(plan, GatherPlan):
        plan = GatherPlan(plan)
    out = x.data[plan.index]

    def vjp(g):
        full = np.zeros(x.shape)
        if plan.index.size:
            g_sorted = g[plan.order]
            full[plan.targets] = np.add.reduceat(g_sorted, plan.starts, axis=0)
        return (full,)

    return _make(out, "gather", (x,), vjp)


def _segment_reduce_fast(values: np.ndarray, starts: np.ndarray, nseg: int) -> np.ndarray:
    total = values.shape[0]
    out_shape = (nseg,) + values.shape[1:]
    if total == 0 or nseg == 0:
        return np.zeros(out_shape)
    counts = np.diff(np.append(starts, total))
    clipped = np.minimum(starts, total - 1)
    out = np.add.reduceat(values, clipped, axis=0)
    empty = counts == 0
    if empty.any():
        out[empty] = 0.0
    return out


def _segment_reduce_exact(values: np.ndarray, starts: np.ndarray, nseg: int) -> np.ndarray:
    total = values.shape[0]
    out = np.zeros((nseg,) + values.shape[1:])
    bounds = np.append(starts, total)
    for s in range(nseg):
        lo, hi = bounds[s], bounds[s + 1]
        if hi > lo:
            out[s] = np.add.reduce(np.sort(values[lo:hi], axis=0), axis=0)
    return out


def segment_sum(values, starts: np.ndarray, num_segments: int) -> Tensor:
    """Sum contiguous row segments; segment ``s`` covers rows
    ``starts[s]:starts[s+1]`` (empty segments yield zero rows)."""
    values = _as_tensor(values)
    starts = np.asarray(starts, dtype=np.intp)
    if starts.shape[0] != num_segments:
        raise ContractError("segment_sum: starts length must equal num_segments")
    if _EXACT_REDUCTIONS:
        out = _segment_reduce_exact(values.data, starts, num_segments)
    else:
        out = _segment_reduce_fast(values.data, starts, num_segments)
    counts = np.diff(np.append(starts, values.shape[0]))

    def vjp(g):
        return (np.repeat(g, counts, axis=0),)

    return _make(out, "segment_sum", (values,), vjp)


# ---------------------------------------------------------------------------
# small geometry helpers
# ---------------------------------------------------------------------------

def cross3(a, b) -> Tensor:
    """Row-wise cross product of (..., 3) stacks."""
    a, b = _as_tensor(a), _as_tensor(b)
    out = np.cross(a.data, b.data)

    def vjp(g):
        return (
            _unbroadcast(np.cross(b.data, g), a.shape),
            _unbroadcast(np.cross(g, a.data), b.shape),
        )

    return _make(out, "cross3", (a, b), vjp)


# ---------------------------------------------------------------------------
# tape and gradients
# ---------------------------------------------------------------------------

class Tape:
    """Topologically ordered record of the ops reachable from ``root``.

    The record is built once; ``gradients`` replays it in reverse, visiting
    every node exactly once.  A Tape must not be shared across threads.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

    def gradients(self) -> dict[int, np.ndarray]:
        """Map id(tensor) -> accumulated gradient, for grad-requiring nodes."""
        grads: dict[int, np.ndarray] = {
            id(self.root): np.ones(self.root.shape)
        }
        for node in reversed(self.nodes):
            g = grads.get(id(node))
            if g is None or node._vjp is None:
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if not parent.requires_grad:
                    continue
                _check_finite(pg, f"{node._op} (backward)")
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
        return grads


def forward_backward(expr: Callable[[], Tensor] | Tensor):
    """Evaluate ``expr`` and return (value, grads keyed by leaf tensor).

    Every reachable leaf with ``requires_grad`` appears in the map; leaves
    that do not require gradients are absent.
    """
    value = expr() if callable(expr) else expr
    if not isinstance(value, Tensor):
        raise ContractError("expression must produce a Tensor")
    tape = Tape(value)
    raw = tape.gradients()
    grads: dict[Tensor, Tensor] = {}
    for node in tape.nodes:
        if node._op == "leaf" and node.requires_grad and id(node) in raw:
            grads[node] = Tensor(raw[id(node)])
    return value, grads


def finite_difference_gradcheck(
    f: Callable[[list[Tensor]], Tensor],
    points: list[Tensor],
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Error per coordinate is |analytic - fd| / (|analytic| + 1e-8); the
    maximum over all coordinates of all inputs is returned.
    """
    value = f(points)
    tape = Tape(value)
    raw = tape.gradients()
    worst = 0.0
    for t in points:
        analytic = raw.get(id(t))
        if analytic is None:
            analytic = np.zeros(t.shape)
        base = np.array(t.data)
        flat = base.reshape(-1)
        fd = np.zeros_like(flat)
        for k in range(flat.size):
            for sign, slot in ((+1.0, 0), (-1.0, 1)):
                bumped = flat.copy()
                bumped[k] += sign * step
                probe = Tensor(bumped.reshape(base.shape))
                args = [probe if p is t else p for p in points]
                with no_grad():
                    val = f(args)
                if slot == 0:
                    fplus = val.item()
                else:
                    fminus = val.item()
            fd[k] = (fplus - fminus) / (2.0 * step)
        err = np.abs(analytic.reshape(-1) - fd) / (np.abs(analytic.reshape(-1)) + 1e-8)
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
