"""Reverse-mode autodiff over dense float64 numpy arrays.

A Tape records every differentiable operation of one objective evaluation as
an append-only list of nodes; node ids are list positions, so construction
order is already topological. backward() walks ids in strictly decreasing
order once, accumulating gradients, and the tape is dropped afterwards by
letting it go out of scope.

Only the operations needed for small MLPs are provided. Tensors are treated
as immutable once created; nothing in this module writes to .data.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

Array = np.ndarray
BackwardFn = Callable[[Array], Sequence[tuple[int, Array]]]


class Tape:
    """Append-only op record for one objective evaluation."""

    __slots__ = ("input_ids", "backward_fns")

    def __init__(self) -> None:
        self.input_ids: list[tuple[int, ...]] = []
        self.backward_fns: list[BackwardFn | None] = []

    def __len__(self) -> int:
        return len(self.input_ids)

    def append(self, input_ids: tuple[int, ...], backward_fn: BackwardFn | None) -> int:
        self.input_ids.append(input_ids)
        self.backward_fns.append(backward_fn)
        return len(self.input_ids) - 1


class Tensor:
    """A float64 array, optionally attached to a tape node.

    node_id is None for constants; constants never receive gradients and ops
    on constants alone stay off the tape entirely.
    """

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape: Tape | None = None, node_id: int | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        tag = "const" if self.node_id is None else f"node {self.node_id}"
        return f"Tensor({tag}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def leaf(tape: Tape, data) -> Tensor:
    """Create a tracked leaf on the tape. Gradients accumulate at leaves."""
    nid = tape.append((), None)
    return Tensor(data, tape, nid)


def constant(data) -> Tensor:
    return Tensor(data)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _shared_tape(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ContractError("operands recorded on different tapes")
    return tape


def _record(tape: Tape | None, out: Array, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    if tape is None or all(t.node_id is None for t in inputs):
        return Tensor(out)
    nid = tape.append(tuple(t.node_id for t in inputs if t.node_id is not None), backward_fn)
    return Tensor(out, tape, nid)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum gradient g down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data
    aid, bid = a.node_id, b.node_id

    def bwd(g: Array):
        pairs = []
        if aid is not None:
            pairs.append((aid, g @ bd.T))
        if bid is not None:
            pairs.append((bid, ad.T @ g))
        return pairs

    return _record(_shared_tape(a, b), out, (a, b), bwd)


def matvec(a, x) -> Tensor:
    """Matrix times 1-D vector; the workhorse behind subspace expansion."""
    a, x = _lift(a), _lift(x)
    if a.data.ndim != 2 or x.data.ndim != 1 or a.data.shape[1] != x.data.shape[0]:
        raise ShapeError(f"matvec: incompatible shapes {a.data.shape} x {x.data.shape}")
    out = a.data @ x.data
    ad, xd = a.data, x.data
    aid, xid = a.node_id, x.node_id

    def bwd(g: Array):
        pairs = []
        if aid is not None:
            pairs.append((aid, np.outer(g, xd)))
        if xid is not None:
            pairs.append((xid, ad.T @ g))
        return pairs

    return _record(_shared_tape(a, x), out, (a, x), bwd)


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data + b.data
    ashape, bshape = a.data.shape, b.data.shape
    aid, bid = a.node_id, b.node_id

    def bwd(g: Array):
        pairs = []
        if aid is not None:
            pairs.append((aid, _unbroadcast(g, ashape)))
        if bid is not None:
            pairs.append((bid, _unbroadcast(g, bshape)))
        return pairs

    return _record(_shared_tape(a, b), out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data - b.data
    ashape, bshape = a.data.shape, b.data.shape
    aid, bid = a.node_id, b.node_id

    def bwd(g: Array):
        pairs = []
        if aid is not None:
            pairs.append((aid, _unbroadcast(g, ashape)))
        if bid is not None:
            pairs.append((bid, _unbroadcast(-g, bshape)))
        return pairs

    return _record(_shared_tape(a, b), out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data * b.data
    ad, bd = a.data, b.data
    aid, bid = a.node_id, b.node_id

    def bwd(g: Array):
        pairs = []
        if aid is not None:
            pairs.append((aid, _unbroadcast(g * bd, ad.shape)))
        if bid is not None:
            pairs.append((bid, _unbroadcast(g * ad, bd.shape)))
        return pairs

    return _record(_shared_tape(a, b), out, (a, b), bwd)


def relu(a) -> Tensor:
    a = _lift(a)
    mask = a.data > 0.0  # subgradient at exactly 0 is 0
    out = np.where(mask, a.data, 0.0)
    aid = a.node_id

    def bwd(g: Array):
        return [(aid, g * mask)] if aid is not None else []

    return _record(a.tape, out, (a,), bwd)


def mean_rows(a) -> Tensor:
    """Column-wise mean of a matrix: (m, e) -> (e,)."""
    a = _lift(a)
    if a.data.ndim != 2:
        raise ShapeError(f"mean_rows: expected a matrix, got shape {a.data.shape}")
    m = a.data.shape[0]
    if m == 0:
        raise ShapeError("mean_rows: empty matrix")
    out = a.data.mean(axis=0)
    aid = a.node_id

    def bwd(g: Array):
        if aid is None:
            return []
        return [(aid, np.broadcast_to(g / m, (m, g.shape[0])))]

    return _record(a.tape, out, (a,), bwd)


def softmax_cross_entropy(logits, labels, reduction: str = "mean") -> Tensor:
    """Cross entropy of softmax(logits) against integer labels.

    Stabilized by row-max subtraction. reduction "mean" averages over the
    batch; "sum" adds the per-row losses.
    """
    logits = _lift(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be (batch, classes), got {logits.data.shape}")
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != logits.data.shape[0]:
        raise ShapeError("softmax_cross_entropy: labels must be one per logit row")
    b, c = logits.data.shape
    if y.size and (y.min() < 0 or y.max() >= c):
        raise ShapeError(f"softmax_cross_entropy: label out of range for {c} classes")
    if reduction not in ("mean", "sum"):
        raise ContractError(f"unknown reduction {reduction!r}")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    lse = np.log(ez.sum(axis=1))
    per_row = lse - z[np.arange(b), y]
    out = per_row.sum() if reduction == "sum" else per_row.mean()
    lid = logits.node_id
    probs = ez / ez.sum(axis=1, keepdims=True)

    def bwd(g: Array):
        if lid is None:
            return []
        dz = probs.copy()
        dz[np.arange(b), y] -= 1.0
        if reduction == "mean":
            dz /= b
        return [(lid, dz * g)]

    return _record(logits.tape, np.asarray(out), (logits,), bwd)


def sq_l2(a) -> Tensor:
    """Sum of squared entries, any shape, scalar output."""
    a = _lift(a)
    out = np.asarray((a.data * a.data).sum())
    ad = a.data
    aid = a.node_id

    def bwd(g: Array):
        return [(aid, 2.0 * ad * g)] if aid is not None else []

    return _record(a.tape, out, (a,), bwd)


def slice1d(a, start: int, stop: int) -> Tensor:
    a = _lift(a)
    if a.data.ndim != 1:
        raise ShapeError(f"slice1d: expected a vector, got shape {a.data.shape}")
    if not (0 <= start <= stop <= a.data.shape[0]):
        raise ShapeError(f"slice1d: range [{start}, {stop}) outside length {a.data.shape[0]}")
    out = a.data[start:stop]
    n = a.data.shape[0]
    aid = a.node_id

    def bwd(g: Array):
        if aid is None:
            return []
        full = np.zeros(n)
        full[start:stop] = g
        return [(aid, full)]

    return _record(a.tape, out, (a,), bwd)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _lift(a)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: cannot view {a.data.shape} as {shape}")
    out = a.data.reshape(shape)
    orig = a.data.shape
    aid = a.node_id

    def bwd(g: Array):
        return [(aid, g.reshape(orig))] if aid is not None else []

    return _record(a.tape, out, (a,), bwd)


def backward(tape: Tape, root: Tensor) -> list[Array | None]:
    """Accumulate gradients of a scalar root; returns one slot per tape node.

    Nodes are visited in strictly decreasing id order exactly once, which is
    a valid reverse topological order because ops only consume earlier ids.
    """
    if root.tape is not tape or root.node_id is None:
        raise ContractError("backward: root is not recorded on this tape")
    if root.data.size != 1:
        raise ContractError(f"backward: root must be scalar, got shape {root.shape}")
    grads: list[Array | None] = [None] * len(tape)
    grads[root.node_id] = np.ones_like(root.data)
    fns = tape.backward_fns
    for nid in range(root.node_id, -1, -1):
        g = grads[nid]
        if g is None or fns[nid] is None:
            continue
        for iid, contrib in fns[nid](g):
            prev = grads[iid]
            grads[iid] = contrib if prev is None else prev + contrib
    return grads


def grad_wrt(grads: list[Array | None], t: Tensor) -> Array:
    """Gradient for a tracked tensor, zeros if it never received one."""
    if t.node_id is None:
        raise ContractError("grad_wrt: tensor is a constant")
    g = grads[t.node_id]
    return np.zeros_like(t.data) if g is None else np.asarray(g).reshape(t.data.shape)


def finite_diff_grad(fn: Callable[[Tensor], Tensor | float], at, h: float = 1e-5) -> Tensor:
    """Central-difference gradient estimate of a scalar function.

    Test oracle only: O(2 * size) evaluations of fn, never used in training.
    """
    x0 = np.array(at.data if isinstance(at, Tensor) else at, dtype=np.float64)
    flat = x0.ravel()
    est = np.zeros_like(flat)

    def call(values: Array) -> float:
        r = fn(Tensor(values.reshape(x0.shape)))
        v = r.data if isinstance(r, Tensor) else np.asarray(r)
        if v.size != 1:
            raise ContractError("finite_diff_grad: fn must return a scalar")
        return float(v)

    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        hi = call(bumped)
        bumped[i] = flat[i] - h
        lo = call(bumped)
        est[i] = (hi - lo) / (2.0 * h)
    return Tensor(est.reshape(x0.shape))
