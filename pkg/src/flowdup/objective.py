"""Per-batch training objective.

Each batch is split into two halves: the generation half feeds the
hypernetwork (no labels needed), the evaluation half scores the generated
client model when labels exist. Unlabeled clients contribute only the
coordinate regularizer, which pulls every client's generated coords toward
a shared learnable center.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import hypernet, nn, subspace
from . import tensor as T
from .errors import ContractError, DataError, ShapeError


@dataclass
class LearnableState:
    """Everything the federation trains: hypernetwork, reg center, strength."""

    hyper: hypernet.HyperNetParams
    reg: np.ndarray  # (k,), the learnable center the coords are pulled toward
    lam: float

    def __post_init__(self):
        if self.lam < 0:
            raise ShapeError(f"lambda must be nonnegative, got {self.lam}")

    @property
    def k(self) -> int:
        return self.hyper.k

    def flatten(self) -> np.ndarray:
        reg = self.reg.data if isinstance(self.reg, T.Tensor) else np.asarray(self.reg)
        return np.concatenate([self.hyper.flatten(), reg.ravel()])

    def with_flat(self, flat: np.ndarray) -> "LearnableState":
        n_hyper = self.hyper.flatten().size
        if flat.size != n_hyper + self.k:
            raise ShapeError(f"with_flat: vector length {flat.size}, expected {n_hyper + self.k}")
        return replace(self, hyper=self.hyper.with_flat(flat[:n_hyper]), reg=flat[n_hyper:].copy())


@dataclass
class SplitBatch:
    gen_half: np.ndarray  # (floor(b/2), in)
    eval_half: np.ndarray  # (ceil(b/2), in)
    eval_labels: np.ndarray | None  # absent on unlabeled clients


def split_batch(batch_x: np.ndarray, batch_y, rng: np.random.Generator) -> SplitBatch:
    """Random partition at floor(b/2); the odd row goes to the eval half."""
    x = np.asarray(batch_x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"split_batch: expected (rows, features), got shape {x.shape}")
    b = x.shape[0]
    if b < 2:
        raise DataError(f"split_batch: need at least 2 rows to form both halves, got {b}")
    perm = rng.permutation(b)
    cut = b // 2
    gen, ev = perm[:cut], perm[cut:]
    labels = None
    if batch_y is not None:
        y = np.asarray(batch_y)
        if y.shape != (b,):
            raise ShapeError("split_batch: labels must be one per row")
        labels = y[ev]
    return SplitBatch(x[gen], x[ev], labels)


def trace_state(state: LearnableState, tape: T.Tape, learnable_reg: bool = True):
    """Lift the state onto a tape; returns (traced state, leaves in flat order).

    With learnable_reg off the center is pinned to zero and excluded from the
    leaves, so its gradient slice stays zero and it never moves.
    """
    leaves: list[T.Tensor] = []

    def lift(layers):
        out = []
        for w, b in layers:
            wt, bt = T.leaf(tape, w), T.leaf(tape, b)
            leaves.append(wt)
            leaves.append(bt)
            out.append((wt, bt))
        return out

    hyper = replace(state.hyper, encoder=lift(state.hyper.encoder), head=lift(state.hyper.head))
    if learnable_reg:
        reg = T.leaf(tape, state.reg)
        leaves.append(reg)
    else:
        reg = T.constant(np.zeros(state.k))
    return replace(state, hyper=hyper, reg=reg), leaves


def _coords(state: LearnableState, split: SplitBatch) -> T.Tensor:
    return hypernet.hyper_forward(state.hyper, split.gen_half)


def _loss_from_coords(coords, basis, split, f_shapes, reduction):
    theta = subspace.expand(basis, coords)
    layers = subspace.unflatten(theta, f_shapes)
    logits = nn.mlp_forward(layers, split.eval_half)
    return T.softmax_cross_entropy(logits, split.eval_labels, reduction)


def labeled_loss(state, basis, split: SplitBatch, f_shapes, reduction: str = "mean") -> T.Tensor:
    """Cross entropy of the generated model on the eval half; exact 0 unlabeled."""
    if split.eval_labels is None:
        return T.constant(0.0)
    if len(split.eval_labels) != split.eval_half.shape[0]:
        raise ShapeError("labeled_loss: label count does not match eval half")
    return _loss_from_coords(_coords(state, split), basis, split, f_shapes, reduction)


def regularizer(state, split: SplitBatch) -> T.Tensor:
    """Squared distance between generated coords and the learnable center."""
    reg = state.reg if isinstance(state.reg, T.Tensor) else T.constant(np.asarray(state.reg))
    return T.sq_l2(T.sub(_coords(state, split), reg))


def total_objective(
    state: LearnableState,
    basis: subspace.ExpansionBasis,
    split: SplitBatch,
    f_shapes: nn.LayerShapes,
    reduction: str = "mean",
    learnable_reg: bool = True,
):
    """Value and flat gradient of loss + lambda * regularizer for one batch.

    Returns (total Tensor, gradient over the flat state, loss value, reg value).
    The coords are computed once and shared by both terms, matching their
    common dependence on the generation half.
    """
    tape = T.Tape()
    traced, leaves = trace_state(state, tape, learnable_reg)
    coords = _coords(traced, split)
    reg_term = T.sq_l2(T.sub(coords, traced.reg))
    if split.eval_labels is not None:
        loss_term = _loss_from_coords(coords, basis, split, f_shapes, reduction)
    else:
        loss_term = T.constant(0.0)
    total = T.add(loss_term, T.mul(reg_term, state.lam))
    if total.node_id is None:
        raise ContractError("total_objective: objective is constant in the state")
    grads = T.backward(tape, total)
    flat_parts = [T.grad_wrt(grads, leaf).ravel() for leaf in leaves]
    if not learnable_reg:
        flat_parts.append(np.zeros(state.k))
    flat_grad = np.concatenate(flat_parts)
    return total, flat_grad, float(loss_term.data), float(reg_term.data)
