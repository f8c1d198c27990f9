"""Comparison methods: FedAvg, FedProx, and subspace-FedAvg.

All three train one shared model on labeled clients only, reusing the
protocol's cohort sampling, aggregation, and server update on their own
flat parameter vector. The subspace variant optimizes coordinates through
the same frozen basis the hypernetwork writes into, which isolates the
value of per-client generation from the value of the subspace itself.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from types import SimpleNamespace

import numpy as np

from . import fedruntime, nn, rngs, subspace
from . import tensor as T
from .errors import ConfigError, ContractError, NumericError

log = logging.getLogger(__name__)

METHODS = ("flowdup", "fedavg", "fedprox", "ldfedavg")


@dataclass
class GlobalModelState:
    """A single shared model: full parameter vector, or coords plus basis."""

    mode: str  # "full" | "subspace"
    theta: np.ndarray | None = None
    coords: np.ndarray | None = None
    basis: subspace.ExpansionBasis | None = None

    def __post_init__(self):
        if self.mode == "full":
            if self.theta is None or self.coords is not None:
                raise ContractError("full mode carries theta only")
        elif self.mode == "subspace":
            if self.coords is None or self.basis is None or self.theta is not None:
                raise ContractError("subspace mode carries coords and basis")
        else:
            raise ContractError(f"unknown mode {self.mode!r}")

    def layers(self, layer_shapes: nn.LayerShapes) -> list[tuple[np.ndarray, np.ndarray]]:
        if self.mode == "full":
            flat = T.constant(self.theta)
        else:
            flat = subspace.expand(self.basis, self.coords)
        return [(w.data, b.data) for w, b in subspace.unflatten(flat, layer_shapes)]


def _require_labeled(dataset) -> None:
    if not dataset.labeled:
        raise ContractError(f"client {dataset.id} is unlabeled; baselines train on labeled clients only")


def _batch_loss(theta_leaf, shapes, x, y, reduction):
    layers = subspace.unflatten(theta_leaf, shapes)
    logits = nn.mlp_forward(layers, x)
    return T.softmax_cross_entropy(logits, y, reduction)


def _local_pass(dataset, flat0, cfg, rng, loss_of):
    """Shared local loop: epochs of batches, one optimizer step per batch.

    loss_of(leaf, x, y) builds the traced batch objective; returns the final
    parameters and the mean objective value.
    """
    flat = flat0.copy()
    opt = fedruntime.make_optimizer(cfg.client_optimizer, cfg.local_lr)
    values = []
    for _ in range(cfg.local_epochs):
        perm = rng.permutation(dataset.m)
        for start in range(0, dataset.m, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            tape = T.Tape()
            leaf = T.leaf(tape, flat)
            loss = loss_of(leaf, dataset.X[idx], dataset.Y[idx])
            grad = T.grad_wrt(T.backward(tape, loss), leaf)
            flat = opt.step(flat, grad)
            values.append(float(loss.data))
    return flat, float(np.mean(values))


def fedavg_client_update(dataset, theta: np.ndarray, cfg, rng, shapes: nn.LayerShapes) -> np.ndarray:
    _require_labeled(dataset)
    final, _ = _local_pass(
        dataset, theta, cfg, rng, lambda leaf, x, y: _batch_loss(leaf, shapes, x, y, cfg.reduction)
    )
    return final - theta


def fedprox_client_update(dataset, theta_global: np.ndarray, cfg, rng, shapes: nn.LayerShapes, mu: float) -> np.ndarray:
    _require_labeled(dataset)
    if mu < 0:
        raise ConfigError(f"fedprox mu must be nonnegative, got {mu}")
    anchor = theta_global.copy()

    def loss_of(leaf, x, y):
        ce = _batch_loss(leaf, shapes, x, y, cfg.reduction)
        prox = T.mul(T.sq_l2(T.sub(leaf, anchor)), 0.5 * mu)
        return T.add(ce, prox)

    final, _ = _local_pass(dataset, theta_global, cfg, rng, loss_of)
    return final - theta_global


def ldfedavg_client_update(dataset, coords: np.ndarray, basis: subspace.ExpansionBasis, cfg, rng) -> np.ndarray:
    _require_labeled(dataset)

    def loss_of(leaf, x, y):
        theta = subspace.expand(basis, leaf)
        return _batch_loss(theta, basis.layer_shapes, x, y, cfg.reduction)

    final, _ = _local_pass(dataset, coords, cfg, rng, loss_of)
    return final - coords


def train_baseline(method: str, federation, cfg: fedruntime.TrainConfig):
    """Rounds of the shared protocol over labeled clients for one baseline."""
    if method not in ("fedavg", "fedprox", "ldfedavg"):
        raise ConfigError(f"unknown baseline {method!r}")
    cfg.validate()
    labeled = [c for c in federation.clients if c.labeled]
    if not labeled:
        raise ConfigError("baseline training needs at least one labeled client")
    in_dim = labeled[0].X.shape[1]
    shapes = fedruntime.model_shapes(cfg, in_dim)
    basis = fedruntime.build_train_basis(cfg, in_dim)
    cohort_size = min(cfg.cohort_size, len(labeled))
    if cohort_size < cfg.cohort_size:
        log.warning("baseline cohort clamped to the %d labeled clients", cohort_size)
    bcfg = replace(cfg, cohort_size=cohort_size, labeled_fraction=1.0)
    view = SimpleNamespace(clients=labeled)
    by_id = {c.id: c for c in labeled}

    if method == "ldfedavg":
        flat = np.zeros(cfg.k)  # expand(0) is exactly the shared origin
    else:
        flat = basis.origin.copy()
    server_opt = fedruntime.make_optimizer(cfg.server_optimizer, cfg.global_lr)
    logs: list[fedruntime.RoundLog] = []
    for rnd in range(1, cfg.rounds + 1):
        t0 = time.perf_counter()
        cohort = fedruntime.sample_cohort(view, bcfg, rngs.stream(cfg.seed, rngs.COHORT, rnd))
        updates, objs = [], []
        for cid in cohort:
            rng = rngs.stream(cfg.seed, rngs.CLIENT, rnd, cid)
            ds = by_id[cid]
            if method == "fedavg":
                delta = fedavg_client_update(ds, flat, cfg, rng, shapes)
            elif method == "fedprox":
                delta = fedprox_client_update(ds, flat, cfg, rng, shapes, cfg.fedprox_mu)
            else:
                delta = ldfedavg_client_update(ds, flat, basis, cfg, rng)
            updates.append(delta)
            objs.append(_baseline_objective(method, ds, flat, basis, shapes, cfg))
        delta = fedruntime.aggregate(updates)
        if not np.all(np.isfinite(delta)):
            raise NumericError(f"non-finite aggregate update at round {rnd}")
        flat = fedruntime._apply_server_update(flat, delta, cfg, server_opt)
        logs.append(
            fedruntime.RoundLog(
                round=rnd,
                mean_objective=float(np.mean(objs)),
                mean_reg=0.0,
                cohort_ids=cohort,
                n_labeled_in_cohort=len(cohort),
                wall_ms=(time.perf_counter() - t0) * 1e3,
                param_norm=float(np.linalg.norm(flat)),
            )
        )
    if method == "ldfedavg":
        return GlobalModelState("subspace", coords=flat, basis=basis), logs
    return GlobalModelState("full", theta=flat), logs


def _baseline_objective(method, ds, flat, basis, shapes, cfg) -> float:
    """Round-start loss on the client's full local data, for the round log."""
    if method == "ldfedavg":
        theta = subspace.expand(basis, flat)
    else:
        theta = T.constant(flat)
    layers = subspace.unflatten(theta, shapes)
    logits = nn.mlp_forward(layers, ds.X)
    return float(T.softmax_cross_entropy(logits, ds.Y, cfg.reduction).data)
