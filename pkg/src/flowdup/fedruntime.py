"""Federated protocol: cohort sampling, local updates, aggregation, generation.

The server owns the only persistent state, a flat parameter vector. One
round samples a cohort with a fixed labeled fraction, runs every cohort
client's local epochs on its own copy, averages the resulting deltas in
ascending client-id order, and applies one server optimizer step treating
the negated mean delta as a pseudo-gradient. Clients keep nothing between
rounds, and the only values crossing the client/server boundary are the
flat state down and a flat delta (plus scalar diagnostics) up.
"""

from __future__ import annotations

import csv
import logging
import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import hypernet, nn, objective, rngs, subspace
from .errors import ConfigError, ContractError, DataError, NumericError, ShapeError

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"FLWD1"


@dataclass
class ClientDataset:
    id: int
    X: np.ndarray  # (m_i, in)
    Y: np.ndarray | None
    labeled: bool
    row_split: list[str] | None = None  # optional per-row train/val/test tags

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[0] < 2:
            raise DataError(f"client {self.id}: need at least 2 feature rows, got shape {self.X.shape}")
        if self.labeled != (self.Y is not None):
            raise DataError(f"client {self.id}: labeled flag must match label presence")
        if self.Y is not None:
            self.Y = np.asarray(self.Y)
            if self.Y.shape != (self.X.shape[0],):
                raise DataError(f"client {self.id}: need one label per row")
        if self.row_split is not None and len(self.row_split) != self.X.shape[0]:
            raise DataError(f"client {self.id}: need one split tag per row")

    @property
    def m(self) -> int:
        return self.X.shape[0]


@dataclass
class TrainConfig:
    """Everything one training run depends on besides the federation itself."""

    rounds: int
    cohort_size: int
    k: int
    n_classes: int
    labeled_fraction: float = 0.9
    local_epochs: int = 1
    batch_size: int = 50
    local_lr: float = 0.01
    global_lr: float = 1.0
    lam: float = 0.01
    seed: int = 0
    client_optimizer: str = "sgd"
    server_optimizer: str = "sgd"
    weight_decay: float = 0.0
    use_unlabeled_clients: bool = True
    learnable_reg: bool = True
    f_hidden: tuple[int, ...] = (32,)
    e_dim: int = 32
    encoder_hidden: tuple[int, ...] = (64, 64)
    head_hidden: tuple[int, ...] = (64,)
    encoder_output_relu: bool = False
    reduction: str = "mean"
    column_normalized: bool = True
    fedprox_mu: float = 1.0

    def validate(self) -> None:
        checks = [
            (self.rounds >= 1, "rounds must be >= 1"),
            (self.cohort_size >= 1, "cohort_size must be >= 1"),
            (self.batch_size >= 2, "batch_size must be >= 2"),
            (self.local_epochs >= 1, "local_epochs must be >= 1"),
            (self.local_lr > 0, "local_lr must be positive"),
            (self.global_lr > 0, "global_lr must be positive"),
            (0.0 <= self.labeled_fraction <= 1.0, "labeled_fraction must be in [0, 1]"),
            (self.lam >= 0, "lambda must be nonnegative"),
            (self.k >= 1, "k must be >= 1"),
            (self.n_classes >= 2, "n_classes must be >= 2"),
            (self.e_dim >= 1, "e_dim must be >= 1"),
            (self.weight_decay >= 0, "weight_decay must be nonnegative"),
            (self.fedprox_mu >= 0, "fedprox_mu must be nonnegative"),
            (self.client_optimizer in ("sgd", "adam"), f"unknown client optimizer {self.client_optimizer!r}"),
            (self.server_optimizer in ("sgd", "adam"), f"unknown server optimizer {self.server_optimizer!r}"),
            (self.reduction in ("mean", "sum"), f"unknown reduction {self.reduction!r}"),
        ]
        bad = [msg for ok, msg in checks if not ok]
        if bad:
            raise ConfigError("; ".join(bad))


@dataclass
class RoundLog:
    round: int
    mean_objective: float
    mean_reg: float
    cohort_ids: list[int]
    n_labeled_in_cohort: int
    wall_ms: float
    param_norm: float


class SgdOpt:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        return x - self.lr * g


class AdamOpt:
    """Standard bias-corrected Adam; one instance per parameter vector."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None

    def step(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m, self.v = np.zeros_like(x), np.zeros_like(x)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        mhat = self.m / (1.0 - self.beta1**self.t)
        vhat = self.v / (1.0 - self.beta2**self.t)
        return x - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(kind: str, lr: float):
    if kind == "sgd":
        return SgdOpt(lr)
    if kind == "adam":
        return AdamOpt(lr)
    raise ConfigError(f"unknown optimizer {kind!r}")


def labeled_count(cfg: TrainConfig) -> int:
    """ceil(labeled_fraction * cohort_size), nudged against float fuzz."""
    alpha = cfg.labeled_fraction if cfg.use_unlabeled_clients else 1.0
    return min(cfg.cohort_size, math.ceil(alpha * cfg.cohort_size - 1e-9))


def sample_cohort(federation, cfg: TrainConfig, rng: np.random.Generator) -> list[int]:
    """Cohort ids, ascending: the labeled quota plus unlabeled remainder.

    If the federation lacks enough unlabeled clients the shortfall is filled
    with labeled ones (logged); lacking labeled clients is a config error.
    """
    labeled_ids = sorted(c.id for c in federation.clients if c.labeled)
    unlabeled_ids = sorted(c.id for c in federation.clients if not c.labeled)
    n_lab = labeled_count(cfg)
    n_unlab = cfg.cohort_size - n_lab
    if n_unlab > len(unlabeled_ids):
        shortfall = n_unlab - len(unlabeled_ids)
        log.warning("cohort wants %d unlabeled clients but only %d exist; filling with labeled", n_unlab, len(unlabeled_ids))
        n_unlab = len(unlabeled_ids)
        n_lab += shortfall
    if n_lab > len(labeled_ids):
        raise ConfigError(f"cohort needs {n_lab} labeled clients, federation has {len(labeled_ids)}")
    picked = list(rng.choice(labeled_ids, size=n_lab, replace=False))
    if n_unlab:
        picked += list(rng.choice(unlabeled_ids, size=n_unlab, replace=False))
    return sorted(int(i) for i in picked)


def _batches(m: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(m)
    for start in range(0, m, batch_size):
        idx = perm[start : start + batch_size]
        if idx.size >= 2:  # a shorter tail cannot be split into two halves
            yield idx


def _client_round(dataset: ClientDataset, state: objective.LearnableState, basis, cfg: TrainConfig, rng):
    """Local epochs on a copy of the state; returns (delta, mean obj, mean reg)."""
    flat0 = state.flatten()
    flat = flat0.copy()
    opt = make_optimizer(cfg.client_optimizer, cfg.local_lr)
    objs: list[float] = []
    regs: list[float] = []
    for _ in range(cfg.local_epochs):
        for idx in _batches(dataset.m, cfg.batch_size, rng):
            y = dataset.Y[idx] if dataset.labeled else None
            split = objective.split_batch(dataset.X[idx], y, rng)
            local = state.with_flat(flat)
            total, grad, _, reg_val = objective.total_objective(
                local, basis, split, basis.layer_shapes, cfg.reduction, cfg.learnable_reg
            )
            flat = opt.step(flat, grad)
            objs.append(float(total.data))
            regs.append(reg_val)
    if not objs:
        raise DataError(f"client {dataset.id}: no usable batch of size >= 2")
    return flat - flat0, float(np.mean(objs)), float(np.mean(regs))


def client_update(dataset, state, basis, cfg, client_rng) -> np.ndarray:
    return _client_round(dataset, state, basis, cfg, client_rng)[0]


def aggregate(updates: list[np.ndarray]) -> np.ndarray:
    """Arithmetic mean in list order; callers pass ascending client-id order."""
    if not updates:
        raise ContractError("aggregate: empty update list")
    n = updates[0].shape
    if any(u.shape != n for u in updates):
        raise ContractError("aggregate: update length mismatch")
    total = np.zeros_like(updates[0])
    for u in updates:
        total += u
    return total / len(updates)


def _apply_server_update(flat: np.ndarray, delta: np.ndarray, cfg: TrainConfig, opt) -> np.ndarray:
    if delta.shape != flat.shape:
        raise ContractError(f"server update length {delta.shape} vs state {flat.shape}")
    pseudo_grad = -delta
    if isinstance(opt, AdamOpt):
        new = opt.step(flat, pseudo_grad)
    else:
        new = flat + cfg.global_lr * delta
    if cfg.weight_decay:
        new = new - cfg.global_lr * cfg.weight_decay * flat  # decoupled decay
    return new


def server_step(state: objective.LearnableState, delta: np.ndarray, cfg: TrainConfig, opt=None) -> objective.LearnableState:
    return state.with_flat(_apply_server_update(state.flatten(), delta, cfg, opt))


def model_shapes(cfg: TrainConfig, in_dim: int) -> nn.LayerShapes:
    return nn.mlp_shapes(in_dim, cfg.f_hidden, cfg.n_classes)


def build_train_basis(cfg: TrainConfig, in_dim: int) -> subspace.ExpansionBasis:
    shapes = model_shapes(cfg, in_dim)
    return subspace.build_basis(nn.param_count(shapes), cfg.k, cfg.seed, shapes, cfg.column_normalized)


def init_state(cfg: TrainConfig, in_dim: int) -> objective.LearnableState:
    hyper = hypernet.init_hypernet(
        in_dim,
        cfg.e_dim,
        cfg.k,
        cfg.encoder_hidden,
        cfg.head_hidden,
        seed=cfg.seed,
        encoder_output_relu=cfg.encoder_output_relu,
    )
    return objective.LearnableState(hyper, np.zeros(cfg.k), cfg.lam)


def _federation_in_dim(federation) -> int:
    dims = {c.X.shape[1] for c in federation.clients}
    if len(dims) != 1:
        raise DataError(f"clients disagree on feature dimension: {sorted(dims)}")
    return dims.pop()


def train(federation, cfg: TrainConfig):
    """T rounds of the protocol; deterministic in (cfg.seed, federation).

    Client rng streams are keyed by (seed, round, client id), so any
    client-execution order or parallelism yields identical results.
    """
    cfg.validate()
    in_dim = _federation_in_dim(federation)
    clients = {c.id: c for c in federation.clients}
    basis = build_train_basis(cfg, in_dim)
    state = init_state(cfg, in_dim)
    server_opt = make_optimizer(cfg.server_optimizer, cfg.global_lr)
    logs: list[RoundLog] = []
    for rnd in range(1, cfg.rounds + 1):
        t0 = time.perf_counter()
        cohort = sample_cohort(federation, cfg, rngs.stream(cfg.seed, rngs.COHORT, rnd))
        updates, objs, regs = [], [], []
        n_labeled = 0
        for cid in cohort:
            ds = clients[cid]
            n_labeled += int(ds.labeled)
            delta, mobj, mreg = _client_round(ds, state, basis, cfg, rngs.stream(cfg.seed, rngs.CLIENT, rnd, cid))
            updates.append(delta)
            objs.append(mobj)
            regs.append(mreg)
        delta = aggregate(updates)
        if not np.all(np.isfinite(delta)):
            raise NumericError(f"non-finite aggregate update at round {rnd}")
        state = server_step(state, delta, cfg, server_opt)
        logs.append(
            RoundLog(
                round=rnd,
                mean_objective=float(np.mean(objs)),
                mean_reg=float(np.mean(regs)),
                cohort_ids=cohort,
                n_labeled_in_cohort=n_labeled,
                wall_ms=(time.perf_counter() - t0) * 1e3,
                param_norm=float(np.linalg.norm(state.flatten())),
            )
        )
    return state, logs


def generate_model(state: objective.LearnableState, basis: subspace.ExpansionBasis, X) -> list[tuple[np.ndarray, np.ndarray]]:
    """Client model from raw features alone: coords, expand, split into layers."""
    coords = hypernet.hyper_forward(state.hyper, X)
    theta = subspace.expand(basis, coords)
    return [(w.data, b.data) for w, b in subspace.unflatten(theta, basis.layer_shapes)]


# ---- artifacts ----


def save_checkpoint(path, sections: dict[str, np.ndarray]) -> None:
    """Little-endian binary: magic, u32 section count, then per section
    (u32 name length, name bytes, u64 element count, f64 data)."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(sections)))
        for name, arr in sections.items():
            blob = np.ascontiguousarray(np.asarray(arr, dtype=np.float64).ravel())
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<Q", blob.size))
            f.write(blob.astype("<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    pos = len(CHECKPOINT_MAGIC)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise DataError(f"{path}: truncated checkpoint")
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    sections: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (size,) = struct.unpack("<Q", take(8))
        sections[name] = np.frombuffer(take(size * 8), dtype="<f8").copy()
    if pos != len(raw):
        raise DataError(f"{path}: trailing bytes after last section")
    return sections


def write_round_log_csv(path, logs: list[RoundLog]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["round", "mean_objective", "mean_reg", "n_labeled_in_cohort", "wall_ms"])
        for r in logs:
            w.writerow([r.round, repr(r.mean_objective), repr(r.mean_reg), r.n_labeled_in_cohort, f"{r.wall_ms:.3f}"])
