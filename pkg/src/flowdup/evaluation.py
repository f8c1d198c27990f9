"""Scoring on held-out clients, embedding dumps, and a small PCA.

Accuracy is always computed against the evaluator's ground-truth table; the
eval clients themselves are unlabeled and stay that way. Per-client models
come from the hypernetwork; baseline global models and plain callables are
scored through the same path so every method shares one accounting.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn, subspace
from .baselines import GlobalModelState
from .errors import ContractError, DataError
from .fedruntime import generate_model
from .hypernet import embed
from .objective import LearnableState

POWER_ITER_TOL = 1e-9
POWER_ITER_MAX = 10000


@dataclass(frozen=True)
class EvalReport:
    method: str
    per_client: dict  # client id -> accuracy
    mean: float
    std: float  # population std over clients
    p: float | None = None
    k: int | None = None
    seed: int | None = None
    runtime_s: float = 0.0

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "per_client": {str(cid): acc for cid, acc in sorted(self.per_client.items())},
            "mean": self.mean,
            "std": self.std,
            "p": self.p,
            "k": self.k,
            "seed": self.seed,
            "runtime_s": self.runtime_s,
        }


@dataclass(frozen=True)
class EmbeddingDump:
    client_ids: list
    embeddings: np.ndarray  # (n_clients, e)
    projection: np.ndarray  # (n_clients, 2), from these embeddings
    tags: list  # analysis tag per client, "" when unknown


def _eval_set(federation_or_clients) -> list:
    obj = federation_or_clients
    if hasattr(obj, "eval_clients"):
        return list(obj.eval_clients)
    if hasattr(obj, "clients"):
        return list(obj.clients)
    return list(obj)


def _predictions(model, basis, dataset) -> np.ndarray:
    if isinstance(model, LearnableState):
        layers = generate_model(model, basis, dataset.X)
    elif isinstance(model, GlobalModelState):
        shapes = model.basis.layer_shapes if model.mode == "subspace" else basis.layer_shapes
        layers = model.layers(shapes)
    elif callable(model):
        return np.asarray(model(dataset))
    else:
        raise ContractError(f"cannot score a {type(model).__name__}")
    # argmax resolves ties toward the lowest class index
    return np.argmax(nn.mlp_forward(layers, dataset.X).data, axis=1)


def evaluate(
    model,
    basis,
    eval_federation,
    ground_truth,
    method: str | None = None,
    p: float | None = None,
    k: int | None = None,
    seed: int | None = None,
) -> EvalReport:
    """Score a model (or callable on ClientDataset) per held-out client."""
    t0 = time.perf_counter()
    clients = _eval_set(eval_federation)
    if not clients:
        raise ContractError("no evaluation clients")
    labels_map = getattr(ground_truth, "eval_labels", ground_truth)
    per_client = {}
    for ds in sorted(clients, key=lambda c: c.id):
        if ds.id not in labels_map:
            raise DataError(f"no ground-truth labels for client {ds.id}")
        labels = np.asarray(labels_map[ds.id])
        if labels.shape[0] != ds.m:
            raise DataError(
                f"client {ds.id}: {labels.shape[0]} ground-truth labels for {ds.m} rows"
            )
        preds = _predictions(model, basis, ds)
        per_client[ds.id] = float(np.mean(preds == labels))
    accs = np.array(list(per_client.values()))
    if method is None:
        if isinstance(model, LearnableState):
            method = "flowdup"
        elif isinstance(model, GlobalModelState):
            method = f"global-{model.mode}"
        else:
            method = "custom"
    return EvalReport(
        method=method,
        per_client=per_client,
        mean=float(accs.mean()),
        std=float(accs.std()),
        p=p,
        k=k,
        seed=seed,
        runtime_s=time.perf_counter() - t0,
    )


def principal_directions(x: np.ndarray, n_components: int = 2):
    """Top eigenvectors of the covariance by power iteration with deflation.

    Sign convention: the first coordinate of each direction whose magnitude
    exceeds 1e-12 is made positive. A vanished residual spectrum yields a
    deterministic direction orthogonal to the earlier ones.
    """
    centered = x - x.mean(axis=0)
    dim = x.shape[1]
    cov = centered.T @ centered / x.shape[0]
    directions, variances = [], []
    for _ in range(n_components):
        v = np.ones(dim) + 1e-3 * np.arange(dim)  # symmetry-breaking start
        v /= np.linalg.norm(v)
        for _ in range(POWER_ITER_MAX):
            w = cov @ v
            for d, lam in zip(directions, variances):
                w -= lam * (d @ v) * d  # matvec of the deflated matrix
            norm = np.linalg.norm(w)
            if norm < 1e-15:
                v = _orthogonal_fallback(directions, dim)
                break
            w /= norm
            done = np.linalg.norm(w - v) < POWER_ITER_TOL
            v = w
            if done:
                break
        lam = float(v @ cov @ v)
        nz = np.nonzero(np.abs(v) > 1e-12)[0]
        if nz.size and v[nz[0]] < 0:
            v = -v
        directions.append(v)
        variances.append(lam)
    return np.stack(directions), np.array(variances)


def _orthogonal_fallback(directions, dim):
    for i in range(dim):
        cand = np.zeros(dim)
        cand[i] = 1.0
        for d in directions:
            cand -= (d @ cand) * d
        norm = np.linalg.norm(cand)
        if norm > 1e-9:
            return cand / norm
    raise ContractError("no orthogonal direction available")


def pca2(points) -> np.ndarray:
    """Project points onto their own top-2 principal directions."""
    x = np.asarray([np.asarray(getattr(p, "data", p), dtype=np.float64) for p in points])
    if x.shape[0] < 2:
        raise ContractError("pca needs at least 2 points")
    directions, _ = principal_directions(x, 2)
    return (x - x.mean(axis=0)) @ directions.T


def dump_embeddings(state: LearnableState, eval_federation, ground_truth=None) -> EmbeddingDump:
    """Pooled encoder features per eval client, plus their 2-D projection."""
    clients = sorted(_eval_set(eval_federation), key=lambda c: c.id)
    if len(clients) < 2:
        raise ContractError("need at least 2 clients to dump embeddings")
    ids = [c.id for c in clients]
    vecs = np.stack([embed(state.hyper, c.X).data for c in clients])
    tags_map = getattr(ground_truth, "tags", None) or {}
    return EmbeddingDump(
        client_ids=ids,
        embeddings=vecs,
        projection=pca2(vecs),
        tags=[tags_map.get(cid, "") for cid in ids],
    )


def cluster_separation(dump: EmbeddingDump) -> tuple[float, float]:
    """Mean pairwise distance within tag groups vs across them, full width."""
    tags = dump.tags
    if not tags or any(t == "" for t in tags):
        raise ContractError("cluster separation needs a tag per client")
    counts = {}
    for t in tags:
        counts[t] = counts.get(t, 0) + 1
    small = [t for t, c in counts.items() if c < 2]
    if small:
        raise ContractError(f"tag groups too small for pairwise distances: {small}")
    x = dump.embeddings
    diffs = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
    same = np.array([[a == b for b in tags] for a in tags])
    upper = np.triu(np.ones_like(same, dtype=bool), k=1)
    intra = float(diffs[same & upper].mean())
    inter = float(diffs[~same & upper].mean()) if (~same & upper).any() else 0.0
    return intra, inter
