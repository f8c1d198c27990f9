"""Synthetic federations and CSV ingestion.

Two heterogeneity generators: planar Gaussian clusters rotated per client,
and class-restricted clusters. Both return a Federation of training clients
plus held-out unlabeled evaluation clients, paired with a GroundTruth table
that alone retains evaluation labels and per-client generation parameters.
Training code receives only the Federation; nothing label-like for unlabeled
clients is reachable from it.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import rngs
from .errors import ConfigError, DataError
from .fedruntime import ClientDataset

KINDS = ("rotated_clusters", "class_partition", "csv")
CSV_HEADER_PREFIX = ("client_id", "split", "label")
SPLITS = ("train", "test")


@dataclass(frozen=True)
class FederationSpec:
    n: int = 200
    m: int = 100
    kind: str = "rotated_clusters"
    p: float = 1.0
    seed: int = 0
    n_eval: int = 50
    n_classes: int = 8
    input_dim: int = 2
    sigma: float = 0.15
    rotations: tuple = (0.0, 90.0, 180.0, 270.0)
    coupling: bool = True
    classes_per_client: int = 2
    csv_path: str | None = None

    def validate(self) -> None:
        checks = [
            (self.kind in KINDS, f"kind must be one of {KINDS}, got {self.kind!r}"),
            (self.n >= 1, "n must be at least 1"),
            (self.m >= 2, "m must be at least 2"),
            (self.n_eval >= 0, "n_eval must be nonnegative"),
            (0 < self.p <= 1, f"p must be in (0, 1], got {self.p}"),
            (round(self.p * self.n) >= 1, "p*n rounds to zero labeled clients"),
            (self.n_classes >= 2, "n_classes must be at least 2"),
            (self.sigma > 0, "sigma must be positive"),
            (len(self.rotations) > 0, "rotation set must be nonempty"),
            (
                1 <= self.classes_per_client <= self.n_classes,
                "classes_per_client must be in [1, n_classes]",
            ),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if self.kind == "rotated_clusters" and self.input_dim != 2:
            raise ConfigError("rotations are planar; input_dim must be 2")
        if self.kind == "csv" and not self.csv_path:
            raise ConfigError("kind csv requires csv_path")


@dataclass(frozen=True)
class MixtureParams:
    """Gaussian cluster mixture: one isotropic component per class."""

    means: np.ndarray  # (C, dim)
    weights: np.ndarray  # (C,), sums to 1
    sigma: float

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]


@dataclass(frozen=True)
class Federation:
    clients: list
    eval_clients: list


@dataclass(frozen=True)
class GroundTruth:
    """Evaluator-only companion: eval labels, analysis tags, generator params."""

    kind: str
    seed: int
    eval_labels: dict = field(default_factory=dict)  # eval client id -> labels
    tags: dict = field(default_factory=dict)  # client id -> analysis tag
    client_params: dict = field(default_factory=dict)  # id -> rotation or classes
    mixture: MixtureParams | None = None
    coupling: bool = True


def rotation_matrix(deg: float) -> np.ndarray:
    """Planar rotation; exact entries for multiples of 90 degrees."""
    if deg % 90 == 0:
        c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][int(deg // 90) % 4]
        return np.array([[c, -s], [s, c]], dtype=np.float64)
    rad = math.radians(deg)
    return np.array(
        [[math.cos(rad), -math.sin(rad)], [math.sin(rad), math.cos(rad)]]
    )


def default_mixture(n_classes: int, sigma: float) -> MixtureParams:
    """Cluster means evenly spaced on the unit circle.

    Weights grow linearly with the class index. The lopsided histogram is what
    makes a client's rotation identifiable from its feature marginal alone:
    rotating the circle permutes which position carries which weight, so the
    pooled cloud shape differs per rotation even though positions coincide.
    """
    angles = 2 * np.pi * np.arange(n_classes) / n_classes
    means = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    weights = np.arange(1, n_classes + 1, dtype=np.float64)
    return MixtureParams(means, weights / weights.sum(), sigma)


def bayes_rule(mixture: MixtureParams, x: np.ndarray, rotation_deg: float = 0.0) -> np.ndarray:
    """Most probable class per row under the (optionally rotated) mixture.

    Ties resolve to the lowest class index via argmax.
    """
    means = mixture.means @ rotation_matrix(rotation_deg).T
    sq = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    score = np.log(mixture.weights)[None, :] - sq / (2 * mixture.sigma**2)
    return np.argmax(score, axis=1)


def _draw_cluster_points(mixture, m, rng, class_subset=None):
    if class_subset is None:
        ids = rng.choice(mixture.n_classes, size=m, p=mixture.weights)
    else:
        ids = np.asarray(class_subset)[rng.integers(0, len(class_subset), size=m)]
    x = mixture.means[ids] + mixture.sigma * rng.standard_normal((m, mixture.means.shape[1]))
    return x, ids


def _rotated_client(spec, mixture, cid):
    rng = rngs.stream(spec.seed, rngs.DATA, cid)
    deg = float(spec.rotations[rng.integers(0, len(spec.rotations))])
    raw, clusters = _draw_cluster_points(mixture, spec.m, rng)
    x = raw @ rotation_matrix(deg).T
    if spec.coupling:
        y = clusters.astype(np.int64)
    else:
        # fixed label rule: the unrotated mixture's decision applied to what
        # the client actually observes, so one global rule fits every client
        y = bayes_rule(mixture, x)
    return x, y, deg


def gen_rotated_clusters(spec: FederationSpec):
    """Per-client feature rotation over a shared weighted cluster mixture."""
    spec.validate()
    if spec.input_dim != 2:
        raise ConfigError("rotations are planar; input_dim must be 2")
    mixture = default_mixture(spec.n_classes, spec.sigma)
    gt = GroundTruth("rotated_clusters", spec.seed, mixture=mixture, coupling=spec.coupling)
    clients, eval_clients = [], []
    for cid in range(spec.n + spec.n_eval):
        x, y, deg = _rotated_client(spec, mixture, cid)
        gt.tags[cid] = f"rot{deg:g}"
        gt.client_params[cid] = deg
        if cid < spec.n:
            clients.append(ClientDataset(cid, x, y, True))
        else:
            eval_clients.append(ClientDataset(cid, x, None, False))
            gt.eval_labels[cid] = y
    return Federation(clients, eval_clients), gt


def gen_class_partition(spec: FederationSpec):
    """Each client samples a class subset, then draws only from those clusters."""
    spec.validate()
    mixture = default_mixture(spec.n_classes, spec.sigma)
    gt = GroundTruth("class_partition", spec.seed, mixture=mixture, coupling=spec.coupling)
    clients, eval_clients = [], []
    for cid in range(spec.n + spec.n_eval):
        rng = rngs.stream(spec.seed, rngs.DATA, cid)
        subset = tuple(
            sorted(rng.choice(spec.n_classes, size=spec.classes_per_client, replace=False))
        )
        x, y = _draw_cluster_points(mixture, spec.m, rng, class_subset=subset)
        y = y.astype(np.int64)
        gt.tags[cid] = "classes" + "-".join(str(c) for c in subset)
        gt.client_params[cid] = subset
        if cid < spec.n:
            clients.append(ClientDataset(cid, x, y, True))
        else:
            eval_clients.append(ClientDataset(cid, x, None, False))
            gt.eval_labels[cid] = y
    return Federation(clients, eval_clients), gt


def assign_labels(federation: Federation, p: float, seed: int) -> Federation:
    """Keep labels on exactly round(p*n) training clients, strip the rest."""
    if not 0 < p <= 1:
        raise ConfigError(f"p must be in (0, 1], got {p}")
    n = len(federation.clients)
    n_keep = int(round(p * n))
    if n_keep == 0:
        raise ConfigError(f"p={p} with n={n} rounds to zero labeled clients")
    order = rngs.stream(seed, rngs.LABELSET).permutation(n)
    keep = {federation.clients[i].id for i in order[:n_keep]}
    clients = [
        c if c.id in keep else ClientDataset(c.id, c.X, None, False)
        for c in federation.clients
    ]
    return Federation(clients, federation.eval_clients)


def gen_federation(spec: FederationSpec):
    """Generate per spec.kind and apply the labeled-fraction assignment."""
    spec.validate()
    if spec.kind == "rotated_clusters":
        fed, gt = gen_rotated_clusters(spec)
    elif spec.kind == "class_partition":
        fed, gt = gen_class_partition(spec)
    else:
        fed, gt = load_csv(spec.csv_path)
    return assign_labels(fed, spec.p, spec.seed), gt


def fresh_sample(gt: GroundTruth, cid: int, m: int, seed: int):
    """New labeled draw from a client's own distribution, for holdout checks.

    The stream key carries a trailing marker so even seed reuse cannot replay
    the generation-time sample.
    """
    if gt.mixture is None or cid not in gt.client_params:
        raise DataError(f"no generator parameters recorded for client {cid}")
    rng = rngs.stream(seed, rngs.DATA, cid, 1)
    if gt.kind == "rotated_clusters":
        deg = gt.client_params[cid]
        raw, clusters = _draw_cluster_points(gt.mixture, m, rng)
        x = raw @ rotation_matrix(deg).T
        y = clusters.astype(np.int64) if gt.coupling else bayes_rule(gt.mixture, x)
        return x, y
    subset = gt.client_params[cid]
    x, y = _draw_cluster_points(gt.mixture, m, rng, class_subset=subset)
    return x, y.astype(np.int64)


def bayes_predict(gt: GroundTruth, cid: int, x: np.ndarray) -> np.ndarray:
    """The client's own most-probable-class rule; the evaluation ceiling."""
    if gt.mixture is None:
        raise DataError("no mixture parameters recorded")
    if gt.kind == "rotated_clusters" and gt.coupling:
        return bayes_rule(gt.mixture, x, gt.client_params[cid])
    return bayes_rule(gt.mixture, x)


def bayes_accuracy(gt: GroundTruth, cid: int, m: int = 10000, seed: int = 0) -> float:
    x, y = fresh_sample(gt, cid, m, seed)
    return float(np.mean(bayes_predict(gt, cid, x) == y))


# ---- CSV schema: client_id, split, label, f0, f1, ... ----


def export_csv(path, federation: Federation, gt: GroundTruth, spec: FederationSpec | None = None):
    """Write every client's rows; a JSON sidecar records spec and seed.

    Evaluation clients appear as split=test with their ground-truth labels so
    a round trip reconstructs the evaluator's table.
    """
    rows = []
    width = None
    for split, group in (("train", federation.clients), ("test", federation.eval_clients)):
        for c in group:
            if width is None:
                width = c.X.shape[1]
            labels = c.Y if c.labeled else gt.eval_labels.get(c.id)
            for i in range(c.m):
                label = "" if labels is None else str(int(labels[i]))
                rows.append([str(c.id), split, label] + [repr(float(v)) for v in c.X[i]])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(CSV_HEADER_PREFIX) + [f"f{i}" for i in range(width or 0)])
        writer.writerows(rows)
    sidecar = {"seed": gt.seed, "kind": gt.kind}
    if spec is not None:
        sidecar["spec"] = dataclasses.asdict(spec)
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, default=list)
        fh.write("\n")


def load_csv(path, schema=None):
    """Read the schema above into a Federation plus ground-truth table.

    schema, when given, is a dict that may pin n_features. Labeled test rows
    feed GroundTruth.eval_labels; an empty label column means unlabeled, and
    must be empty on every row of that client.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if tuple(header[:3]) != CSV_HEADER_PREFIX:
            raise DataError(
                f"{path}: header must start with {','.join(CSV_HEADER_PREFIX)}"
            )
        width = len(header) - 3
        if width < 1:
            raise DataError(f"{path}: no feature columns")
        if schema and "n_features" in schema and schema["n_features"] != width:
            raise DataError(
                f"{path}: expected {schema['n_features']} feature columns, found {width}"
            )
        per_client: dict[int, dict] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width + 3:
                raise DataError(f"{path}:{lineno}: expected {width + 3} fields, got {len(row)}")
            try:
                cid = int(row[0])
                feats = [float(v) for v in row[3:]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            split = row[1]
            if split not in SPLITS:
                raise DataError(f"{path}:{lineno}: unknown split {split!r}")
            label = None if row[2] == "" else int(row[2])
            entry = per_client.setdefault(cid, {"split": split, "x": [], "y": []})
            if entry["split"] != split:
                raise DataError(f"{path}:{lineno}: client {cid} appears in both splits")
            entry["x"].append(feats)
            entry["y"].append(label)
    clients, eval_clients = [], []
    gt = GroundTruth("csv", 0, mixture=None)
    for cid in sorted(per_client):
        entry = per_client[cid]
        has = [y is not None for y in entry["y"]]
        if any(has) and not all(has):
            raise DataError(f"{path}: client {cid} mixes labeled and unlabeled rows")
        x = np.array(entry["x"], dtype=np.float64)
        y = np.array(entry["y"], dtype=np.int64) if all(has) else None
        if entry["split"] == "train":
            clients.append(ClientDataset(cid, x, y, y is not None))
        else:
            eval_clients.append(ClientDataset(cid, x, None, False))
            if y is not None:
                gt.eval_labels[cid] = y
    return Federation(clients, eval_clients), gt
