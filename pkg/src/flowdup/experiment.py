"""Experiment orchestration: flat JSON configs, on-disk artifacts, sweeps.

A config is a single flat JSON object. Every key has a default except
schema_version, so a minimal file is {"schema_version": 1}; unknown keys are
rejected by name rather than silently ignored. One run writes a resolved
config, a checkpoint, a round log, and a report, all tied together by the
sha256 of the resolved config. Reports are byte-stable across identical runs
except for the fields that record wall-clock time.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import baselines, bound, datagen, evaluation, fedruntime, nn
from .errors import ConfigError, DataError
from .objective import LearnableState

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# key -> (kind, default); kinds: int, float, bool, str, str?, int?, ints, floats
CONFIG_SCHEMA = {
    "schema_version": ("int", None),
    "method": ("str", "flowdup"),
    "seed": ("int", 0),
    # data generation / loading
    "data_csv": ("str?", None),
    "data_kind": ("str", "rotated_clusters"),
    "n_clients": ("int", 200),
    "m_per_client": ("int", 100),
    "n_eval_clients": ("int", 50),
    "n_classes": ("int", 8),
    "input_dim": ("int", 2),
    "sigma": ("float", 0.15),
    "rotations": ("floats", (0.0, 90.0, 180.0, 270.0)),
    "coupling": ("bool", True),
    "classes_per_client": ("int", 2),
    "p_labeled": ("float", 1.0),
    # training
    "rounds": ("int", 50),
    "cohort_size": ("int", 8),
    "labeled_fraction": ("float", 0.9),
    "local_epochs": ("int", 1),
    "batch_size": ("int", 50),
    "local_lr": ("float", 0.01),
    "global_lr": ("float", 1.0),
    "lam": ("float", 0.01),
    "client_optimizer": ("str", "sgd"),
    "server_optimizer": ("str", "sgd"),
    "weight_decay": ("float", 0.0),
    "use_unlabeled_clients": ("bool", True),
    "learnable_reg": ("bool", True),
    "k": ("int", 16),
    "f_hidden": ("ints", (32,)),
    "e_dim": ("int", 32),
    "encoder_hidden": ("ints", (64, 64)),
    "head_hidden": ("ints", (64,)),
    "encoder_output_relu": ("bool", False),
    "reduction": ("str", "mean"),
    "column_normalized": ("bool", True),
    "fedprox_mu": ("float", 1.0),
    # evaluation
    "eval_fresh_sample": ("bool", False),
    "eval_fresh_m": ("int?", None),
    # extra artifacts
    "dump_embeddings": ("bool", False),
    "compute_bound": ("bool", False),
    "bound_alpha_h": ("float", 0.01),
    "bound_alpha_theta": ("float", 0.01),
    "bound_alpha_r": ("float", 0.01),
    "bound_delta": ("float", 0.05),
    "bound_mc_samples": ("int", 32),
    "bound_strict_delta_split": ("bool", False),
}

# a resolved config may carry its own hash back in; it is never part of the hash
HASH_KEY = "config_hash"


def _check_kind(value, kind):
    if kind == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == "float":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind == "bool":
        return isinstance(value, bool)
    if kind == "str":
        return isinstance(value, str)
    if kind == "str?":
        return value is None or isinstance(value, str)
    if kind == "int?":
        return value is None or (isinstance(value, int) and not isinstance(value, bool))
    if kind == "ints":
        return isinstance(value, (list, tuple)) and all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        )
    if kind == "floats":
        return isinstance(value, (list, tuple)) and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        )
    raise AssertionError(kind)


def _coerce(value, kind):
    if kind == "float":
        return float(value)
    if kind == "ints":
        return tuple(int(v) for v in value)
    if kind == "floats":
        return tuple(float(v) for v in value)
    return value


def validate_config(raw: dict) -> dict:
    """Schema-check a parsed config and fill defaults; raises naming every
    offending key so a bad file is fixable in one pass."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config must be a JSON object, got {type(raw).__name__}")
    raw = dict(raw)
    claimed_hash = raw.pop(HASH_KEY, None)
    unknown = sorted(set(raw) - set(CONFIG_SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "schema_version" not in raw:
        raise ConfigError("config must declare schema_version")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {raw['schema_version']!r}, this build reads {SCHEMA_VERSION}"
        )
    bad = []
    filled = {}
    for key, (kind, default) in CONFIG_SCHEMA.items():
        if key in raw:
            if _check_kind(raw[key], kind):
                filled[key] = _coerce(raw[key], kind)
            else:
                bad.append(f"{key} (expected {kind})")
        else:
            filled[key] = default
    if bad:
        raise ConfigError(f"config keys with wrong types: {', '.join(bad)}")
    if filled["method"] not in baselines.METHODS:
        raise ConfigError(f"method must be one of {baselines.METHODS}, got {filled['method']!r}")
    for flag in ("dump_embeddings", "compute_bound"):
        if filled[flag] and filled["method"] != "flowdup":
            raise ConfigError(f"{flag} requires the hypernetwork method, not {filled['method']!r}")
    if filled["eval_fresh_m"] is not None and filled["eval_fresh_m"] < 2:
        raise ConfigError("eval_fresh_m must be at least 2")
    if claimed_hash is not None and claimed_hash != config_hash(filled):
        log.warning("config carries a stale %s; recomputed after edits", HASH_KEY)
    return filled


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return validate_config(raw)


def config_hash(filled: dict) -> str:
    clean = {k: v for k, v in filled.items() if k != HASH_KEY}
    blob = json.dumps(clean, sort_keys=True, separators=(",", ":"), default=list)
    return hashlib.sha256(blob.encode()).hexdigest()


# ---- config -> domain objects ----


def federation_spec(cfg: dict) -> datagen.FederationSpec:
    return datagen.FederationSpec(
        n=cfg["n_clients"],
        m=cfg["m_per_client"],
        kind=cfg["data_kind"],
        p=cfg["p_labeled"],
        seed=cfg["seed"],
        n_eval=cfg["n_eval_clients"],
        n_classes=cfg["n_classes"],
        input_dim=cfg["input_dim"],
        sigma=cfg["sigma"],
        rotations=cfg["rotations"],
        coupling=cfg["coupling"],
        classes_per_client=cfg["classes_per_client"],
    )


def train_config(cfg: dict) -> fedruntime.TrainConfig:
    return fedruntime.TrainConfig(
        rounds=cfg["rounds"],
        cohort_size=cfg["cohort_size"],
        k=cfg["k"],
        n_classes=cfg["n_classes"],
        labeled_fraction=cfg["labeled_fraction"],
        local_epochs=cfg["local_epochs"],
        batch_size=cfg["batch_size"],
        local_lr=cfg["local_lr"],
        global_lr=cfg["global_lr"],
        lam=cfg["lam"],
        seed=cfg["seed"],
        client_optimizer=cfg["client_optimizer"],
        server_optimizer=cfg["server_optimizer"],
        weight_decay=cfg["weight_decay"],
        use_unlabeled_clients=cfg["use_unlabeled_clients"],
        learnable_reg=cfg["learnable_reg"],
        f_hidden=cfg["f_hidden"],
        e_dim=cfg["e_dim"],
        encoder_hidden=cfg["encoder_hidden"],
        head_hidden=cfg["head_hidden"],
        encoder_output_relu=cfg["encoder_output_relu"],
        reduction=cfg["reduction"],
        column_normalized=cfg["column_normalized"],
        fedprox_mu=cfg["fedprox_mu"],
    )


def bound_config(cfg: dict, federation) -> bound.BoundConfig:
    tasks = list(federation.clients) + list(federation.eval_clients)
    return bound.BoundConfig(
        n=len(tasks),
        n_L=sum(1 for t in tasks if t.labeled),
        m=min(t.m for t in tasks),
        alpha_h=cfg["bound_alpha_h"],
        alpha_theta=cfg["bound_alpha_theta"],
        alpha_r=cfg["bound_alpha_r"],
        delta=cfg["bound_delta"],
        mc_samples=cfg["bound_mc_samples"],
        seed=cfg["seed"],
        strict_delta_split=cfg["bound_strict_delta_split"],
    )


def build_federation(cfg: dict):
    if cfg["data_csv"]:
        return datagen.load_csv(cfg["data_csv"], schema={"n_features": cfg["input_dim"]})
    spec = federation_spec(cfg)
    return datagen.gen_federation(spec)


def train_model(cfg: dict, federation):
    tcfg = train_config(cfg)
    if cfg["method"] == "flowdup":
        return fedruntime.train(federation, tcfg)
    return baselines.train_baseline(cfg["method"], federation, tcfg)


# ---- checkpoints ----


def checkpoint_sections(cfg: dict, model) -> dict[str, np.ndarray]:
    stamp = {
        "stamp_seed": np.array([float(cfg["seed"])]),
        "stamp_config_hash": np.frombuffer(bytes.fromhex(config_hash(cfg)), dtype=np.uint8).astype(
            np.float64
        ),
    }
    if isinstance(model, LearnableState):
        return {"psi": model.flatten(), "lam": np.array([model.lam]), **stamp}
    if model.mode == "subspace":
        return {"coords": model.coords, **stamp}
    return {"theta": model.theta, **stamp}


def _require_section(sections: dict, name: str, size: int) -> np.ndarray:
    if name not in sections:
        raise DataError(f"checkpoint lacks section {name!r}")
    arr = sections[name]
    if arr.size != size:
        raise DataError(f"checkpoint section {name!r} holds {arr.size} values, config expects {size}")
    return arr


def model_from_checkpoint(cfg: dict, sections: dict[str, np.ndarray], in_dim: int):
    if "stamp_config_hash" in sections:
        stored = bytes(sections["stamp_config_hash"].astype(np.uint8)).hex()
        if stored != config_hash(cfg):
            log.warning("checkpoint was written under a different config; proceeding")
    tcfg = train_config(cfg)
    if cfg["method"] == "flowdup":
        state = fedruntime.init_state(tcfg, in_dim)
        state = state.with_flat(_require_section(sections, "psi", state.flatten().size))
        if "lam" in sections:
            state = replace(state, lam=float(sections["lam"][0]))
        return state
    if cfg["method"] == "ldfedavg":
        basis = fedruntime.build_train_basis(tcfg, in_dim)
        coords = _require_section(sections, "coords", tcfg.k)
        return baselines.GlobalModelState("subspace", coords=coords, basis=basis)
    n_params = nn.param_count(fedruntime.model_shapes(tcfg, in_dim))
    return baselines.GlobalModelState("full", theta=_require_section(sections, "theta", n_params))


# ---- artifact writers ----


def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=list)
        fh.write("\n")


def write_embeddings_csv(path, dump: evaluation.EmbeddingDump) -> None:
    e = dump.embeddings.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["client_id", "tag"] + [f"e{i}" for i in range(e)] + ["p0", "p1"])
        for i, cid in enumerate(dump.client_ids):
            row = [cid, dump.tags[i]]
            row += [repr(float(v)) for v in dump.embeddings[i]]
            row += [repr(float(v)) for v in dump.projection[i]]
            w.writerow(row)


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def fresh_eval(model, basis, federation, gt, cfg: dict) -> evaluation.EvalReport:
    """Inductive check: models generated from each eval client's own rows,
    scored on a disjoint draw from the same client distribution."""
    if getattr(gt, "mixture", None) is None:
        raise ConfigError("eval_fresh_sample requires a generated federation, not CSV data")
    m = cfg["eval_fresh_m"] or cfg["m_per_client"]
    seen = {c.id: c.X for c in federation.eval_clients}
    fresh, labels = [], {}
    for cid in sorted(seen):
        x, y = datagen.fresh_sample(gt, cid, m, cfg["seed"])
        fresh.append(fedruntime.ClientDataset(cid, x, None, False))
        labels[cid] = y

    def predict(ds):
        if isinstance(model, LearnableState):
            layers = fedruntime.generate_model(model, basis, seen[ds.id])
        else:
            shapes = model.basis.layer_shapes if model.mode == "subspace" else basis.layer_shapes
            layers = model.layers(shapes)
        return np.argmax(nn.mlp_forward(layers, ds.X).data, axis=1)

    return evaluation.evaluate(
        predict,
        basis,
        fresh,
        labels,
        method=cfg["method"] + "+fresh",
        p=cfg["p_labeled"],
        k=cfg["k"],
        seed=cfg["seed"],
    )


# ---- the run itself ----


def run_config(cfg: dict, out_dir) -> dict:
    """Train, evaluate, and write all artifacts for one resolved config.

    Returns {"paths": {...}, "report": ...} so callers (sweep, CLI) can
    summarize without re-reading the files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = config_hash(cfg)
    federation, gt = build_federation(cfg)
    if not federation.eval_clients:
        raise ConfigError("config produced no evaluation clients")
    model, logs = train_model(cfg, federation)
    in_dim = federation.clients[0].X.shape[1]
    basis = fedruntime.build_train_basis(train_config(cfg), in_dim)

    paths = {"config": out / "config_resolved.json", "checkpoint": out / "checkpoint.bin"}
    _write_json(paths["config"], {**cfg, HASH_KEY: h})
    fedruntime.save_checkpoint(paths["checkpoint"], checkpoint_sections(cfg, model))
    paths["rounds"] = out / "rounds.csv"
    fedruntime.write_round_log_csv(paths["rounds"], logs)

    report = {
        "schema_version": SCHEMA_VERSION,
        HASH_KEY: h,
        "seed": cfg["seed"],
        "method": cfg["method"],
        "generated_utc": _utc_now(),
        "eval": evaluation.evaluate(
            model,
            basis,
            federation,
            gt,
            method=cfg["method"],
            p=cfg["p_labeled"],
            k=cfg["k"],
            seed=cfg["seed"],
        ).as_dict(),
    }
    if cfg["eval_fresh_sample"]:
        report["eval_fresh"] = fresh_eval(model, basis, federation, gt, cfg).as_dict()
    if cfg["compute_bound"]:
        bcfg = bound_config(cfg, federation)
        breport = bound.bound_rhs(model, federation, basis, bcfg)
        report["bound"] = {**breport.as_dict(), "n": bcfg.n, "n_L": bcfg.n_L, "m": bcfg.m}
    if cfg["dump_embeddings"]:
        dump = evaluation.dump_embeddings(model, federation, gt)
        paths["embeddings"] = out / "embeddings.csv"
        write_embeddings_csv(paths["embeddings"], dump)

    paths["report"] = out / "report.json"
    _write_json(paths["report"], report)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        HASH_KEY: h,
        "seed": cfg["seed"],
        "files": {p.name: _sha256_file(p) for p in sorted(paths.values())},
    }
    paths["manifest"] = out / "manifest.json"
    _write_json(paths["manifest"], manifest)
    return {"paths": {k: str(p) for k, p in paths.items()}, "report": report}


def run_experiment(config_path, out_dir) -> dict:
    return run_config(load_config(config_path), out_dir)


# ---- sweeps ----


def _cell_token(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value).replace("/", "-")


def validate_grid(grid: dict) -> None:
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("grid must be a non-empty JSON object of key -> list of values")
    unknown = sorted(set(grid) - set(CONFIG_SCHEMA))
    if unknown:
        raise ConfigError(f"unknown grid keys: {', '.join(unknown)}")
    if "schema_version" in grid:
        raise ConfigError("grid cannot vary schema_version")
    bad = sorted(
        key
        for key, values in grid.items()
        if not isinstance(values, (list, tuple))
        or not values
        or any(isinstance(v, (list, tuple, dict)) for v in values)
    )
    if bad:
        raise ConfigError(f"grid keys need non-empty lists of scalars: {', '.join(bad)}")


def run_sweep(config_path, grid: dict, out_dir) -> dict:
    """Cartesian product of grid overrides on a base config, one artifact
    directory per cell, plus a summary that pools repeated seeds per setting."""
    base = load_config(config_path)
    validate_grid(grid)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    keys = sorted(grid)
    cells = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        overrides = dict(zip(keys, combo))
        cfg = validate_config({**base, **overrides})
        name = "__".join(f"{k}={_cell_token(v)}" for k, v in sorted(overrides.items()))
        result = run_config(cfg, out / name)
        cells.append(
            {
                "cell": name,
                "overrides": overrides,
                "mean": result["report"]["eval"]["mean"],
                "std": result["report"]["eval"]["std"],
                "report": str(Path(name) / "report.json"),
            }
        )
    summary = {
        "schema_version": SCHEMA_VERSION,
        HASH_KEY: config_hash(base),
        "seed": base["seed"],
        "grid": {k: list(v) for k, v in grid.items()},
        "cells": cells,
    }
    if "seed" in grid:
        groups: dict[tuple, list[float]] = {}
        for cell in cells:
            key = tuple(sorted((k, v) for k, v in cell["overrides"].items() if k != "seed"))
            groups.setdefault(key, []).append(cell["mean"])
        summary["by_setting"] = [
            {
                "overrides": dict(key),
                "n_seeds": len(means),
                "mean": float(np.mean(means)),
                "std": float(np.std(means)),
            }
            for key, means in sorted(groups.items())
        ]
    _write_json(out / "sweep_summary.json", summary)
    return summary
