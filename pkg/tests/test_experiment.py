"""Config schema, artifact plumbing, checkpoint restore, sweeps."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from flowdup import baselines, datagen, evaluation, experiment, fedruntime
from flowdup.errors import ConfigError, DataError
from flowdup.objective import LearnableState

TINY = {
    "schema_version": 1,
    "seed": 3,
    "n_clients": 6,
    "m_per_client": 16,
    "n_eval_clients": 3,
    "p_labeled": 0.5,
    "rounds": 3,
    "cohort_size": 4,
    "labeled_fraction": 0.5,
    "batch_size": 8,
    "k": 4,
    "e_dim": 4,
    "encoder_hidden": [6],
    "head_hidden": [5],
    "f_hidden": [],
    "local_lr": 0.05,
}


def write_cfg(dirpath, **overrides):
    cfg = {**TINY, **overrides}
    path = Path(dirpath) / "config.json"
    path.write_text(json.dumps(cfg))
    return path


# ---- schema ----


def test_minimal_config_fills_every_default():
    filled = experiment.validate_config({"schema_version": 1})
    assert set(filled) == set(experiment.CONFIG_SCHEMA)
    # the config layer must not contradict the dataclass defaults it feeds
    tdef = fedruntime.TrainConfig(rounds=1, cohort_size=1, k=1, n_classes=2)
    assert filled["labeled_fraction"] == tdef.labeled_fraction
    assert filled["local_lr"] == tdef.local_lr
    assert filled["f_hidden"] == tdef.f_hidden
    sdef = datagen.FederationSpec()
    assert filled["n_clients"] == sdef.n
    assert filled["m_per_client"] == sdef.m
    assert filled["rotations"] == sdef.rotations


def test_unknown_keys_all_named():
    with pytest.raises(ConfigError, match="khat") as err:
        experiment.validate_config({"schema_version": 1, "roundz": 3, "khat": 2})
    assert "roundz" in str(err.value)


def test_schema_version_required_and_checked():
    with pytest.raises(ConfigError, match="schema_version"):
        experiment.validate_config({"rounds": 3})
    with pytest.raises(ConfigError, match="unsupported"):
        experiment.validate_config({"schema_version": 99})


def test_wrong_types_all_named():
    with pytest.raises(ConfigError, match="rounds") as err:
        experiment.validate_config({"schema_version": 1, "rounds": "ten", "coupling": 3})
    assert "coupling" in str(err.value)


def test_flag_method_coupling():
    with pytest.raises(ConfigError, match="compute_bound"):
        experiment.validate_config({"schema_version": 1, "method": "fedavg", "compute_bound": True})
    with pytest.raises(ConfigError, match="dump_embeddings"):
        experiment.validate_config({"schema_version": 1, "method": "ldfedavg", "dump_embeddings": True})
    with pytest.raises(ConfigError, match="method"):
        experiment.validate_config({"schema_version": 1, "method": "sgd"})


def test_config_hash_ignores_ordering_and_container_type():
    a = experiment.validate_config({"schema_version": 1, "k": 8, "rounds": 2})
    b = experiment.validate_config({"rounds": 2, "schema_version": 1, "k": 8})
    assert experiment.config_hash(a) == experiment.config_hash(b)
    c = dict(a, f_hidden=list(a["f_hidden"]))
    assert experiment.config_hash(c) == experiment.config_hash(a)
    assert experiment.config_hash(dict(a, k=9)) != experiment.config_hash(a)


def test_resolved_config_round_trips(tmp_path):
    """config_resolved.json is itself a valid config with the same hash."""
    filled = experiment.validate_config(TINY)
    h = experiment.config_hash(filled)
    path = tmp_path / "resolved.json"
    path.write_text(json.dumps({**filled, "config_hash": h}, default=list))
    again = experiment.load_config(path)
    assert again == filled
    assert experiment.config_hash(again) == h


def test_mapping_into_domain_configs():
    filled = experiment.validate_config(TINY)
    tcfg = experiment.train_config(filled)
    assert (tcfg.k, tcfg.seed, tcfg.rounds) == (4, 3, 3)
    assert tcfg.encoder_hidden == (6,)
    spec = experiment.federation_spec(filled)
    assert (spec.n, spec.m, spec.seed, spec.p) == (6, 16, 3, 0.5)
    assert spec.rotations == (0.0, 90.0, 180.0, 270.0)


# ---- one full run, inspected from many angles ----


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg_path = write_cfg(root, compute_bound=True, dump_embeddings=True, eval_fresh_sample=True, eval_fresh_m=10, bound_mc_samples=4)
    result = experiment.run_experiment(cfg_path, root / "out")
    return cfg_path, root / "out", result


def test_artifacts_exist_and_are_stamped(tiny_run):
    cfg_path, out, result = tiny_run
    for name in ("config", "checkpoint", "rounds", "report", "embeddings", "manifest"):
        assert Path(result["paths"][name]).exists()
    filled = experiment.load_config(cfg_path)
    h = experiment.config_hash(filled)
    report = json.loads((out / "report.json").read_text())
    assert report["config_hash"] == h
    assert report["seed"] == filled["seed"]
    resolved = json.loads((out / "config_resolved.json").read_text())
    assert resolved["config_hash"] == h
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == h and manifest["seed"] == filled["seed"]


def test_report_contents(tiny_run):
    _, out, result = tiny_run
    report = result["report"]
    ev = report["eval"]
    assert ev["method"] == "flowdup"
    assert len(ev["per_client"]) == 3
    assert all(0.0 <= a <= 1.0 for a in ev["per_client"].values())
    assert abs(ev["mean"] - np.mean(list(ev["per_client"].values()))) < 1e-12
    fresh = report["eval_fresh"]
    assert fresh["method"] == "flowdup+fresh"
    assert set(fresh["per_client"]) == set(ev["per_client"])
    b = report["bound"]
    assert b["rhs"] >= b["emp_risk"]
    assert (b["n"], b["n_L"], b["m"]) == (9, 3, 16)


def test_manifest_hashes_verify(tiny_run):
    _, out, _ = tiny_run
    manifest = json.loads((out / "manifest.json").read_text())
    assert "manifest.json" not in manifest["files"]
    for name, digest in manifest["files"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest


def _stable_lines(path):
    volatile = ('"generated_utc"', '"runtime')
    return [l for l in Path(path).read_text().splitlines() if not any(v in l for v in volatile)]


def test_identical_config_identical_artifacts(tiny_run, tmp_path):
    cfg_path, out, _ = tiny_run
    experiment.run_experiment(cfg_path, tmp_path / "again")
    assert _stable_lines(out / "report.json") == _stable_lines(tmp_path / "again" / "report.json")
    assert (out / "checkpoint.bin").read_bytes() == (tmp_path / "again" / "checkpoint.bin").read_bytes()
    assert (out / "embeddings.csv").read_bytes() == (tmp_path / "again" / "embeddings.csv").read_bytes()


def test_embeddings_csv_matches_dump(tiny_run):
    """The CSV is a faithful print of dump_embeddings on the same run."""
    cfg_path, out, _ = tiny_run
    cfg = experiment.load_config(cfg_path)
    federation, gt = experiment.build_federation(cfg)
    sections = fedruntime.load_checkpoint(out / "checkpoint.bin")
    state = experiment.model_from_checkpoint(cfg, sections, 2)
    dump = evaluation.dump_embeddings(state, federation, gt)
    rows = (out / "embeddings.csv").read_text().splitlines()
    assert rows[0].split(",")[:2] == ["client_id", "tag"]
    assert len(rows) == 1 + len(dump.client_ids)
    first = rows[1].split(",")
    assert int(first[0]) == dump.client_ids[0]
    np.testing.assert_array_equal(
        np.array([float(v) for v in first[2 : 2 + dump.embeddings.shape[1]]]),
        dump.embeddings[0],
    )


def test_no_eval_clients_is_a_config_error(tmp_path):
    cfg = experiment.validate_config({**TINY, "n_eval_clients": 0})
    with pytest.raises(ConfigError, match="eval"):
        experiment.run_config(cfg, tmp_path)


# ---- checkpoint restore ----


@pytest.mark.parametrize("method", baselines.METHODS)
def test_checkpoint_restores_exact_scores(method, tmp_path):
    cfg = experiment.validate_config({**TINY, "method": method, "rounds": 2})
    result = experiment.run_config(cfg, tmp_path)
    federation, gt = experiment.build_federation(cfg)
    sections = fedruntime.load_checkpoint(result["paths"]["checkpoint"])
    model = experiment.model_from_checkpoint(cfg, sections, 2)
    basis = fedruntime.build_train_basis(experiment.train_config(cfg), 2)
    again = evaluation.evaluate(model, basis, federation, gt)
    assert again.per_client == {int(c): a for c, a in result["report"]["eval"]["per_client"].items()}


def test_checkpoint_restores_lam(tmp_path):
    cfg = experiment.validate_config({**TINY, "lam": 0.37, "rounds": 1})
    result = experiment.run_config(cfg, tmp_path)
    sections = fedruntime.load_checkpoint(result["paths"]["checkpoint"])
    state = experiment.model_from_checkpoint(cfg, sections, 2)
    assert isinstance(state, LearnableState)
    assert state.lam == 0.37


def test_checkpoint_section_errors():
    cfg = experiment.validate_config(TINY)
    with pytest.raises(DataError, match="lacks"):
        experiment.model_from_checkpoint(cfg, {"theta": np.zeros(3)}, 2)
    state = fedruntime.init_state(experiment.train_config(cfg), 2)
    with pytest.raises(DataError, match="psi"):
        experiment.model_from_checkpoint(cfg, {"psi": np.zeros(state.flatten().size + 1)}, 2)


def test_checkpoint_stamp_mismatch_warns_but_loads(tmp_path, caplog):
    cfg = experiment.validate_config({**TINY, "rounds": 1})
    result = experiment.run_config(cfg, tmp_path)
    sections = fedruntime.load_checkpoint(result["paths"]["checkpoint"])
    other = experiment.validate_config({**TINY, "rounds": 2})
    with caplog.at_level("WARNING", logger="flowdup.experiment"):
        model = experiment.model_from_checkpoint(other, sections, 2)
    assert isinstance(model, LearnableState)
    assert any("different config" in r.message for r in caplog.records)


# ---- fresh-sample evaluation ----


def test_fresh_eval_disjoint_but_deterministic(tiny_run):
    cfg_path, _, result = tiny_run
    cfg = experiment.load_config(cfg_path)
    federation, gt = experiment.build_federation(cfg)
    model, _ = experiment.train_model(cfg, federation)
    basis = fedruntime.build_train_basis(experiment.train_config(cfg), 2)
    a = experiment.fresh_eval(model, basis, federation, gt, cfg)
    b = experiment.fresh_eval(model, basis, federation, gt, cfg)
    assert a.per_client == b.per_client
    assert a.per_client == {int(c): v for c, v in result["report"]["eval_fresh"]["per_client"].items()}


def test_fresh_eval_needs_a_generator(tmp_path):
    cfg = experiment.validate_config({**TINY, "eval_fresh_sample": True})
    federation, _ = experiment.build_federation(cfg)
    gt_csv = datagen.GroundTruth("csv", 0, mixture=None)
    with pytest.raises(ConfigError, match="generated"):
        experiment.fresh_eval(None, None, federation, gt_csv, cfg)


# ---- CSV-backed runs ----


def test_csv_source_run(tmp_path):
    gen_cfg = experiment.validate_config(TINY)
    spec = experiment.federation_spec(gen_cfg)
    federation, gt = datagen.gen_federation(spec)
    csv_path = tmp_path / "fed.csv"
    datagen.export_csv(csv_path, federation, gt, spec)
    cfg_path = write_cfg(tmp_path, method="fedavg", data_csv=str(csv_path), labeled_fraction=1.0, cohort_size=3)
    result = experiment.run_experiment(cfg_path, tmp_path / "out")
    assert len(result["report"]["eval"]["per_client"]) == 3


def test_csv_source_feature_width_checked(tmp_path):
    gen_cfg = experiment.validate_config(TINY)
    federation, gt = datagen.gen_federation(experiment.federation_spec(gen_cfg))
    csv_path = tmp_path / "fed.csv"
    datagen.export_csv(csv_path, federation, gt)
    cfg = experiment.validate_config({**TINY, "data_csv": str(csv_path), "input_dim": 3})
    with pytest.raises(DataError, match="feature columns"):
        experiment.build_federation(cfg)


# ---- sweeps ----


def test_sweep_over_label_budget_emits_three_reports(tmp_path):
    cfg_path = write_cfg(tmp_path, n_clients=10, m_per_client=12, rounds=1, cohort_size=2, batch_size=6)
    summary = experiment.run_sweep(cfg_path, {"p_labeled": [0.1, 0.2, 1.0]}, tmp_path / "sw")
    assert len(summary["cells"]) == 3
    for cell in summary["cells"]:
        assert (tmp_path / "sw" / cell["report"]).exists()
    names = [c["cell"] for c in summary["cells"]]
    assert names == ["p_labeled=0.1", "p_labeled=0.2", "p_labeled=1.0"]


def test_sweep_over_subspace_dim_emits_per_k_reports(tmp_path):
    # k may not exceed the client model's parameter count; [32] gives d = 360
    cfg_path = write_cfg(tmp_path, rounds=1, head_hidden=[], f_hidden=[32])
    summary = experiment.run_sweep(cfg_path, {"k": [16, 64, 256]}, tmp_path / "sw")
    assert [c["overrides"]["k"] for c in summary["cells"]] == [16, 64, 256]
    for cell in summary["cells"]:
        report = json.loads((tmp_path / "sw" / cell["report"]).read_text())
        assert report["eval"]["k"] == cell["overrides"]["k"]


def test_sweep_pools_seeds_per_setting(tmp_path):
    cfg_path = write_cfg(tmp_path, rounds=1)
    summary = experiment.run_sweep(cfg_path, {"seed": [0, 1], "k": [2, 4]}, tmp_path / "sw")
    assert len(summary["cells"]) == 4
    pooled = {tuple(g["overrides"].items()): g for g in summary["by_setting"]}
    assert set(pooled) == {(("k", 2),), (("k", 4),)}
    for key, group in pooled.items():
        k = dict(key)["k"]
        means = [c["mean"] for c in summary["cells"] if c["overrides"]["k"] == k]
        assert group["n_seeds"] == 2
        assert abs(group["mean"] - np.mean(means)) < 1e-15
        assert abs(group["std"] - np.std(means)) < 1e-15


def test_sweep_cell_matches_solo_run(tmp_path):
    """A sweep cell is the same experiment as a standalone run of that config."""
    cfg_path = write_cfg(tmp_path, rounds=2)
    summary = experiment.run_sweep(cfg_path, {"k": [5]}, tmp_path / "sw")
    (tmp_path / "solo").mkdir(exist_ok=True)
    solo_path = write_cfg(tmp_path / "solo", k=5, rounds=2)
    solo = experiment.run_experiment(solo_path, tmp_path / "solo_out")
    assert summary["cells"][0]["mean"] == solo["report"]["eval"]["mean"]


def test_grid_validation():
    for grid, pattern in [
        ({"khat": [1]}, "khat"),
        ({"k": []}, "non-empty"),
        ({"k": 4}, "non-empty"),
        ({"k": [[2, 3]]}, "scalars"),
        ({"schema_version": [1, 2]}, "schema_version"),
        ({}, "non-empty"),
    ]:
        with pytest.raises(ConfigError, match=pattern):
            experiment.validate_grid(grid)
