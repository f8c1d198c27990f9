"""Generator tests.

Oracles: replayed rng streams for the raw-sample path, analytic rotated
moments for a 10k-sample client, binomial counts for partition frequency,
and a validation walk over the CSV error cases.
"""

import numpy as np
import pytest

from flowdup import datagen, rngs
from flowdup.datagen import Federation, FederationSpec
from flowdup.errors import ConfigError, DataError


def rot_spec(**kw):
    base = dict(n=4, m=16, n_eval=2, kind="rotated_clusters", seed=11)
    base.update(kw)
    return FederationSpec(**base)


# ---- spec validation ----


def test_spec_rejects_bad_fields():
    for kw in (
        dict(p=0.0),
        dict(p=1.5),
        dict(n=100, p=0.001),  # rounds to zero labeled
        dict(rotations=()),
        dict(classes_per_client=9),
        dict(n_classes=1),
        dict(sigma=0.0),
        dict(kind="bogus"),
        dict(kind="csv"),  # no path
    ):
        with pytest.raises(ConfigError):
            rot_spec(**kw).validate()


def test_rotated_requires_planar_features():
    with pytest.raises(ConfigError):
        datagen.gen_rotated_clusters(rot_spec(input_dim=3))


# ---- rotated clusters ----


def test_zero_rotation_client_is_raw_samples():
    spec = rot_spec(rotations=(0.0,), n=2, n_eval=0)
    fed, gt = datagen.gen_rotated_clusters(spec)
    mix = datagen.default_mixture(spec.n_classes, spec.sigma)
    rng = rngs.stream(spec.seed, rngs.DATA, 0)
    rng.integers(0, 1)  # the rotation draw
    ids = rng.choice(spec.n_classes, size=spec.m, p=mix.weights)
    x = mix.means[ids] + spec.sigma * rng.standard_normal((spec.m, 2))
    assert np.array_equal(fed.clients[0].X, x)
    assert np.array_equal(fed.clients[0].Y, ids)
    assert gt.client_params[0] == 0.0


def test_full_turn_equals_identity():
    assert np.array_equal(datagen.rotation_matrix(360.0), np.eye(2))
    a, _ = datagen.gen_rotated_clusters(rot_spec(rotations=(0.0,)))
    b, _ = datagen.gen_rotated_clusters(rot_spec(rotations=(360.0,)))
    for ca, cb in zip(a.clients, b.clients):
        assert np.array_equal(ca.X, cb.X)
        assert np.array_equal(ca.Y, cb.Y)


def test_quarter_turn_matrices_are_exact():
    assert np.array_equal(datagen.rotation_matrix(90.0), np.array([[0.0, -1.0], [1.0, 0.0]]))
    assert np.array_equal(datagen.rotation_matrix(180.0), -np.eye(2))


def test_empirical_cluster_means_match_rotated_analytic():
    spec = rot_spec(n=1, n_eval=0, m=10000, seed=7)
    fed, gt = datagen.gen_rotated_clusters(spec)
    ds = fed.clients[0]
    rot = datagen.rotation_matrix(gt.client_params[0])
    mix = gt.mixture
    for j in range(spec.n_classes):
        rows = ds.X[ds.Y == j]
        want = rot @ mix.means[j]
        tol = 3 * spec.sigma / np.sqrt(len(rows))
        assert np.all(np.abs(rows.mean(axis=0) - want) < tol)


def test_coupling_off_labels_follow_fixed_rule():
    fed, gt = datagen.gen_rotated_clusters(rot_spec(coupling=False, rotations=(90.0,)))
    for ds in fed.clients:
        assert np.array_equal(ds.Y, datagen.bayes_rule(gt.mixture, ds.X))


def test_rotation_tags_recorded_per_client():
    fed, gt = datagen.gen_rotated_clusters(rot_spec(n=8, n_eval=4, seed=3))
    for cid in range(12):
        assert gt.tags[cid] == f"rot{gt.client_params[cid]:g}"
        assert gt.client_params[cid] in (0.0, 90.0, 180.0, 270.0)


# ---- class partition ----


def test_partition_single_class_clients():
    spec = FederationSpec(n=6, m=20, n_eval=0, kind="class_partition", classes_per_client=1, seed=5)
    fed, gt = datagen.gen_class_partition(spec)
    for ds in fed.clients:
        assert len(np.unique(ds.Y)) == 1
        assert tuple(np.unique(ds.Y)) == gt.client_params[ds.id]


def test_partition_full_subset_is_iid():
    spec = FederationSpec(n=3, m=4000, n_eval=0, kind="class_partition", classes_per_client=8, seed=6)
    fed, _ = datagen.gen_class_partition(spec)
    for ds in fed.clients:
        counts = np.bincount(ds.Y, minlength=8)
        # uniform within-subset draws: binomial(4000, 1/8)
        sigma = np.sqrt(4000 * (1 / 8) * (7 / 8))
        assert np.all(np.abs(counts - 500) < 3 * sigma)


def test_partition_class_frequency_uniform_over_clients():
    spec = FederationSpec(n=400, m=2, n_eval=0, kind="class_partition", classes_per_client=2, seed=8)
    _, gt = datagen.gen_class_partition(spec)
    counts = np.zeros(8)
    for cid in range(400):
        for c in gt.client_params[cid]:
            counts[c] += 1
    p = 2 / 8
    sigma = np.sqrt(400 * p * (1 - p))
    assert np.all(np.abs(counts - 400 * p) < 3 * sigma)


# ---- label assignment ----


def test_assign_labels_counts_and_determinism():
    fed, _ = datagen.gen_rotated_clusters(rot_spec(n=200, n_eval=0))
    out = datagen.assign_labels(fed, 0.1, seed=4)
    labeled = [c.id for c in out.clients if c.labeled]
    assert len(labeled) == 20
    again = datagen.assign_labels(fed, 0.1, seed=4)
    assert labeled == [c.id for c in again.clients if c.labeled]
    other = datagen.assign_labels(fed, 0.1, seed=5)
    assert labeled != [c.id for c in other.clients if c.labeled]
    for c in out.clients:
        if not c.labeled:
            assert c.Y is None


def test_assign_labels_full_and_degenerate():
    fed, _ = datagen.gen_rotated_clusters(rot_spec(n=5, n_eval=0))
    assert all(c.labeled for c in datagen.assign_labels(fed, 1.0, 0).clients)
    with pytest.raises(ConfigError):
        datagen.assign_labels(fed, 0.01, 0)
    with pytest.raises(ConfigError):
        datagen.assign_labels(fed, 0.0, 0)


# ---- purity / structure ----


def test_generation_is_pure_per_seed():
    spec = rot_spec(n=6, n_eval=3, p=0.5)
    a, gta = datagen.gen_federation(spec)
    b, gtb = datagen.gen_federation(spec)
    for ca, cb in zip(a.clients + a.eval_clients, b.clients + b.eval_clients):
        assert ca.X.tobytes() == cb.X.tobytes()
        assert (ca.Y is None) == (cb.Y is None)
        if ca.Y is not None:
            assert np.array_equal(ca.Y, cb.Y)
    for cid in gta.eval_labels:
        assert np.array_equal(gta.eval_labels[cid], gtb.eval_labels[cid])


def test_train_and_eval_ids_disjoint():
    fed, _ = datagen.gen_federation(rot_spec(n=6, n_eval=3))
    train_ids = {c.id for c in fed.clients}
    eval_ids = {c.id for c in fed.eval_clients}
    assert not train_ids & eval_ids


def test_trainer_facing_objects_expose_no_hidden_labels():
    fed, _ = datagen.gen_federation(rot_spec(n=6, n_eval=3, p=0.5, seed=1))
    assert set(vars(fed)) == {"clients", "eval_clients"}
    unlabeled = [c for c in fed.clients if not c.labeled] + fed.eval_clients
    assert unlabeled
    for ds in unlabeled:
        assert ds.Y is None
        for name, value in vars(ds).items():
            if isinstance(value, np.ndarray):
                assert name == "X", f"unexpected array field {name}"


# ---- bayes ceiling / fresh draws ----


def test_bayes_ceiling_high_under_coupling():
    spec = rot_spec(n=1, n_eval=1, m=50)
    _, gt = datagen.gen_rotated_clusters(spec)
    for cid in (0, 1):
        assert datagen.bayes_accuracy(gt, cid, m=20000, seed=1) > 0.95


def test_bayes_rule_perfect_when_labels_are_the_rule():
    fed, gt = datagen.gen_rotated_clusters(rot_spec(coupling=False))
    ds = fed.clients[0]
    assert np.array_equal(datagen.bayes_predict(gt, ds.id, ds.X), ds.Y)


def test_fresh_sample_differs_from_generation_draw():
    spec = rot_spec(n=1, n_eval=0)
    fed, gt = datagen.gen_rotated_clusters(spec)
    x, y = datagen.fresh_sample(gt, 0, spec.m, seed=spec.seed)
    assert x.shape == fed.clients[0].X.shape
    assert not np.array_equal(x, fed.clients[0].X)
    x2, y2 = datagen.fresh_sample(gt, 0, spec.m, seed=spec.seed)
    assert np.array_equal(x, x2) and np.array_equal(y, y2)


def test_fresh_sample_unknown_client():
    _, gt = datagen.gen_rotated_clusters(rot_spec(n=1, n_eval=0))
    with pytest.raises(DataError):
        datagen.fresh_sample(gt, 99, 10, 0)


# ---- csv ----


FIXTURE = """client_id,split,label,f0,f1
0,train,1,0.5,-1.0
0,train,0,0.25,2.0
1,test,,1.5,0.125
1,test,,-0.5,0.0
"""


def test_load_two_client_fixture(tmp_path):
    path = tmp_path / "fed.csv"
    path.write_text(FIXTURE)
    fed, gt = datagen.load_csv(path)
    assert len(fed.clients) == 1 and len(fed.eval_clients) == 1
    assert fed.clients[0].m == 2 and fed.eval_clients[0].m == 2
    assert np.array_equal(fed.clients[0].Y, [1, 0])
    assert np.array_equal(fed.clients[0].X, [[0.5, -1.0], [0.25, 2.0]])
    assert fed.eval_clients[0].Y is None
    assert gt.eval_labels == {}


def test_labeled_test_rows_route_to_ground_truth(tmp_path):
    path = tmp_path / "fed.csv"
    path.write_text(FIXTURE.replace("1,test,,", "1,test,3,"))
    fed, gt = datagen.load_csv(path)
    assert fed.eval_clients[0].Y is None
    assert np.array_equal(gt.eval_labels[1], [3, 3])


def test_round_trip_is_value_identical(tmp_path):
    spec = rot_spec(n=4, n_eval=2, p=0.5, m=8)
    fed, gt = datagen.gen_federation(spec)
    path = tmp_path / "out.csv"
    datagen.export_csv(path, fed, gt, spec)
    loaded, lgt = datagen.load_csv(path)
    assert [c.id for c in loaded.clients] == [c.id for c in fed.clients]
    for a, b in zip(fed.clients + fed.eval_clients, loaded.clients + loaded.eval_clients):
        assert a.X.tobytes() == b.X.tobytes()  # repr round-trips doubles
        assert (a.Y is None) == (b.Y is None)
        if a.Y is not None:
            assert np.array_equal(a.Y, b.Y)
    for cid, labels in gt.eval_labels.items():
        assert np.array_equal(lgt.eval_labels[cid], labels)
    sidecar = (tmp_path / "out.csv.json").read_text()
    assert '"seed": 11' in sidecar and '"kind": "rotated_clusters"' in sidecar


def test_csv_error_cases(tmp_path):
    def load(text):
        path = tmp_path / "bad.csv"
        path.write_text(text)
        return datagen.load_csv(path)

    with pytest.raises(DataError, match=":3:"):
        load("client_id,split,label,f0,f1\n0,train,1,0.5,-1.0\n0,train,1,0.5\n")
    with pytest.raises(DataError, match="unknown split"):
        load("client_id,split,label,f0\n0,val,1,0.5\n")
    with pytest.raises(DataError, match="mixes labeled"):
        load("client_id,split,label,f0\n0,train,1,0.5\n0,train,,0.25\n")
    with pytest.raises(DataError, match="both splits"):
        load("client_id,split,label,f0\n0,train,1,0.5\n0,test,1,0.25\n")
    with pytest.raises(DataError, match="header"):
        load("id,split,label,f0\n0,train,1,0.5\n")
    with pytest.raises(DataError, match="feature columns"):
        load("client_id,split,label\n0,train,1\n")
    with pytest.raises(DataError):
        datagen.load_csv(tmp_path / "missing.csv")
    path = tmp_path / "dim.csv"
    path.write_text("client_id,split,label,f0\n0,train,1,0.5\n0,train,0,0.25\n")
    with pytest.raises(DataError, match="expected 2 feature"):
        datagen.load_csv(path, schema={"n_features": 2})
