import math

import numpy as np
import pytest

from abspos.errors import InputError
from abspos.probe import (
    HiddenDump,
    ProbeConfig,
    cross_validate,
    layer_sweep,
    load_dump_dir,
    read_hidden_dump,
    standardize,
    stratified_folds,
    svm_predict,
    sweep_csv_bytes,
    train_linear_svm,
    write_hidden_dump,
)


def make_clusters(n_per=30, dim=16, spread=1.0, separation=20.0, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(9, dim)) * separation
    X = np.vstack([centers[i] + rng.normal(size=(n_per, dim)) * spread for i in range(9)])
    y = np.repeat(np.arange(9), n_per)
    return X, y


def make_dump(X, y, layer=0):
    ids = [f"s{i:05d}" for i in range(len(y))]
    return HiddenDump(layer, X.astype(np.float32), y, ids)


def test_standardize_hand_oracle():
    train = np.array([[1.0, 10.0], [3.0, 10.0], [5.0, 10.0], [7.0, 10.0]])
    out, _, stats = standardize(train)
    assert stats["mean"] == pytest.approx([4.0, 10.0])
    assert stats["std"][0] == pytest.approx(math.sqrt(5.0))
    # constant column passes through unchanged
    assert np.allclose(out[:, 1], 0.0)
    assert np.allclose(out[:, 0] * math.sqrt(5.0) + 4.0, train[:, 0])


def test_standardize_constant_column_unchanged():
    train = np.full((5, 3), 7.0)
    out, applied, _ = standardize(train, np.full((2, 3), 7.0))
    assert np.allclose(out, 0.0)
    assert np.allclose(applied, 0.0)


def test_standardize_idempotent_on_standardized_data():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 4))
    X = (X - X.mean(axis=0)) / X.std(axis=0)
    out, _, _ = standardize(X)
    assert np.abs(out - X).max() < 1e-9


def test_standardize_applies_train_stats_to_holdout():
    train = np.array([[0.0], [2.0]])
    _, applied, _ = standardize(train, np.array([[4.0]]))
    assert applied[0, 0] == pytest.approx(3.0)  # (4 - 1) / 1


def test_standardize_dim_mismatch():
    with pytest.raises(InputError):
        standardize(np.ones((3, 2)), np.ones((3, 3)))


def test_svm_separable_clusters_reach_full_train_accuracy():
    X, y = make_clusters()
    W, b = train_linear_svm(X, y, ProbeConfig())
    assert np.mean(svm_predict(W, b, X) == y) == 1.0


def test_svm_rejects_single_class():
    X = np.random.default_rng(0).normal(size=(20, 4))
    with pytest.raises(InputError):
        train_linear_svm(X, np.zeros(20, dtype=int), ProbeConfig())


def test_svm_deterministic():
    X, y = make_clusters(seed=3)
    W1, b1 = train_linear_svm(X, y, ProbeConfig(seed=5))
    W2, b2 = train_linear_svm(X, y, ProbeConfig(seed=5))
    assert np.array_equal(W1, W2) and np.array_equal(b1, b2)


def test_svm_duplicated_data_same_argmax_predictions():
    # the loss is an average, so duplicating every point keeps the decision
    X, y = make_clusters(n_per=12, seed=4)
    cfg = ProbeConfig(epochs=30)
    W1, b1 = train_linear_svm(X, y, cfg)
    W2, b2 = train_linear_svm(np.vstack([X, X]), np.concatenate([y, y]), cfg)
    probe = X + np.random.default_rng(8).normal(size=X.shape) * 0.5
    assert np.array_equal(svm_predict(W1, b1, probe), svm_predict(W2, b2, probe))


def test_stratified_folds_properties():
    y = np.repeat(np.arange(9), 10)
    folds = stratified_folds(y, 3, seed=0)
    all_idx = np.concatenate(folds)
    assert len(all_idx) == 90
    assert len(set(all_idx.tolist())) == 90  # disjoint cover
    for fold in folds:
        counts = np.bincount(y[fold], minlength=9)
        assert set(counts.tolist()) == {10 // 3 + 1} or set(counts.tolist()) <= {3, 4}


def test_stratified_folds_27_samples_even():
    y = np.repeat(np.arange(9), 3)
    folds = stratified_folds(y, 3, seed=0)
    assert [len(f) for f in folds] == [9, 9, 9]
    for fold in folds:
        assert np.bincount(y[fold], minlength=9).tolist() == [1] * 9


def test_stratified_folds_insufficient_support():
    y = np.repeat(np.arange(9), 2)
    with pytest.raises(InputError):
        stratified_folds(y, 3, seed=0)


def test_cross_validate_separable():
    X, y = make_clusters()
    res = cross_validate(make_dump(X, y), ProbeConfig())
    assert res["mean_accuracy"] >= 0.99
    assert len(res["per_fold"]) == 3


def test_cross_validate_deterministic():
    X, y = make_clusters(seed=2)
    a = cross_validate(make_dump(X, y), ProbeConfig(seed=7))
    b = cross_validate(make_dump(X, y), ProbeConfig(seed=7))
    assert a == b


def test_cross_validate_shuffled_labels_at_chance():
    X, y = make_clusters(n_per=50, seed=1)
    rng = np.random.default_rng(123)
    y_shuffled = y[rng.permutation(len(y))]
    res = cross_validate(make_dump(X, y_shuffled), ProbeConfig())
    p = 1 / 9
    sigma = math.sqrt(p * (1 - p) / len(y))
    assert abs(res["mean_accuracy"] - p) <= 3 * sigma


def test_prediction_invariant_to_global_feature_scale():
    X, y = make_clusters(seed=6)
    a = cross_validate(make_dump(X, y), ProbeConfig())
    b = cross_validate(make_dump(X * 37.5, y), ProbeConfig())
    assert a["per_fold"] == b["per_fold"]


def layered_dumps(n_per=60, dim=12, seed=0):
    """Noise in the first layer, separability growing through the stack."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(9, dim)) * 10
    y = np.repeat(np.arange(9), n_per)
    dumps = []
    signal_levels = [0.0, 0.05, 0.15, 0.4, 1.0, 1.0]
    for layer, signal in enumerate(signal_levels):
        noise = rng.normal(size=(len(y), dim))
        X = signal * centers[y] + noise
        dumps.append(make_dump(X, y, layer=layer))
    return dumps


def test_layer_sweep_one_hot_features_are_perfect():
    y = np.repeat(np.arange(9), 6)
    X = np.eye(9)[y]
    dumps = [make_dump(X, y, layer=i) for i in range(3)]
    rows = layer_sweep(dumps, ProbeConfig())
    assert [r["layer"] for r in rows] == [0, 1, 2]
    assert all(r["mean"] == 1.0 for r in rows)


def test_layer_sweep_noise_at_chance():
    rng = np.random.default_rng(5)
    y = np.repeat(np.arange(9), 40)
    X = rng.normal(size=(len(y), 8))
    rows = layer_sweep([make_dump(X, y)], ProbeConfig())
    sigma = math.sqrt((1 / 9) * (8 / 9) / len(y))
    assert abs(rows[0]["mean"] - 1 / 9) <= 3 * sigma


def test_layer_sweep_rises_then_saturates():
    rows = layer_sweep(layered_dumps(), ProbeConfig())
    means = [r["mean"] for r in rows]
    assert means[0] < 0.3  # noise layer sits near chance
    assert means[-1] >= 0.95
    for earlier, later in zip(means, means[1:]):
        assert later >= earlier - 0.02  # non-decreasing within noise
    assert abs(means[-1] - means[-2]) <= 0.02  # flat tail


def test_layer_sweep_groups_repeated_runs():
    X, y = make_clusters(n_per=12, seed=9)
    a = make_dump(X, y, layer=4)
    b = make_dump(X + 0.01, y, layer=4)
    rows = layer_sweep([a, b], ProbeConfig())
    assert len(rows) == 1
    assert rows[0]["runs"] == 2
    assert rows[0]["std"] >= 0.0


def test_sweep_csv_format():
    rows = [{"layer": 0, "mean": 0.5, "std": 0.0, "runs": 1}]
    assert sweep_csv_bytes(rows) == b"layer,mean,std\n0,0.500000,0.000000\n"


def test_hidden_dump_round_trip(tmp_path):
    X, y = make_clusters(n_per=3, dim=5, seed=11)
    dump = make_dump(X, y, layer=17)
    path = tmp_path / "layer17.hsd1"
    write_hidden_dump(dump, path)
    back = read_hidden_dump(path)
    assert back.layer_index == 17
    assert back.dim == 5
    assert np.array_equal(back.features, dump.features)
    assert np.array_equal(back.labels, dump.labels)
    assert back.sample_ids == dump.sample_ids


def test_hidden_dump_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.hsd1"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(InputError):
        read_hidden_dump(path)


def test_load_dump_dir_with_manifest(tmp_path):
    X, y = make_clusters(n_per=3, dim=4, seed=12)
    for layer in [0, 1]:
        write_hidden_dump(make_dump(X, y, layer=layer), tmp_path / f"layer{layer}.hsd1")
    (tmp_path / "manifest.json").write_text('{"files": ["layer0.hsd1", "layer1.hsd1"]}')
    dumps = load_dump_dir(tmp_path)
    assert [d.layer_index for d in dumps] == [0, 1]


def test_load_dump_dir_glob_fallback(tmp_path):
    X, y = make_clusters(n_per=3, dim=4, seed=13)
    write_hidden_dump(make_dump(X, y, layer=2), tmp_path / "layer2.hsd1")
    dumps = load_dump_dir(tmp_path)
    assert len(dumps) == 1


def test_load_dump_dir_empty(tmp_path):
    with pytest.raises(InputError):
        load_dump_dir(tmp_path)


def test_probe_config_validation():
    with pytest.raises(InputError):
        ProbeConfig(folds=1)
    with pytest.raises(InputError):
        ProbeConfig(c=0)
    with pytest.raises(InputError):
        ProbeConfig(epochs=0)
