import numpy as np
import pytest

from pidectrl.accelerator import FeatureExtractor, MlpAccelerator
from pidectrl.controller import MarginalTargetsCost, PscSession, plan_from_params
from pidectrl.grid import DomainSpec, gaussian_density
from pidectrl.solver import StepConfig
from pidectrl.training import (Dataset, bit_accuracy, collect_samples, exact_match,
                               fit_lm, merge_datasets, predict_bits, train,
                               zscore_stats)

from conftest import toggle_params


def _random_dataset(seed, B=300, n_bits=2, n_feat=7):
    rng = np.random.default_rng(seed)
    return Dataset(rng.normal(size=(B, n_feat)), rng.integers(0, 2, (B, n_bits)),
                   np.zeros(B, dtype=np.int64), np.arange(B))


def test_collect_samples_one_per_window():
    dom = DomainSpec((300.0, 300.0), (64, 64))
    params = toggle_params()
    plan = plan_from_params(params, dom, [0, 1], 0.01, 5, 6)
    sess = PscSession(dom, params, StepConfig(dt=0.005), plan,
                      MarginalTargetsCost((44.0, 44.0)))
    extractor = FeatureExtractor(dom, (44.0, 44.0), n_inputs=2)
    ic = gaussian_density(dom, (90.0, 30.0), (20.0, 15.0))
    ds, trace, final = collect_samples(ic, sess, extractor, run_id=7)
    assert len(ds) == trace.n_windows == 6
    assert ds.labels.tolist() == [list(w.chosen_bits) for w in trace.windows]
    assert set(ds.run_ids.tolist()) == {7}
    hist = ds.label_histogram()
    assert set(hist) == {(0, 0), (0, 1), (1, 0), (1, 1)}
    assert sum(hist.values()) == 6


def test_dataset_csv_roundtrip(tmp_path):
    ds = _random_dataset(0)
    path = tmp_path / "ds.csv"
    ds.feature_names = [f"f{i}" for i in range(7)]
    ds.save_csv(path)
    back = Dataset.load_csv(path, n_bits=2)
    assert np.allclose(back.features, ds.features)
    assert np.array_equal(back.labels, ds.labels)
    assert np.array_equal(back.run_ids, ds.run_ids)
    merged = merge_datasets([ds, back])
    assert len(merged) == 2 * len(ds)


def test_zscore_stats_hygiene():
    rng = np.random.default_rng(1)
    X = rng.normal(loc=5.0, scale=3.0, size=(400, 6))
    mean, std = zscore_stats(X)
    Z = (X - mean) / std
    assert np.abs(Z.mean(axis=0)).max() < 1e-6
    assert np.abs(Z.var(axis=0) - 1.0).max() < 1e-3


def test_zscore_constant_feature_warns():
    X = np.ones((50, 3))
    X[:, 1] = np.arange(50)
    with pytest.warns(UserWarning, match="constant feature"):
        mean, std = zscore_stats(X)
    assert std[0] == 1.0 and std[2] == 1.0
    assert std[1] > 1.0


def test_metrics_definitions():
    pred = np.array([[1, 0], [1, 1], [0, 0]])
    truth = np.array([[1, 0], [1, 0], [1, 1]])
    assert exact_match(pred, truth) == pytest.approx(1 / 3)
    assert bit_accuracy(pred, truth) == pytest.approx(3 / 6)


def test_bit_accuracy_dominates_exact_match():
    rng = np.random.default_rng(3)
    for _ in range(30):
        pred = rng.integers(0, 2, (40, 3))
        truth = rng.integers(0, 2, (40, 3))
        assert bit_accuracy(pred, truth) >= exact_match(pred, truth)


def test_separable_toy_training():
    rng = np.random.default_rng(7)
    B = 800
    X = np.zeros((B, 5))
    X[:, 0] = rng.integers(0, 2, B)
    X[:, 1] = rng.uniform(0, 300, B)
    X[:, 2] = rng.uniform(0, 0.02, B)
    X[:, 3] = rng.uniform(0, 100, B)
    X[:, 4] = rng.uniform(0, 5, B)
    Y = (X[:, 3] > 50).astype(np.int64)[:, None]
    ds = Dataset(X, Y, np.zeros(B, dtype=np.int64), np.arange(B))
    with pytest.warns(UserWarning, match="below 10x"):
        net, report = train(ds, folds=5, seed=3, max_iter=100)
    assert report.holdout_exact_match >= 0.99
    assert report.holdout_bit_accuracy >= report.holdout_exact_match
    assert len(report.fold_exact_match) == 5
    text = report.to_text()
    assert "hold-out" in text and "fold 5" in text


def test_train_is_seed_deterministic():
    ds = _random_dataset(5, B=200)
    net1, rep1 = train(ds, folds=3, seed=11, max_iter=15)
    net2, rep2 = train(ds, folds=3, seed=11, max_iter=15)
    assert all(np.array_equal(a, b) for a, b in zip(net1.weights, net2.weights))
    assert rep1.holdout_bit_accuracy == rep2.holdout_bit_accuracy


def test_fit_lm_handles_degenerate_inputs():
    # constant features produce rank-deficient Jacobians; damping must cope
    X = np.ones((60, 4))
    Y = np.tile([1.0, 0.0], (60, 1))
    net = MlpAccelerator.initialize(4, 2, hidden=(3, 2), seed=0)
    with pytest.warns(UserWarning, match="constant feature"):
        net.mean, net.std = zscore_stats(X)
    res = fit_lm(net, X, Y, max_iter=50)
    assert np.isfinite(res.loss)
    pred = predict_bits(net, X)
    assert exact_match(pred, Y.astype(np.int64)) == 1.0


def test_predict_bits_rounding():
    net = MlpAccelerator.initialize(2, 2, seed=0)
    for w in net.weights:
        w[...] = 0.0
    net.biases[-1][...] = [0.5, 0.49]
    assert predict_bits(net, np.zeros((1, 2))).tolist() == [[1, 0]]
