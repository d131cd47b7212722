import logging

import numpy as np
import pytest

from gridstate.ensemble import (EnsembleConfig, EnsembleModel, SplitSpec,
                                base_predictions, estimate, estimate_batch,
                                evaluate, fit_meta, load_ensemble,
                                save_ensemble, state_metrics, train_ensemble)
from gridstate.errors import ConfigError, MaskedMeasurementError
from gridstate.measurement import MeasurementVector
from gridstate.neural import INPUT_SCALE, ResNetDNetwork, StateEstimator, TrainingConfig


def linear_estimator(A, c, n_buses):
    """Hand-built estimator computing exactly A z + c.

    Uses one block with a dead hidden path, an identity projection shifted
    far into the ReLU's linear region, and a compensating head.
    """
    out_w, in_w = A.shape
    net = ResNetDNetwork(in_w, out_w, 1)
    shift = 10.0
    net.params[4] = np.eye(in_w)                  # projection weight
    net.params[5] = np.full(in_w, shift)          # keeps preactivations > 0
    net.params[6] = INPUT_SCALE * A               # head weight
    net.params[7] = c - INPUT_SCALE * A @ np.full(in_w, shift)
    return StateEstimator(net, np.zeros(in_w), np.full(in_w, INPUT_SCALE),
                          0.0, n_buses)


@pytest.fixture()
def exact_pair(rng):
    # learner 0 computes the target map exactly; learner 1 is a decoy
    n_buses, m, rows = 2, 10, 50
    A = 0.001 * rng.standard_normal((4, m))
    B = 0.001 * rng.standard_normal((4, m))
    c = np.array([2.0, 2.0, 0.0, 0.0])
    d = np.array([1.0, 1.0, 0.1, 0.1])
    z = 50.0 * rng.standard_normal((rows, m))
    targets = z @ A.T + c
    learners = (linear_estimator(A, c, n_buses), linear_estimator(B, d, n_buses))
    return learners, z, targets, n_buses


def test_linear_estimator_construction_is_exact(exact_pair):
    learners, z, targets, _ = exact_pair
    assert np.max(np.abs(learners[0].predict(z) - targets)) < 1e-9


def test_meta_reproduces_an_exact_base_learner(exact_pair):
    learners, z, targets, n_buses = exact_pair
    features = base_predictions(learners, z)
    meta, fallback = fit_meta(features, targets)
    assert not fallback
    assert meta.shape == (4, 2 * 4 + 1)
    pred = features @ meta[:, 1:].T + meta[:, 0]
    assert np.max(np.abs(pred - targets)) < 1e-8


def test_estimate_uses_the_meta_combination(exact_pair):
    learners, z, targets, n_buses = exact_pair
    features = base_predictions(learners, z)
    meta, _ = fit_meta(features, targets)
    split = SplitSpec.make(z.shape[0], 0)
    model = EnsembleModel(learners, meta, split, n_buses)
    st = estimate(model, z[0])
    assert np.allclose(np.concatenate([st.v, st.theta]), targets[0], atol=1e-7)
    batch = estimate_batch(model, z[:5])
    assert np.allclose(batch, targets[:5], atol=1e-7)
    with pytest.raises(ValueError, match="width"):
        estimate(model, z[0][:-1])


def test_estimate_rejects_masked_channels(exact_pair):
    learners, z, targets, n_buses = exact_pair
    meta, _ = fit_meta(base_predictions(learners, z), targets)
    model = EnsembleModel(learners, meta, SplitSpec.make(50, 0), n_buses)
    mask = np.ones(z.shape[1], dtype=bool)
    mask[2] = False
    with pytest.raises(MaskedMeasurementError, match="pseudo-measurement"):
        estimate(model, MeasurementVector(0, z[0], mask))


def test_meta_never_loses_to_the_uniform_average(rng):
    # full-rank random features: straight OLS span argument
    for trial in range(5):
        features = rng.standard_normal((60, 8))
        targets = rng.standard_normal((60, 4))
        meta, fallback = fit_meta(features, targets)
        assert not fallback
        pred = features @ meta[:, 1:].T + meta[:, 0]
        avg = features.reshape(60, 2, 4).mean(axis=1)
        assert ((pred - targets) ** 2).sum() <= ((avg - targets) ** 2).sum() + 1e-12


def test_rank_deficient_features_fall_back_to_ridge(rng, caplog):
    block = rng.standard_normal((40, 4))
    features = np.hstack([block, block])          # duplicated learner
    targets = block + 0.01 * rng.standard_normal(block.shape)
    with caplog.at_level(logging.WARNING, logger="gridstate.ensemble"):
        meta, fallback = fit_meta(features, targets)
    assert fallback
    assert any("rank deficient" in r.message for r in caplog.records)
    # the guard keeps the fallback at least as good as plain averaging
    pred = features @ meta[:, 1:].T + meta[:, 0]
    avg = features.reshape(40, 2, 4).mean(axis=1)
    assert ((pred - targets) ** 2).sum() <= ((avg - targets) ** 2).sum() + 1e-12


def test_ridge_fallback_prefers_a_winning_average(rng, caplog):
    # targets equal the block average exactly, so averaging is unbeatable
    block = rng.standard_normal((40, 4))
    features = np.hstack([block, block])
    with caplog.at_level(logging.INFO, logger="gridstate.ensemble"):
        meta, fallback = fit_meta(features, block)
    assert fallback
    assert any("using the average" in r.message for r in caplog.records)
    expected = np.zeros((4, 9))
    expected[:, 1:5] = np.eye(4) / 2
    expected[:, 5:9] = np.eye(4) / 2
    assert np.array_equal(meta, expected)


def test_constant_feature_columns_get_zero_coefficients(rng):
    features = rng.standard_normal((30, 6))
    features[:, 2] = 5.0
    targets = rng.standard_normal((30, 3))
    meta, fallback = fit_meta(features, targets)
    assert not fallback
    assert np.all(meta[:, 3] == 0.0)              # column 2 plus intercept offset


def test_split_fractions_partition_and_determinism():
    split = SplitSpec.make(100, 7)
    assert split.base_train.size == 40
    assert split.meta_train.size == 36
    assert split.test.size == 24
    merged = np.sort(np.concatenate([split.base_train, split.meta_train,
                                     split.test]))
    assert np.array_equal(merged, np.arange(100))
    again = SplitSpec.make(100, 7)
    assert np.array_equal(split.base_train, again.base_train)
    assert not np.array_equal(split.base_train, SplitSpec.make(100, 8).base_train)


def test_split_validation():
    with pytest.raises(ValueError, match="at least 3"):
        SplitSpec.make(2, 0)
    with pytest.raises(ValueError, match="overlap"):
        SplitSpec(np.array([0, 1]), np.array([1]), np.array([2]), 0)
    with pytest.raises(ValueError, match="cover"):
        SplitSpec(np.array([0]), np.array([1]), np.array([4]), 0)


def _toy_problem(seed, rows=90, m=6, n_buses=2):
    g = np.random.default_rng(seed)
    states = np.hstack([1.0 + 0.05 * g.standard_normal((rows, n_buses)),
                        -0.2 * g.random((rows, n_buses))])
    mix = g.standard_normal((m, 2 * n_buses))
    meas = states @ mix.T + 0.002 * g.standard_normal((rows, m))
    return meas, states


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_trained_ensemble_meta_dominates_in_sample(seed):
    meas, states = _toy_problem(seed)
    config = EnsembleConfig(2, TrainingConfig(epochs=2, batch_size=16), seed)
    model = train_ensemble(meas, states, 2, config)
    rows = model.split.meta_train
    features = base_predictions(model, meas[rows])
    pred = features @ model.meta[:, 1:].T + model.meta[:, 0]
    avg = features.reshape(rows.size, 2, 4).mean(axis=1)
    sse_meta = ((pred - states[rows]) ** 2).sum()
    sse_avg = ((avg - states[rows]) ** 2).sum()
    assert sse_meta <= sse_avg * (1.0 + 1e-9) + 1e-12


def test_base_learners_differ_only_by_seed():
    meas, states = _toy_problem(3)
    model = train_ensemble(meas, states, 2,
                           EnsembleConfig(2, TrainingConfig(epochs=1), 3))
    p0 = model.base_learners[0].network.params
    p1 = model.base_learners[1].network.params
    assert any(not np.array_equal(a, b) for a, b in zip(p0, p1))


def test_train_ensemble_requires_enough_meta_rows():
    meas, states = _toy_problem(0, rows=20)
    with pytest.raises(ConfigError, match="meta-learner needs"):
        train_ensemble(meas, states, 2,
                       EnsembleConfig(6, TrainingConfig(epochs=1), 0))


def test_save_load_round_trip_is_bitwise(tmp_path, exact_pair):
    learners, z, targets, n_buses = exact_pair
    meta, fallback = fit_meta(base_predictions(learners, z), targets)
    model = EnsembleModel(learners, meta, SplitSpec.make(50, 5), n_buses,
                          fallback)
    save_ensemble(model, tmp_path / "model")
    again = load_ensemble(tmp_path / "model")
    assert np.array_equal(model.meta, again.meta)
    assert again.ridge_fallback == model.ridge_fallback
    assert np.array_equal(model.split.test, again.split.test)
    for a, b in zip(model.base_learners, again.base_learners):
        for pa, pb in zip(a.network.params, b.network.params):
            assert np.array_equal(pa, pb)
    assert np.array_equal(estimate_batch(model, z), estimate_batch(again, z))


def test_state_metrics_arithmetic():
    pred = np.array([[1.01, 0.99, 0.1, -0.1]])
    act = np.array([[1.00, 1.00, 0.0, 0.0]])
    m = state_metrics(pred, act, 2)
    assert m.v_rmse_pct == pytest.approx(1.0)
    assert m.v_mae_pct == pytest.approx(1.0)
    assert m.theta_rmse_deg == pytest.approx(np.degrees(0.1))
    assert m.theta_mae_deg == pytest.approx(np.degrees(0.1))


def test_evaluate_reports_ensemble_and_per_learner(exact_pair):
    learners, z, targets, n_buses = exact_pair
    meta, _ = fit_meta(base_predictions(learners, z), targets)
    model = EnsembleModel(learners, meta, SplitSpec.make(50, 0), n_buses)
    report = evaluate(model, z, targets)
    assert len(report.per_learner) == 2
    assert report.ensemble.v_rmse_pct < 1e-6     # exact meta on exact data
    assert report.per_learner[0].v_rmse_pct < 1e-6
    assert report.per_learner[1].v_rmse_pct > report.ensemble.v_rmse_pct
    with pytest.raises(ValueError, match="nonempty"):
        evaluate(model, z[:0], targets[:0])
