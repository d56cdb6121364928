from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.linear_model import LogisticRegression

from core import nls
from core.autodiff import LossBatch, LossKind, Objective, build_specs, forward, init_weights
from core.baselines import fit_ols, fit_ols_coefficients, predict_ols
from core.data import Dataset, column_statistics, gen_linear, gen_sin
from core.training import make_loss_batch, run_training, training_split
from infrastructure.errors import ConfigurationError, InputError
from models.schemas import NlsConfig, StopReason
from tests.conftest import constant_model, linear_theta_model


def _untrained(d=3, hidden=(6, 5), seed=0):
    rng = np.random.default_rng(seed)
    return nls.NlsModel(
        weights=init_weights(build_specs(d, list(hidden), d), seed),
        intercept=0.7,
        feature_means=rng.normal(size=d),
        feature_stds=rng.uniform(0.5, 3.0, size=d),
        config=NlsConfig(),
        feature_names=tuple(f"x{i}" for i in range(d)),
    )


def test_constant_coefficients_predict_by_hand():
    model = constant_model(1.0, [2.0])
    assert nls.predict(model, [3.0]) == pytest.approx(7.0)
    assert nls.predict(model, [0.0]) == pytest.approx(1.0)
    np.testing.assert_allclose(nls.theta(model, [5.0]), [1.0, 2.0])


def test_collapsed_network_returns_bias_everywhere():
    model = constant_model(0.0, [0.5, -1.5])
    xs = np.random.default_rng(1).normal(size=(20, 2)) * 10
    coefficients = nls.theta_batch(model, xs)
    np.testing.assert_allclose(coefficients[:, 1:], np.tile([0.5, -1.5], (20, 1)))


def test_same_instance_twice_gives_identical_theta():
    model = _untrained()
    x = [0.3, -1.2, 2.0]
    assert np.array_equal(nls.theta(model, x), nls.theta(model, x))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 5000))
def test_prediction_is_the_local_linear_combination(seed):
    model = _untrained(seed=seed)
    xs = np.random.default_rng(seed).normal(size=(40, 3)) * 4
    coefficients = nls.theta_batch(model, xs)
    by_hand = coefficients[:, 0] + np.sum(coefficients[:, 1:] * xs, axis=1)
    np.testing.assert_allclose(nls.predict_batch(model, xs), by_hand, rtol=1e-10, atol=1e-10)


def test_wrong_width_is_an_input_error():
    with pytest.raises(InputError):
        nls.theta(_untrained(), [1.0, 2.0])


def test_penalized_loss_parts():
    model = constant_model(1.0, [2.0])
    data = Dataset(features=np.array([[0.0], [1.0], [2.0]]), target=np.array([1.0, 3.0, 6.0]), feature_names=("x1",))
    total, mse, penalty = nls.penalized_loss(model, data, penalty=10.0)
    assert penalty == 0.0
    assert mse == pytest.approx(1.0 / 3.0)
    assert total == mse

    model = _untrained(d=1, hidden=(4,))
    total, mse, penalty = nls.penalized_loss(model, data, penalty=0.0)
    assert total == mse
    assert penalty > 0
    total, mse, penalty_part = nls.penalized_loss(model, data, penalty=2.0)
    assert total == pytest.approx(mse + 2.0 * penalty_part)


@pytest.mark.parametrize("a", [0.5, -2.0, 3.0])
def test_penalty_of_linear_coefficients_is_slope_squared(a):
    x = np.linspace(-3, 3, 13)[:, None]
    data = Dataset(features=x, target=np.sin(x[:, 0]), feature_names=("x",))
    total, mse, penalty_part = nls.penalized_loss(linear_theta_model(a), data, penalty=1.0)
    assert abs(penalty_part - a ** 2) <= 1e-12
    assert total == pytest.approx(mse + a ** 2, rel=1e-12)


def test_fit_records_trace_and_is_reproducible(small_config):
    data = gen_sin(200, seed=0)
    model_a, trace = nls.fit(small_config, data)
    model_b, _ = nls.fit(small_config, data)
    assert trace.epochs <= small_config.max_epochs
    assert len(trace.validation_loss) == trace.epochs + 1
    assert trace.validation_loss[trace.best_epoch] == min(trace.validation_loss)
    assert trace.stop_reason in (StopReason.PATIENCE, StopReason.MAX_EPOCHS)
    for a, b in zip(model_a.weights.parameters(), model_b.weights.parameters()):
        assert np.array_equal(a, b)
    assert model_a.intercept == model_b.intercept


def test_fit_learns_a_constant_target(small_config):
    x = np.linspace(-2, 2, 100)[:, None]
    data = Dataset(features=x, target=np.full(100, 3.0), feature_names=("x",))
    model, _ = nls.fit(small_config.with_changes(max_epochs=500, patience=100), data)
    assert np.max(np.abs(nls.predict_batch(model, x) - 3.0)) < 0.01


def test_fit_rejects_tiny_datasets(small_config):
    with pytest.raises(InputError):
        nls.fit(small_config, gen_sin(10))


def test_analytic_limit_is_ordinary_least_squares(small_config):
    data = gen_linear(300, d=3, noise=0.5, seed=2)
    model, trace = nls.fit(small_config.with_changes(penalty=1e8), data)
    assert trace.stop_reason is StopReason.ANALYTIC_LIMIT

    grid = np.random.default_rng(0).uniform(-2, 2, size=(50, 3))
    coefficients = nls.theta_batch(model, grid)
    assert np.ptp(coefficients, axis=0).max() < 1e-3
    fit_rows, _ = training_split(data.n, small_config)
    ols = fit_ols(data.subset(fit_rows))
    rmse = np.sqrt(np.mean((nls.predict_batch(model, grid) - predict_ols(ols, grid)) ** 2))
    assert rmse < 1e-2
    assert np.max(nls.squared_jacobian_norms(model.weights, grid)) == 0.0


def test_large_penalty_training_reaches_least_squares():
    data = gen_linear(300, d=3, noise=0.5, seed=1)
    config = NlsConfig(hidden_layers=[8], penalty=1e6, batch_size=32, max_epochs=400, patience=30,
                       lr_reduce_patience=5, seed=0)
    model, trace = nls.fit(config, data)
    assert trace.stop_reason is not StopReason.ANALYTIC_LIMIT

    fit_rows, _ = training_split(data.n, config)
    ols = fit_ols(data.subset(fit_rows))
    grid = np.random.default_rng(0).uniform(-2, 2, size=(100, 3))
    assert np.ptp(nls.theta_batch(model, grid), axis=0).max() < 1e-3
    rmse = np.sqrt(np.mean((nls.predict_batch(model, grid) - predict_ols(ols, grid)) ** 2))
    assert rmse < 1e-2


def test_linear_terms_of_a_flat_network_are_least_squares():
    data = gen_linear(120, d=2, noise=0.3, seed=3)
    means, stds = column_statistics(data.features)
    batch = make_loss_batch(data.features, data.target, means, stds)
    flat = constant_model(5.0, [-4.0, 9.0]).weights
    weights, intercept = nls.solve_linear_terms(flat, batch)
    expected = fit_ols_coefficients(data.features, data.target)
    assert intercept == pytest.approx(expected[0], rel=1e-9, abs=1e-9)
    np.testing.assert_allclose(weights.layers[-1].bias / stds, expected[1:], rtol=1e-9, atol=1e-9)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 1000))
def test_solved_linear_terms_minimize_the_data_loss(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(60, 2))
    batch = make_loss_batch(x, np.sin(x[:, 0]) + x[:, 1] ** 2, np.zeros(2), np.ones(2))
    weights, intercept = nls.solve_linear_terms(init_weights(build_specs(2, [5], 2), seed), batch)

    def mse(bias, theta_0):
        output = replace(weights.layers[-1], bias=bias)
        phi = forward(replace(weights, layers=weights.layers[:-1] + (output,)), batch.inputs)
        return np.mean((theta_0 + np.sum(phi * batch.covariates, axis=1) - batch.target) ** 2)

    best = mse(weights.layers[-1].bias, intercept)
    for _ in range(5):
        nudge = rng.normal(scale=1e-3, size=3)
        assert mse(weights.layers[-1].bias + nudge[1:], intercept + nudge[0]) >= best


def test_patience_stops_on_a_flat_validation_loss():
    weights = init_weights(build_specs(1, [3], 1), 0)
    x = np.linspace(0, 1, 30)[:, None]
    batch = LossBatch(inputs=x, covariates=x, target=np.zeros(30))
    config = NlsConfig(patience=5, lr_reduce_patience=2, lr_reduce_factor=0.5, max_epochs=100)
    _, _, trace = run_training(weights, np.zeros(1), Objective(loss=LossKind.CONSTANT, constant=1.0), batch, batch, config)
    assert trace.stop_reason is StopReason.PATIENCE
    assert trace.best_epoch == 0
    assert trace.epochs == 5
    # epoch 0 plus five stalled epochs; halved after every second one
    assert trace.learning_rate == pytest.approx([1e-3, 1e-3, 1e-3, 5e-4, 5e-4, 2.5e-4])


def test_warm_fit_starts_from_the_given_weights(small_config):
    data = gen_sin(200, seed=1)
    model, _ = nls.fit(small_config, data)
    warm, trace = nls.warm_fit(model, 0.5, data, small_config.with_changes(max_epochs=1, patience=1))
    assert warm.penalty == 0.5
    assert np.array_equal(warm.feature_means, model.feature_means)
    # the untouched starting point is epoch 0 of the warm trace
    assert trace.epochs <= 1
    if trace.best_epoch == 0:
        for a, b in zip(warm.weights.parameters(), model.weights.parameters()):
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_warm_fit_converges_in_fewer_epochs_than_a_cold_fit():
    config = NlsConfig(hidden_layers=[8], max_epochs=300, patience=10, batch_size=32, learning_rate=0.01)
    warm_epochs, cold_epochs = [], []
    for seed in range(3):
        data = gen_sin(200, seed=seed)
        start, _ = nls.fit(config.with_changes(penalty=1.0, seed=seed), data)
        _, warm = nls.warm_fit(start, 1.5, data)
        _, cold = nls.fit(config.with_changes(penalty=1.5, seed=seed), data)
        warm_epochs.append(warm.epochs)
        cold_epochs.append(cold.epochs)
    assert np.median(warm_epochs) < np.median(cold_epochs)


def test_warm_fit_validates_its_inputs(small_config):
    data = gen_sin(100)
    model, _ = nls.fit(small_config.with_changes(max_epochs=1), data)
    with pytest.raises(ConfigurationError):
        nls.warm_fit(model, -1.0, data)
    with pytest.raises(InputError):
        nls.warm_fit(model, 1.0, gen_linear(100, d=2))


def test_negative_lambda_is_rejected_by_the_config():
    with pytest.raises(ValueError):
        NlsConfig(penalty=-1.0)


def _classifier(n_classes=3, d=2, seed=0):
    weights = init_weights(build_specs(d, [5], n_classes * d), seed)
    return nls.NlsClassifier(
        weights=weights,
        intercepts=np.linspace(-0.5, 0.5, n_classes),
        classes=np.arange(n_classes, dtype=float),
        feature_means=np.zeros(d),
        feature_stds=np.ones(d),
        config=NlsConfig(),
        feature_names=tuple(f"x{i}" for i in range(d)),
    )


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), scale=st.floats(0.1, 50.0))
def test_class_probabilities_sum_to_one(seed, scale):
    model = _classifier(seed=seed)
    xs = np.random.default_rng(seed).normal(size=(25, 2)) * scale
    proba = nls.classify_proba(model, xs)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(proba >= 0)


def test_equal_scores_give_uniform_probabilities():
    model = _classifier()
    model = nls.NlsClassifier(**{**model.__dict__, "intercepts": np.zeros(3)})
    proba = nls.classify_proba(model, np.zeros((1, 2)))
    np.testing.assert_allclose(proba, [[1 / 3, 1 / 3, 1 / 3]])


def test_binary_probability_is_the_logistic_of_the_score_gap():
    model = _classifier(n_classes=2, seed=4)
    xs = np.random.default_rng(0).normal(size=(10, 2))
    scores = nls.class_scores(model, xs)
    proba = nls.classify_proba(model, xs)
    np.testing.assert_allclose(proba[:, 1], 1.0 / (1.0 + np.exp(-(scores[:, 1] - scores[:, 0]))), rtol=1e-12)


def test_classifier_separates_gaussian_blobs():
    rng = np.random.default_rng(0)
    n = 600
    labels = rng.integers(0, 2, size=n)
    centers = np.where(labels[:, None] == 1, 2.0, -2.0)
    x = centers + rng.normal(size=(n, 2))
    train = Dataset(features=x[:450], target=labels[:450].astype(float), feature_names=("a", "b"))
    config = NlsConfig(hidden_layers=[16], learning_rate=0.01, batch_size=64, max_epochs=200, patience=30)
    model, _ = nls.fit_classifier(config, train)
    accuracy = np.mean(nls.predict_class(model, x[450:]) == labels[450:])
    assert accuracy >= 0.97


def test_classifier_memorizes_one_instance_per_class():
    x = np.array([[-1.0], [1.0]])
    batch = LossBatch(inputs=x, covariates=x, target=np.array([0.0, 1.0]))
    objective = Objective(loss=LossKind.CROSS_ENTROPY, n_groups=2)
    config = NlsConfig(learning_rate=0.05, batch_size=2, max_epochs=500, patience=500)
    _, _, trace = run_training(init_weights(build_specs(1, [4], 2), 0), np.zeros(2), objective, batch, batch, config)
    assert trace.validation_loss[0] > 0.1
    assert trace.validation_loss[trace.best_epoch] < 1e-3
    assert trace.train_loss[-1] < trace.train_loss[1]


def test_constant_coefficient_classifier_agrees_with_logistic_regression():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(400, 1))
    labels = (rng.uniform(size=400) < 1.0 / (1.0 + np.exp(-2.0 * x[:, 0]))).astype(float)
    train = Dataset(features=x, target=labels, feature_names=("x",))
    config = NlsConfig(hidden_layers=[4], penalty=1e4, learning_rate=0.01, batch_size=64, max_epochs=200, patience=20)
    model, _ = nls.fit_classifier(config, train)

    coefficients = nls.class_theta_batch(model, np.linspace(-2, 2, 21)[:, None])
    slope_gap = coefficients[:, 1, 1] - coefficients[:, 0, 1]
    oracle = LogisticRegression().fit(x, labels)
    assert np.all(np.sign(slope_gap) == np.sign(oracle.coef_[0, 0]))


def test_classifier_needs_two_classes(small_config):
    data = Dataset(features=np.random.default_rng(0).normal(size=(40, 2)), target=np.ones(40), feature_names=("a", "b"))
    with pytest.raises(ConfigurationError):
        nls.fit_classifier(small_config, data)
