"""
Neural Local Smoother: a network emits slope functions θ_1(x)..θ_d(x) that are
combined with a learned constant θ_0 as θ_0 + Σ θ_i(x) x_i, trained with a
penalty on the input-derivatives of the slopes.

The network reads standardized features and its derivatives are taken in
that space. The coefficients reported by `theta` are in raw feature units, so
the prediction identity holds on the original scale.
"""
import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy.special import log_softmax

from core.autodiff import (
    HeadKind,
    LossBatch,
    LossKind,
    NetworkWeights,
    Objective,
    build_specs,
    forward,
    forward_with_input_jacobian,
    head_scores,
    init_weights,
)
from core.baselines import fit_ols_coefficients
from core.data import Dataset, column_statistics
from core.training import check_training_data, make_loss_batch, run_training, training_split
from infrastructure.config import LAMBDA_INFINITY
from infrastructure.errors import ConfigurationError, InputError, NumericError
from models.schemas import NlsConfig, StopReason, TrainTrace

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NlsModel:
    weights: NetworkWeights
    intercept: float
    feature_means: np.ndarray
    feature_stds: np.ndarray
    config: NlsConfig
    feature_names: Tuple[str, ...]
    target_name: str = "y"

    @property
    def d(self) -> int:
        return self.feature_means.size

    @property
    def penalty(self) -> float:
        return self.config.penalty


@dataclass(frozen=True)
class NlsClassifier:
    weights: NetworkWeights
    intercepts: np.ndarray              # one θ_0 per class
    classes: np.ndarray                 # label values, sorted
    feature_means: np.ndarray
    feature_stds: np.ndarray
    config: NlsConfig
    feature_names: Tuple[str, ...]
    target_name: str = "y"

    @property
    def d(self) -> int:
        return self.feature_means.size

    @property
    def n_classes(self) -> int:
        return self.classes.size


def as_instances(x, d: int) -> np.ndarray:
    """Accept one instance or a batch; always return (n, d)"""
    instances = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if instances.ndim != 2 or instances.shape[1] != d:
        raise InputError(f"expected instances with {d} features, got shape {np.shape(x)}")
    return instances


def _standardize(model, instances: np.ndarray) -> np.ndarray:
    return (instances - model.feature_means) / model.feature_stds


def theta_batch(model: NlsModel, x) -> np.ndarray:
    """Rows of (θ_0, θ_1(x), ..., θ_d(x)) in raw feature units"""
    instances = as_instances(x, model.d)
    slopes = forward(model.weights, _standardize(model, instances)) / model.feature_stds
    return np.column_stack([np.full(instances.shape[0], model.intercept), slopes])


def theta(model: NlsModel, x) -> np.ndarray:
    return theta_batch(model, np.asarray(x, dtype=np.float64).reshape(1, -1))[0]


def local_linear_prediction(coefficients: np.ndarray, instances: np.ndarray) -> np.ndarray:
    """θ_0 + Σ θ_i x_i; the one code path behind predictions and explanations"""
    return coefficients[:, 0] + np.sum(coefficients[:, 1:] * instances, axis=1)


def predict_batch(model: NlsModel, x) -> np.ndarray:
    instances = as_instances(x, model.d)
    return local_linear_prediction(theta_batch(model, instances), instances)


def predict(model: NlsModel, x) -> float:
    return float(predict_batch(model, np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


def squared_jacobian_norms(weights: NetworkWeights, standardized: np.ndarray) -> np.ndarray:
    """Σ_{k,l} (∂θ_k/∂x_l)² per instance, derivatives in standardized space"""
    _, dual = forward_with_input_jacobian(weights, standardized)
    return np.sum(dual.tangents ** 2, axis=(0, 2))


def penalized_loss(model: NlsModel, batch: Dataset, penalty: Optional[float] = None) -> Tuple[float, float, float]:
    """(total, mse_part, penalty_part) on the given instances, Eval mode"""
    if batch.n == 0:
        raise InputError("penalized_loss needs a nonempty batch")
    penalty = model.penalty if penalty is None else penalty
    instances = as_instances(batch.features, model.d)
    loss_batch = make_loss_batch(instances, batch.target, model.feature_means, model.feature_stds)

    phi = forward(model.weights, loss_batch.inputs)
    objective = Objective(loss=LossKind.SQUARED_ERROR, head=HeadKind.LOCAL_LINEAR)
    residual = head_scores(objective, phi, np.array([model.intercept]), loss_batch.covariates)[:, 0] - batch.target
    bad = np.flatnonzero(~np.isfinite(residual))
    if bad.size:
        raise NumericError(f"non-finite loss at instance {bad[0]}", instance=int(bad[0]))

    mse_part = float(np.mean(residual ** 2))
    penalty_part = float(np.mean(squared_jacobian_norms(model.weights, loss_batch.inputs)))
    return mse_part + penalty * penalty_part, mse_part, penalty_part


def _analytic_limit(config: NlsConfig, train: Dataset, means: np.ndarray, stds: np.ndarray,
                    fit_rows: np.ndarray) -> NlsModel:
    """λ = ∞ candidate: constant slopes from the normal equations on the fit rows, zero weight matrices"""
    coefficients = fit_ols_coefficients(train.features[fit_rows], train.target[fit_rows])
    weights = init_weights(build_specs(train.d, config.hidden_layers, train.d, config.batch_norm, config.dropout), config.seed)
    layers = [
        replace(layer, weight=np.zeros_like(layer.weight), bias=np.zeros_like(layer.bias))
        for layer in weights.layers
    ]
    # network output φ_k is θ_k * std_k
    layers[-1] = replace(layers[-1], bias=coefficients[1:] * stds)
    return NlsModel(
        weights=replace(weights, layers=tuple(layers)),
        intercept=float(coefficients[0]),
        feature_means=means,
        feature_stds=stds,
        config=config,
        feature_names=train.feature_names,
        target_name=train.target_name,
    )


def solve_linear_terms(weights: NetworkWeights, batch: LossBatch) -> Tuple[NetworkWeights, float]:
    """
    Least-squares θ_0 and output-layer bias for fixed hidden layers. Neither
    enters the Jacobian penalty, so this is the exact minimizer of the
    penalized loss over those parameters.
    """
    output = weights.layers[-1]
    hidden_only = replace(weights, layers=weights.layers[:-1] + (replace(output, bias=np.zeros_like(output.bias)),))
    varying = forward(hidden_only, batch.inputs)
    residual = batch.target - np.sum(varying * batch.covariates, axis=1)
    coefficients = fit_ols_coefficients(batch.covariates, residual)
    solved = replace(weights, layers=weights.layers[:-1] + (replace(output, bias=coefficients[1:]),))
    return solved, float(coefficients[0])


def _train_regressor(config: NlsConfig, train: Dataset, weights: NetworkWeights,
                     means: np.ndarray, stds: np.ndarray) -> Tuple[NlsModel, TrainTrace]:
    fit_rows, validation_rows = training_split(train.n, config)
    fit_batch = make_loss_batch(train.features[fit_rows], train.target[fit_rows], means, stds)
    objective = Objective(loss=LossKind.SQUARED_ERROR, head=HeadKind.LOCAL_LINEAR, penalty=config.penalty)

    weights, intercept = solve_linear_terms(weights, fit_batch)
    weights, intercepts, trace = run_training(
        weights,
        np.array([intercept]),
        objective,
        fit_batch,
        make_loss_batch(train.features[validation_rows], train.target[validation_rows], means, stds),
        config,
    )
    weights, intercept = solve_linear_terms(weights, fit_batch)
    model = NlsModel(
        weights=weights,
        intercept=intercept,
        feature_means=means,
        feature_stds=stds,
        config=config,
        feature_names=train.feature_names,
        target_name=train.target_name,
    )
    if config.penalty >= LAMBDA_INFINITY:
        return _prefer_analytic_limit(model, trace, train, fit_rows, validation_rows)
    return model, trace


def _prefer_analytic_limit(model: NlsModel, trace: TrainTrace, train: Dataset,
                           fit_rows: np.ndarray, validation_rows: np.ndarray) -> Tuple[NlsModel, TrainTrace]:
    """At λ = ∞ the trained model is kept only if it scores below the constant-coefficient limit"""
    limit = _analytic_limit(model.config, train, model.feature_means, model.feature_stds, fit_rows)
    validation = train.subset(validation_rows)
    trained_loss, _, _ = penalized_loss(model, validation)
    limit_loss, _, _ = penalized_loss(limit, validation)
    if trained_loss < limit_loss:
        return model, trace
    logger.info(f"constant-coefficient limit kept: validation loss {limit_loss:.6g}, trained {trained_loss:.6g}")
    return limit, trace.model_copy(update={"stop_reason": StopReason.ANALYTIC_LIMIT})


def fit(config: NlsConfig, train: Dataset) -> Tuple[NlsModel, TrainTrace]:
    check_training_data(train)
    fit_rows, _ = training_split(train.n, config)
    means, stds = column_statistics(train.features[fit_rows])
    specs = build_specs(train.d, config.hidden_layers, train.d, config.batch_norm, config.dropout)
    logger.info(f"Fitting NLS: d={train.d}, hidden={config.hidden_layers}, lambda={config.penalty:g}")
    return _train_regressor(config, train, init_weights(specs, config.seed), means, stds)


def warm_fit(model: NlsModel, new_penalty: float, train: Dataset,
             config: Optional[NlsConfig] = None) -> Tuple[NlsModel, TrainTrace]:
    """Refit at a new λ starting from the model's weights and statistics"""
    if new_penalty < 0:
        raise ConfigurationError(f"lambda must be >= 0, got {new_penalty}")
    check_training_data(train)
    as_instances(train.features, model.d)
    config = (config or model.config).with_changes(penalty=new_penalty)
    logger.info(f"Warm fit: lambda {model.penalty:g} -> {new_penalty:g}")
    return _train_regressor(config, train, model.weights, model.feature_means, model.feature_stds)


def class_scores(model: NlsClassifier, x) -> np.ndarray:
    """Per-class θ_0^y + Σ θ_i^y(x) x_i, shape (n, classes)"""
    instances = as_instances(x, model.d)
    return local_linear_prediction_by_class(class_theta_batch(model, instances), instances)


def class_theta_batch(model: NlsClassifier, x) -> np.ndarray:
    """(n, classes, d + 1) coefficients in raw feature units"""
    instances = as_instances(x, model.d)
    n = instances.shape[0]
    phi = forward(model.weights, _standardize(model, instances))
    slopes = phi.reshape(n, model.n_classes, model.d) / model.feature_stds
    intercepts = np.broadcast_to(model.intercepts[None, :, None], (n, model.n_classes, 1))
    return np.concatenate([intercepts, slopes], axis=2)


def local_linear_prediction_by_class(coefficients: np.ndarray, instances: np.ndarray) -> np.ndarray:
    return coefficients[:, :, 0] + np.sum(coefficients[:, :, 1:] * instances[:, None, :], axis=2)


def classify_proba(model: NlsClassifier, x) -> np.ndarray:
    """Class probabilities through log-softmax of the local linear scores"""
    return np.exp(log_softmax(class_scores(model, x), axis=1))


def predict_class(model: NlsClassifier, x) -> np.ndarray:
    return model.classes[np.argmax(class_scores(model, x), axis=1)]


def fit_classifier(config: NlsConfig, train: Dataset) -> Tuple[NlsClassifier, TrainTrace]:
    """Cross entropy plus λ times the squared Jacobian norm of every class's slopes"""
    check_training_data(train)
    classes = np.unique(train.target)
    if classes.size < 2:
        raise ConfigurationError(f"classification needs at least 2 classes, found {classes.size}")
    labels = np.searchsorted(classes, train.target).astype(float)

    fit_rows, validation_rows = training_split(train.n, config)
    means, stds = column_statistics(train.features[fit_rows])
    specs = build_specs(train.d, config.hidden_layers, classes.size * train.d, config.batch_norm, config.dropout)
    counts = np.bincount(labels[fit_rows].astype(int), minlength=classes.size)
    intercepts = np.log((counts + 1.0) / (fit_rows.size + classes.size))
    objective = Objective(
        loss=LossKind.CROSS_ENTROPY, head=HeadKind.LOCAL_LINEAR, penalty=config.penalty, n_groups=classes.size
    )
    logger.info(f"Fitting NLS classifier: {classes.size} classes, d={train.d}, lambda={config.penalty:g}")

    weights, intercepts, trace = run_training(
        init_weights(specs, config.seed),
        intercepts,
        objective,
        make_loss_batch(train.features[fit_rows], labels[fit_rows], means, stds),
        make_loss_batch(train.features[validation_rows], labels[validation_rows], means, stds),
        config,
    )
    model = NlsClassifier(
        weights=weights,
        intercepts=intercepts,
        classes=classes,
        feature_means=means,
        feature_stds=stds,
        config=config,
        feature_names=train.feature_names,
        target_name=train.target_name,
    )
    return model, trace
