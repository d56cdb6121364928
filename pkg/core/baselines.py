"""
Comparison baselines: ordinary least squares and a network of the same
architecture that outputs the prediction directly.
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from core.autodiff import HeadKind, LossKind, NetworkWeights, Objective, build_specs, forward, init_weights
from core.data import Dataset, column_statistics
from core.training import check_training_data, make_loss_batch, run_training, training_split
from infrastructure.errors import InputError
from models.schemas import NlsConfig, TrainTrace

logger = logging.getLogger(__name__)


def fit_ols_coefficients(features: np.ndarray, target: np.ndarray) -> np.ndarray:
    """(intercept, slopes) from the least-squares normal equations"""
    design = np.column_stack([np.ones(features.shape[0]), features])
    coefficients, *_ = np.linalg.lstsq(design, target, rcond=None)
    return coefficients


@dataclass(frozen=True)
class OlsModel:
    coefficients: np.ndarray
    feature_names: Tuple[str, ...]


def fit_ols(train: Dataset) -> OlsModel:
    return OlsModel(fit_ols_coefficients(train.features, train.target), train.feature_names)


def predict_ols(model: OlsModel, features: np.ndarray) -> np.ndarray:
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != model.coefficients.size - 1:
        raise InputError(f"expected {model.coefficients.size - 1} features, got {features.shape[1]}")
    return model.coefficients[0] + features @ model.coefficients[1:]


@dataclass(frozen=True)
class NetworkRegressor:
    weights: NetworkWeights
    intercept: float
    feature_means: np.ndarray
    feature_stds: np.ndarray
    target_mean: float
    target_std: float
    config: NlsConfig


def fit_network_regressor(config: NlsConfig, train: Dataset) -> Tuple[NetworkRegressor, TrainTrace]:
    """
    Plain regression network, same training loop, no coefficient structure and
    no penalty. The network is trained on the standardized target.
    """
    check_training_data(train)
    config = config.with_changes(penalty=0.0)
    fit_rows, validation_rows = training_split(train.n, config)
    means, stds = column_statistics(train.features[fit_rows])
    target_mean = float(train.target[fit_rows].mean())
    target_std = float(train.target[fit_rows].std()) or 1.0
    target = (train.target - target_mean) / target_std

    specs = build_specs(train.d, config.hidden_layers, 1, config.batch_norm, config.dropout)
    objective = Objective(loss=LossKind.SQUARED_ERROR, head=HeadKind.DIRECT)
    weights, intercepts, trace = run_training(
        init_weights(specs, config.seed),
        np.zeros(1),
        objective,
        make_loss_batch(train.features[fit_rows], target[fit_rows], means, stds),
        make_loss_batch(train.features[validation_rows], target[validation_rows], means, stds),
        config,
    )
    logger.info(f"Network baseline: best epoch {trace.best_epoch} of {trace.epochs}")
    return NetworkRegressor(weights, float(intercepts[0]), means, stds, target_mean, target_std, config), trace


def predict_network(model: NetworkRegressor, features: np.ndarray) -> np.ndarray:
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != model.feature_means.size:
        raise InputError(f"expected {model.feature_means.size} features, got {features.shape[1]}")
    out = forward(model.weights, (features - model.feature_means) / model.feature_stds)
    return model.target_mean + model.target_std * (model.intercept + out[:, 0])
