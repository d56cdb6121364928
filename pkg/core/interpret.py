"""
Per-instance explanations, the average squared gradient smoothness metric and
the interpretation-extension check: predict each extension instance with the
coefficients explained at its nearest prediction instance and compare with
the model's own prediction.
"""
import logging
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist

from core.data import Dataset
from core.lls import LlsModel, fit_predict
from core.nls import (
    NlsClassifier,
    NlsModel,
    as_instances,
    local_linear_prediction,
    predict_batch,
    squared_jacobian_norms,
    theta_batch,
)
from infrastructure.errors import InputError
from models.schemas import Explanation, ExtensionReport, ExtensionRow

logger = logging.getLogger(__name__)


def _names(model, feature_names: Optional[Sequence[str]]) -> List[str]:
    names = list(feature_names or model.feature_names or [f"x{i + 1}" for i in range(model.d)])
    if len(names) != model.d:
        raise InputError(f"{len(names)} feature names for {model.d} features")
    return names


def _explanation(coefficients: np.ndarray, instance: np.ndarray, prediction: float, names: List[str]) -> Explanation:
    return Explanation(
        instance=instance.tolist(),
        intercept=float(coefficients[0]),
        coefficients=coefficients[1:].tolist(),
        contributions=(coefficients[1:] * instance).tolist(),
        prediction=prediction,
        feature_names=names,
    )


def explain_batch(model: NlsModel, x, feature_names: Optional[Sequence[str]] = None) -> List[Explanation]:
    instances = as_instances(x, model.d)
    coefficients = theta_batch(model, instances)
    predictions = local_linear_prediction(coefficients, instances)
    names = _names(model, feature_names)
    return [
        _explanation(coefficients[i], instances[i], float(predictions[i]), names)
        for i in range(instances.shape[0])
    ]


def explain(model: NlsModel, x, feature_names: Optional[Sequence[str]] = None) -> Explanation:
    instance = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return explain_batch(model, instance, feature_names)[0]


def explain_lls(model: LlsModel, x, feature_names: Optional[Sequence[str]] = None) -> Explanation:
    instance = np.asarray(x, dtype=np.float64).reshape(-1)
    coefficients, prediction = fit_predict(model, instance)
    return _explanation(coefficients, instance, prediction, _names(model, feature_names))


def avg_squared_gradient(model: Union[NlsModel, NlsClassifier], data: Union[Dataset, np.ndarray]) -> float:
    """Mean over instances of Σ_{k,l} (∂θ_k/∂x_l)², the same quantity the training penalty averages"""
    features = data.features if isinstance(data, Dataset) else data
    instances = as_instances(features, model.d)
    if instances.shape[0] == 0:
        raise InputError("avg_squared_gradient needs at least one instance")
    standardized = (instances - model.feature_means) / model.feature_stds
    return float(np.mean(squared_jacobian_norms(model.weights, standardized)))


def extend_predictions(model: NlsModel, prediction_set, extension_set) -> ExtensionReport:
    """Nearest-neighbour reuse of explained coefficients; distances on standardized features"""
    predicted = as_instances(prediction_set, model.d)
    extended = as_instances(extension_set, model.d)
    if predicted.shape[0] == 0:
        raise InputError("prediction set is empty")
    if extended.shape[0] == 0:
        raise InputError("extension set is empty")

    distances = cdist(
        (extended - model.feature_means) / model.feature_stds,
        (predicted - model.feature_means) / model.feature_stds,
        metric="sqeuclidean",
    )
    # argmin returns the first minimum, so ties go to the lowest index
    neighbors = np.argmin(distances, axis=1)
    explained = theta_batch(model, predicted)
    extended_predictions = local_linear_prediction(explained[neighbors], extended)
    true_predictions = predict_batch(model, extended)
    gaps = np.abs(extended_predictions - true_predictions)

    rows = [
        ExtensionRow(
            index=i,
            neighbor_index=int(neighbors[i]),
            extended_prediction=float(extended_predictions[i]),
            true_prediction=float(true_predictions[i]),
            gap=float(gaps[i]),
        )
        for i in range(extended.shape[0])
    ]
    mean_gap = float(np.mean(gaps))
    logger.info(f"Extended {len(rows)} predictions from {predicted.shape[0]} explained instances: mean gap {mean_gap:.6g}")
    return ExtensionReport(rows=rows, mean_gap=mean_gap)
