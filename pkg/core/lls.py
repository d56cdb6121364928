"""
Local linear smoother: for every query, a Gaussian-kernel weighted least
squares fit on standardized features, solved in closed form.
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from core.data import Dataset, column_statistics
from infrastructure.errors import ConfigurationError, InputError, NumericError

logger = logging.getLogger(__name__)

DEFAULT_RIDGE = 1e-8
SIGMA_GRID = (0.1, 1.0, 10.0, 100.0, 1000.0)
# validation MSEs closer than this fraction of the target variance are ties
TIE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class LlsModel:
    features: np.ndarray        # raw training features (n, d)
    target: np.ndarray
    sigma: float
    ridge: float
    feature_means: np.ndarray
    feature_stds: np.ndarray
    feature_names: Tuple[str, ...]
    target_name: str = "y"
    source: str = ""

    @property
    def d(self) -> int:
        return self.features.shape[1]


def build_lls(train: Dataset, sigma: float, ridge: float = DEFAULT_RIDGE) -> LlsModel:
    if sigma <= 0:
        raise ConfigurationError(f"kernel bandwidth must be > 0, got {sigma}")
    if ridge < 0:
        raise ConfigurationError(f"ridge must be >= 0, got {ridge}")
    if train.n == 0:
        raise InputError("local linear smoother needs training data")
    if train.n < train.d + 1:
        logger.warning(f"{train.n} training rows for {train.d} features; fits rely on the ridge term")
    means, stds = column_statistics(train.features)
    return LlsModel(
        features=train.features,
        target=train.target,
        sigma=float(sigma),
        ridge=float(ridge),
        feature_means=means,
        feature_stds=stds,
        feature_names=train.feature_names,
        target_name=train.target_name,
        source=train.source,
    )


def gaussian_kernel(a, b, sigma: float) -> float:
    """exp(-||a - b||² / σ²)"""
    if sigma <= 0:
        raise ConfigurationError(f"kernel bandwidth must be > 0, got {sigma}")
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"kernel arguments differ in shape: {a.shape} vs {b.shape}")
    return float(np.exp(-np.sum((a - b) ** 2) / sigma ** 2))


def _query_vector(model: LlsModel, query) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.size != model.d:
        raise InputError(f"expected a query with {model.d} features, got {q.size}")
    return q


def fit_predict(model: LlsModel, query) -> Tuple[np.ndarray, float]:
    """(θ̂ in raw units with θ̂_0 first, prediction) at one query point"""
    q = _query_vector(model, query)
    z = (model.features - model.feature_means) / model.feature_stds
    zq = (q - model.feature_means) / model.feature_stds
    weights = np.exp(-np.sum((z - zq) ** 2, axis=1) / model.sigma ** 2)

    design = np.column_stack([np.ones(z.shape[0]), z])
    normal = design.T @ (weights[:, None] * design) + model.ridge * np.eye(design.shape[1])
    rhs = design.T @ (weights * model.target)
    if model.ridge == 0 and np.linalg.cond(normal) > 1.0 / np.finfo(np.float64).eps:
        raise NumericError(f"weighted normal equations are singular at sigma={model.sigma}; use ridge > 0")
    try:
        gamma = np.linalg.solve(normal, rhs)
    except np.linalg.LinAlgError:
        raise NumericError(f"weighted normal equations are singular at sigma={model.sigma}; use ridge > 0")

    # back to raw units: θ_k = γ_k / s_k, θ_0 = γ_0 - Σ γ_k m_k / s_k
    slopes = gamma[1:] / model.feature_stds
    coefficients = np.concatenate([[gamma[0] - np.sum(slopes * model.feature_means)], slopes])
    return coefficients, float(coefficients[0] + np.sum(coefficients[1:] * q))


def predict_batch(model: LlsModel, queries) -> np.ndarray:
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    return np.array([fit_predict(model, q)[1] for q in queries])


def sigma_scores(train: Dataset, grid: Sequence[float], validation: Dataset,
                 ridge: float = DEFAULT_RIDGE) -> List[Tuple[float, float]]:
    """Validation MSE per bandwidth, in ascending bandwidth order"""
    if not grid:
        raise ConfigurationError("bandwidth grid is empty")
    scores = []
    for sigma in sorted(grid):
        model = build_lls(train, sigma, ridge)
        mse = float(np.mean((predict_batch(model, validation.features) - validation.target) ** 2))
        logger.debug(f"sigma={sigma:g}: validation mse {mse:.6g}")
        scores.append((float(sigma), mse))
    return scores


def best_sigma(scores: Sequence[Tuple[float, float]], target_variance: float = 1.0) -> float:
    """
    Lowest MSE; scores within `TIE_TOLERANCE` of the target variance count as
    ties and keep the smaller bandwidth.
    """
    atol = TIE_TOLERANCE * max(target_variance, np.finfo(np.float64).tiny)
    best, best_mse = scores[0]
    for sigma, mse in scores[1:]:
        if mse < best_mse and not np.isclose(mse, best_mse, rtol=1e-9, atol=atol):
            best, best_mse = sigma, mse
    return best


def select_sigma(train: Dataset, grid: Sequence[float], validation: Dataset, ridge: float = DEFAULT_RIDGE) -> float:
    sigma = best_sigma(sigma_scores(train, grid, validation, ridge), float(np.var(validation.target)))
    logger.info(f"Selected kernel bandwidth sigma={sigma:g}")
    return sigma
