"""
Mini-batch Adam loop with early stopping, shared by the smoother, its
classifier and the direct-output network baseline.
"""
import logging
from typing import Tuple

import numpy as np

from core.autodiff import (
    AdamState,
    LossBatch,
    Mode,
    NetworkWeights,
    Objective,
    adam_step,
    forward_with_input_jacobian,
    loss_gradient,
    update_normalization,
)
from core.data import Dataset, SplitPlan, make_split, role_rows
from infrastructure.errors import InputError
from models.schemas import NlsConfig, StopReason, TrainTrace

logger = logging.getLogger(__name__)

MIN_TRAINING_ROWS = 20


def check_training_data(train: Dataset) -> None:
    if train.n < MIN_TRAINING_ROWS:
        raise InputError(f"training needs at least {MIN_TRAINING_ROWS} instances, got {train.n}")
    if train.d < 1:
        raise InputError("training needs at least one feature")


def training_split(n: int, config: NlsConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Rows used for gradient steps and rows used for early stopping"""
    fraction = config.validation_fraction
    roles = make_split(n, SplitPlan(seed=config.seed, fractions=(1.0 - fraction, fraction)))
    fit_rows, validation_rows = role_rows(roles, 0), role_rows(roles, 1)
    if fit_rows.size == 0 or validation_rows.size == 0:
        raise InputError(f"validation fraction {fraction} leaves an empty part for {n} rows")
    return fit_rows, validation_rows


def make_loss_batch(features: np.ndarray, target: np.ndarray, means: np.ndarray, stds: np.ndarray) -> LossBatch:
    """Network reads standardized features; the dot product uses x / std"""
    return LossBatch(inputs=(features - means) / stds, covariates=features / stds, target=target)


def _rows(batch: LossBatch, rows: np.ndarray) -> LossBatch:
    return LossBatch(inputs=batch.inputs[rows], covariates=batch.covariates[rows], target=batch.target[rows])


def _evaluate(weights: NetworkWeights, intercepts: np.ndarray, objective: Objective,
              batch: LossBatch) -> Tuple[float, float]:
    """(penalized total, mean squared Jacobian norm) in Eval mode"""
    value, _ = loss_gradient(weights, intercepts, objective, batch, Mode.EVAL)
    penalty = value.penalty
    if penalty is None:
        _, dual = forward_with_input_jacobian(weights, batch.inputs)
        penalty = float(np.sum(dual.tangents ** 2) / batch.inputs.shape[0])
    return value.total, penalty


def run_training(
    weights: NetworkWeights,
    intercepts: np.ndarray,
    objective: Objective,
    train: LossBatch,
    validation: LossBatch,
    config: NlsConfig,
) -> Tuple[NetworkWeights, np.ndarray, TrainTrace]:
    """
    Train until the penalized validation loss stalls for `patience` epochs and
    return the best snapshot. The learning rate is reduced after
    `lr_reduce_patience` epochs without improvement.
    """
    rng = np.random.default_rng(config.seed)
    state = AdamState.create(weights.parameters() + [intercepts], learning_rate=config.learning_rate)
    n = train.inputs.shape[0]

    train_loss, _ = _evaluate(weights, intercepts, objective, train)
    best_loss, penalty = _evaluate(weights, intercepts, objective, validation)
    trace = TrainTrace(
        train_loss=[train_loss],
        validation_loss=[best_loss],
        penalty=[penalty],
        learning_rate=[state.learning_rate],
    )
    best_weights, best_intercepts = weights, intercepts
    since_best = since_reduction = 0

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            batch = _rows(train, order[start:start + config.batch_size])
            if weights.is_stochastic:
                weights = update_normalization(weights, batch.inputs)
            value, gradient = loss_gradient(weights, intercepts, objective, batch, Mode.TRAIN, rng)
            params, state = adam_step(state, weights.parameters() + [intercepts], gradient.as_list())
            weights, intercepts = weights.with_parameters(params[:-1]), params[-1]
            epoch_loss += value.total * batch.inputs.shape[0]

        validation_loss, penalty = _evaluate(weights, intercepts, objective, validation)
        trace.train_loss.append(epoch_loss / n)
        trace.validation_loss.append(validation_loss)
        trace.penalty.append(penalty)
        trace.learning_rate.append(state.learning_rate)
        logger.debug(f"epoch {epoch}: train {epoch_loss / n:.6g} validation {validation_loss:.6g}")

        # equal loss does not reset patience
        if validation_loss < best_loss:
            best_loss, best_weights, best_intercepts = validation_loss, weights, intercepts
            trace.best_epoch = epoch
            since_best = since_reduction = 0
        else:
            since_best += 1
            since_reduction += 1

        if since_reduction >= config.lr_reduce_patience:
            state = state.reduce_learning_rate(config.lr_reduce_factor)
            since_reduction = 0
            logger.info(f"epoch {epoch}: learning rate reduced to {state.learning_rate:.3g}")
        if since_best >= config.patience:
            trace.stop_reason = StopReason.PATIENCE
            break

    logger.info(
        f"Training stopped after {trace.epochs} epochs ({trace.stop_reason.value}); "
        f"best epoch {trace.best_epoch}, validation loss {best_loss:.6g}"
    )
    return best_weights, best_intercepts, trace
