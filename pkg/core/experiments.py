"""
Experiment harness behind the CLI: metrics, grid searches for the smoother and
its baselines, train/test and k-fold comparisons, and warm-started λ sweeps.
"""
import itertools
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core import baselines, lls, nls
from core.data import Dataset, SplitPlan, make_split, role_rows
from core.interpret import avg_squared_gradient, extend_predictions
from infrastructure.errors import ConfigurationError, InputError
from models.schemas import (
    EvalMetrics,
    ExperimentReport,
    GridCell,
    GridSpec,
    ModelKind,
    NlsConfig,
    ReportRow,
    RunConfig,
    SweepReport,
    SweepRow,
    TrainTrace,
)

logger = logging.getLogger(__name__)

STANDARD_ERROR_DEFINITION = (
    "standard error of the mean of per-instance squared (absolute) test residuals, "
    "std(ddof=1)/sqrt(n); for k-fold runs, std(ddof=1)/sqrt(k) of the per-fold values"
)
COMPARED_MODELS = ("nls", "nn", "lls", "ols")
EXTENSION_FRACTIONS = (0.75, 0.25)
THETA_CURVE_POINTS = 200

AnyModel = Union[nls.NlsModel, nls.NlsClassifier, lls.LlsModel]


def _standard_error(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(values.size))


def regression_metrics(target: np.ndarray, predictions: np.ndarray) -> EvalMetrics:
    """MSE and MAE on raw-unit targets with standard errors of their means"""
    target = np.asarray(target, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    if target.shape != predictions.shape:
        raise InputError(f"{predictions.shape} predictions for {target.shape} targets")
    if target.size == 0:
        raise InputError("metrics need at least one instance")
    squared = (predictions - target) ** 2
    absolute = np.abs(predictions - target)
    return EvalMetrics(
        n=int(target.size),
        mse=float(squared.mean()),
        mae=float(absolute.mean()),
        mse_standard_error=_standard_error(squared),
        mae_standard_error=_standard_error(absolute),
    )


def classification_metrics(labels: np.ndarray, proba: np.ndarray, classes: np.ndarray) -> EvalMetrics:
    """Brier score as mse, mean (1 - p_true) as mae, plus accuracy and log loss"""
    labels = np.asarray(labels, dtype=np.float64)
    unknown = ~np.isin(labels, classes)
    if unknown.any():
        raise InputError(f"label {labels[unknown][0]} was not seen in training")
    index = np.searchsorted(classes, labels)
    onehot = np.eye(classes.size)[index]
    rows = np.arange(labels.size)
    squared = np.sum((proba - onehot) ** 2, axis=1)
    absolute = 1.0 - proba[rows, index]
    return EvalMetrics(
        n=int(labels.size),
        mse=float(squared.mean()),
        mae=float(absolute.mean()),
        mse_standard_error=_standard_error(squared),
        mae_standard_error=_standard_error(absolute),
        accuracy=float(np.mean(np.argmax(proba, axis=1) == index)),
        log_loss=float(-np.mean(np.log(np.clip(proba[rows, index], 1e-300, None)))),
    )


def pooled_metrics(targets: Sequence[np.ndarray], predictions: Sequence[np.ndarray]) -> EvalMetrics:
    """Pooled residuals across folds; standard errors across the per-fold values"""
    per_fold = [regression_metrics(t, p) for t, p in zip(targets, predictions)]
    pooled = regression_metrics(np.concatenate(targets), np.concatenate(predictions))
    return pooled.model_copy(update={
        "mse_standard_error": _standard_error(np.array([m.mse for m in per_fold])),
        "mae_standard_error": _standard_error(np.array([m.mae for m in per_fold])),
    })


def _check_width(model: AnyModel, data: Dataset) -> None:
    if data.d != model.d:
        raise InputError(f"model expects {model.d} features, data has {data.d}")
    if tuple(data.feature_names) != tuple(model.feature_names):
        logger.warning(f"feature names differ: model {list(model.feature_names)}, data {list(data.feature_names)}")


def predict_model(model: AnyModel, features: np.ndarray) -> np.ndarray:
    if isinstance(model, nls.NlsModel):
        return nls.predict_batch(model, features)
    if isinstance(model, nls.NlsClassifier):
        return nls.predict_class(model, features)
    return lls.predict_batch(model, features)


def evaluate_model(model: AnyModel, data: Dataset) -> EvalMetrics:
    _check_width(model, data)
    if isinstance(model, nls.NlsClassifier):
        return classification_metrics(data.target, nls.classify_proba(model, data.features), model.classes)
    return regression_metrics(data.target, predict_model(model, data.features))


def cell_seed(base_seed: int, *index: int) -> int:
    """Independent, reproducible seed per grid cell"""
    return int(np.random.SeedSequence([base_seed, *index]).generate_state(1)[0])


@dataclass
class TrainingResult:
    model: AnyModel
    trace: Optional[TrainTrace] = None
    sigma_scores: List[Tuple[float, float]] = field(default_factory=list)


def train_model(run: RunConfig, data: Dataset) -> TrainingResult:
    """Fit the model kind named by the run config on all given rows"""
    if run.model is ModelKind.NLS:
        model, trace = nls.fit(run.nls, data)
        return TrainingResult(model, trace)
    if run.model is ModelKind.NLS_CLASSIFIER:
        model, trace = nls.fit_classifier(run.nls, data)
        return TrainingResult(model, trace)
    if run.sigma is not None:
        return TrainingResult(lls.build_lls(data, run.sigma, run.ridge))
    # no bandwidth given: pick one on a validation split, then use every row
    fit_part, validation_part = _selection_split(data, run.nls.validation_fraction, run.nls.seed)
    scores = lls.sigma_scores(fit_part, run.grid.sigmas, validation_part, run.ridge)
    sigma = lls.best_sigma(scores, float(np.var(validation_part.target)))
    return TrainingResult(lls.build_lls(data, sigma, run.ridge), sigma_scores=scores)


def _selection_split(data: Dataset, fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    roles = make_split(data.n, SplitPlan(seed=seed, fractions=(1.0 - fraction, fraction)))
    fit_rows, selection_rows = role_rows(roles, 0), role_rows(roles, 1)
    if fit_rows.size == 0 or selection_rows.size == 0:
        raise InputError(f"fraction {fraction} leaves an empty split for {data.n} rows")
    return data.subset(fit_rows), data.subset(selection_rows)


def _mse(target: np.ndarray, predictions: np.ndarray) -> float:
    return float(np.mean((predictions - target) ** 2))


@dataclass
class SelectedModel:
    name: str
    hyperparameters: Dict[str, Any]
    predict: Callable[[np.ndarray], np.ndarray]
    cells: List[GridCell]
    seconds: float
    nls_model: Optional[nls.NlsModel] = None


def _network_cells(grid: GridSpec, with_lambdas: bool) -> List[Dict[str, Any]]:
    lambdas = grid.lambdas if with_lambdas else [None]
    cells = []
    for layers, width, penalty in itertools.product(grid.layers, grid.widths, lambdas):
        cell = {"layers": layers, "width": width}
        if penalty is not None:
            cell["lambda"] = penalty
        cells.append(cell)
    return cells


def _search_networks(name: str, base: NlsConfig, grid: GridSpec, fit_part: Dataset, selection: Dataset,
                     seed: int, fold: Optional[int]) -> SelectedModel:
    started = time.perf_counter()
    best = None
    cells = []
    for index, params in enumerate(_network_cells(grid, with_lambdas=name == "nls")):
        s = cell_seed(seed, fold or 0, COMPARED_MODELS.index(name), index)
        config = base.with_changes(
            hidden_layers=[params["width"]] * params["layers"],
            penalty=params.get("lambda", 0.0),
            seed=s,
        )
        if name == "nls":
            model, _ = nls.fit(config, fit_part)
            predict = lambda x, m=model: nls.predict_batch(m, x)
        else:
            model, _ = baselines.fit_network_regressor(config, fit_part)
            predict = lambda x, m=model: baselines.predict_network(m, x)
        score = _mse(selection.target, predict(selection.features))
        cells.append(GridCell(model=name, hyperparameters=params, seed=s, validation_mse=score, fold=fold))
        logger.info(f"{name} {params}: validation mse {score:.6g}")
        # strict comparison keeps the earliest cell on ties
        if best is None or score < best[0]:
            best = (score, params, predict, model)
    _, params, predict, model = best
    return SelectedModel(
        name=name,
        hyperparameters=params,
        predict=predict,
        cells=cells,
        seconds=time.perf_counter() - started,
        nls_model=model if name == "nls" else None,
    )


def _search_lls(grid: GridSpec, ridge: float, fit_part: Dataset, selection: Dataset,
                seed: int, fold: Optional[int]) -> SelectedModel:
    started = time.perf_counter()
    scores = lls.sigma_scores(fit_part, grid.sigmas, selection, ridge)
    cells = [
        GridCell(model="lls", hyperparameters={"sigma": sigma}, seed=seed, validation_mse=score, fold=fold)
        for sigma, score in scores
    ]
    model = lls.build_lls(fit_part, lls.best_sigma(scores, float(np.var(selection.target))), ridge)
    return SelectedModel(
        name="lls",
        hyperparameters={"sigma": model.sigma, "ridge": ridge},
        predict=lambda x: lls.predict_batch(model, x),
        cells=cells,
        seconds=time.perf_counter() - started,
    )


def _fit_ols(fit_part: Dataset, selection: Dataset, seed: int, fold: Optional[int]) -> SelectedModel:
    started = time.perf_counter()
    model = baselines.fit_ols(fit_part)
    score = _mse(selection.target, baselines.predict_ols(model, selection.features))
    return SelectedModel(
        name="ols",
        hyperparameters={},
        predict=lambda x: baselines.predict_ols(model, x),
        cells=[GridCell(model="ols", hyperparameters={}, seed=seed, validation_mse=score, fold=fold)],
        seconds=time.perf_counter() - started,
    )


def _select(name: str, run: RunConfig, train: Dataset, seed: int, fold: Optional[int]) -> SelectedModel:
    fit_part, selection = _selection_split(train, run.nls.validation_fraction, seed)
    if name in ("nls", "nn"):
        return _search_networks(name, run.nls, run.grid, fit_part, selection, seed, fold)
    if name == "lls":
        return _search_lls(run.grid, run.ridge, fit_part, selection, seed, fold)
    return _fit_ols(fit_part, selection, seed, fold)


def _check_models(models: Sequence[str]) -> None:
    unknown = [m for m in models if m not in COMPARED_MODELS]
    if unknown or not models:
        raise ConfigurationError(f"models must be a nonempty subset of {list(COMPARED_MODELS)}, got {list(models)}")


def run_compare(data: Dataset, run: RunConfig, seed: int,
                models: Sequence[str] = COMPARED_MODELS) -> Tuple[ExperimentReport, Dict[str, float]]:
    """
    Grid search per model on a validation part of the training rows, then
    test metrics for the winning configuration. Holdout when run.folds is 0,
    otherwise k-fold with pooled test residuals.

    Returns the report and per-model wall-clock seconds (grid search included).
    """
    _check_models(models)
    if run.folds:
        roles = make_split(data.n, SplitPlan(seed=seed, folds=run.folds))
        parts = [(fold, role_rows(roles, fold)) for fold in range(run.folds)]
        protocol = f"{run.folds}-fold cross validation"
    else:
        roles = make_split(data.n, SplitPlan(seed=seed, fractions=(1.0 - run.test_fraction, run.test_fraction)))
        parts = [(None, role_rows(roles, 1))]
        protocol = f"holdout test_fraction={run.test_fraction}"

    rows, cells, timings = [], [], {}
    for name in models:
        targets, predictions, chosen, gradients = [], [], [], []
        seconds = 0.0
        for fold, test_rows in parts:
            train = data.subset(np.setdiff1d(np.arange(data.n), test_rows))
            test = data.subset(test_rows)
            selected = _select(name, run, train, seed, fold)
            targets.append(test.target)
            predictions.append(selected.predict(test.features))
            chosen.append(selected.hyperparameters)
            cells.extend(selected.cells)
            seconds += selected.seconds
            if selected.nls_model is not None:
                gradients.append(avg_squared_gradient(selected.nls_model, test))

        metrics = pooled_metrics(targets, predictions) if run.folds else regression_metrics(targets[0], predictions[0])
        rows.append(ReportRow(
            model=name,
            hyperparameters={"per_fold": chosen} if run.folds else chosen[0],
            test_mse=metrics.mse,
            test_mae=metrics.mae,
            mse_standard_error=metrics.mse_standard_error,
            mae_standard_error=metrics.mae_standard_error,
            avg_squared_gradient=float(np.mean(gradients)) if gradients else None,
            fit_seconds=seconds,
        ))
        timings[name] = seconds
        logger.info(f"{name}: test mse {metrics.mse:.6g} (± {metrics.mse_standard_error:.3g}), {seconds:.1f}s")

    report = ExperimentReport(
        dataset=data.source,
        seed=seed,
        protocol=protocol,
        standard_error_definition=STANDARD_ERROR_DEFINITION,
        rows=rows,
        grid=cells,
    )
    return report, timings


def extension_split(n: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Prediction rows (3/4) and extension rows (1/4)"""
    roles = make_split(n, SplitPlan(seed=seed, fractions=EXTENSION_FRACTIONS))
    prediction_rows, extension_rows = role_rows(roles, 0), role_rows(roles, 1)
    if prediction_rows.size == 0 or extension_rows.size == 0:
        raise InputError(f"cannot split {n} instances into prediction and extension sets")
    return prediction_rows, extension_rows


def theta_curve(model: nls.NlsModel, data: Dataset, points: int = THETA_CURVE_POINTS) -> List[Dict[str, float]]:
    """θ_0 and θ_1 over an even grid of the single feature's observed range"""
    if model.d != 1:
        raise InputError("theta curves need a one-feature model")
    grid = np.linspace(data.features[:, 0].min(), data.features[:, 0].max(), points)
    coefficients = nls.theta_batch(model, grid[:, None])
    return [
        {"lambda": model.penalty, "x": float(x), "theta_0": float(c[0]), "theta_1": float(c[1])}
        for x, c in zip(grid, coefficients)
    ]


@dataclass
class SweepResult:
    report: SweepReport
    theta_curve: List[Dict[str, float]]
    timings: Dict[str, float]
    models: List[nls.NlsModel]


def run_sweep(data: Dataset, config: NlsConfig, lambdas: Sequence[float], test_fraction: float,
              seed: int, extend: bool = False) -> SweepResult:
    """Cold fit at the first λ, warm fits from the previous weights after that"""
    lambdas = [float(v) for v in lambdas]
    if not lambdas:
        raise ConfigurationError("lambda list is empty")
    if any(v < 0 for v in lambdas):
        raise ConfigurationError(f"lambda values must be >= 0, got {lambdas}")
    if lambdas != sorted(lambdas):
        raise ConfigurationError(f"lambda list must be sorted ascending, got {lambdas}")

    roles = make_split(data.n, SplitPlan(seed=seed, fractions=(1.0 - test_fraction, test_fraction)))
    train, test = data.subset(role_rows(roles, 0)), data.subset(role_rows(roles, 1))
    if extend:
        prediction_rows, extension_rows = extension_split(data.n, seed)

    rows, curve, timings, models = [], [], {}, []
    model = None
    for penalty in lambdas:
        started = time.perf_counter()
        if model is None:
            model, trace = nls.fit(config.with_changes(penalty=penalty), train)
        else:
            model, trace = nls.warm_fit(model, penalty, train, config)
        timings[repr(penalty)] = time.perf_counter() - started
        models.append(model)

        gap = None
        if extend:
            gap = extend_predictions(
                model, data.features[prediction_rows], data.features[extension_rows]
            ).mean_gap
        rows.append(SweepRow(
            penalty=penalty,
            epochs=trace.epochs,
            train_mse=_mse(train.target, nls.predict_batch(model, train.features)),
            test_mse=_mse(test.target, nls.predict_batch(model, test.features)),
            train_avg_squared_gradient=avg_squared_gradient(model, train),
            test_avg_squared_gradient=avg_squared_gradient(model, test),
            extension_mean_gap=gap,
        ))
        if data.d == 1:
            curve.extend(theta_curve(model, data))
        logger.info(f"lambda={penalty:g}: test mse {rows[-1].test_mse:.6g}, epochs {trace.epochs}")

    report = SweepReport(dataset=data.source, seed=seed, rows=rows)
    return SweepResult(report=report, theta_curve=curve, timings=timings, models=models)


def trace_rows(trace: TrainTrace) -> List[Dict[str, float]]:
    return [
        {
            "epoch": epoch,
            "train_loss": trace.train_loss[epoch],
            "validation_loss": trace.validation_loss[epoch],
            "penalty": trace.penalty[epoch],
            "learning_rate": trace.learning_rate[epoch],
        }
        for epoch in range(len(trace.validation_loss))
    ]
