"""
Command-line entry point: train, eval, sweep-lambda, compare and explain.

    python -m cli.main train --config configs/sin.cfg --data sin:n=2000,seed=0 --out runs/sin
"""
import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from core import experiments, interpret, lls, nls
from core.data import load_features, resolve_data
from infrastructure.config import DEFAULT_SEED, LOG_LEVEL, OUTPUT_DIR, load_run_config
from infrastructure.errors import ConfigurationError, InputError, NlsError
from infrastructure.model_store import ArtifactStore, load_model
from infrastructure.report_renderer import ReportRenderer
from models.schemas import ExperimentReport, GridCell

logger = logging.getLogger(__name__)


def print_separator(char="=", length=60):
    print("\n" + char * length)


def print_section_header(title: str):
    print_separator()
    print(title)
    print_separator()


def _out_dir(args, command: str) -> str:
    return args.out or os.path.join(OUTPUT_DIR, command)


def _params(hyperparameters: Dict) -> str:
    return ";".join(f"{k}={v}" for k, v in hyperparameters.items())


def _report_rows(report: ExperimentReport) -> List[Dict]:
    return [
        {
            "model": row.model,
            "hyperparameters": _params(row.hyperparameters),
            "test_mse": row.test_mse,
            "mse_standard_error": row.mse_standard_error,
            "test_mae": row.test_mae,
            "mae_standard_error": row.mae_standard_error,
            "avg_squared_gradient": row.avg_squared_gradient,
        }
        for row in report.rows
    ]


def _grid_rows(cells: List[GridCell]) -> List[Dict]:
    return [
        {
            "model": cell.model,
            "fold": cell.fold,
            "hyperparameters": _params(cell.hyperparameters),
            "seed": cell.seed,
            "validation_mse": cell.validation_mse,
        }
        for cell in cells
    ]


def _run_config(args):
    run = load_run_config(args.config)
    if args.seed is not None:
        run = run.model_copy(update={"nls": run.nls.with_changes(seed=args.seed)})
    return run


def _seed(args, run) -> int:
    if args.seed is not None:
        return args.seed
    return run.nls.seed if args.config else DEFAULT_SEED


def _parse_lambdas(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise ConfigurationError(f"invalid lambda list '{text}'")


def _instances(spec: str, model) -> np.ndarray:
    """Instance rows from a CSV (target column optional) or a generator spec"""
    if Path(spec).exists():
        return load_features(spec, model.feature_names)
    data = resolve_data(spec)
    if data.d != model.d:
        raise InputError(f"model expects {model.d} features, {spec} has {data.d}")
    return data.features


def cmd_train(args) -> None:
    print_section_header("Train")
    run = _run_config(args)
    data = resolve_data(args.data, run.target)
    result = experiments.train_model(run, data)
    out = _out_dir(args, "train")

    with ArtifactStore(out) as store:
        store.write_model("model.json", result.model)
        if result.trace is not None:
            store.write_json("trace.json", result.trace)
            store.write_csv("trace.csv", experiments.trace_rows(result.trace))
            print(f"Stopped after {result.trace.epochs} epochs ({result.trace.stop_reason.value}), "
                  f"best validation loss {result.trace.best_validation_loss:.6g} at epoch {result.trace.best_epoch}")
        if result.sigma_scores:
            scores = [{"sigma": s, "validation_mse": mse} for s, mse in result.sigma_scores]
            store.write_json("sigma_scores.json", scores)
            store.write_csv("sigma_scores.csv", scores)
        if isinstance(result.model, lls.LlsModel):
            print(f"Local linear smoother with sigma={result.model.sigma:g}")
    print(f"Model written to {os.path.join(out, 'model.json')}")


def cmd_eval(args) -> None:
    print_section_header("Evaluate")
    model = load_model(args.model)
    data = resolve_data(args.data, model.target_name)
    metrics = experiments.evaluate_model(model, data)
    text = ReportRenderer().render_metrics(metrics)
    with ArtifactStore(_out_dir(args, "eval")) as store:
        store.write_json("metrics.json", metrics)
        store.write_text("metrics.txt", text)
    print(text, end="")


def cmd_sweep_lambda(args) -> None:
    print_section_header("Lambda sweep")
    run = _run_config(args)
    data = resolve_data(args.data, run.target)
    lambdas = _parse_lambdas(args.lambdas) if args.lambdas else list(run.grid.lambdas)
    result = experiments.run_sweep(data, run.nls, lambdas, run.test_fraction, _seed(args, run), args.extend)
    text = ReportRenderer().render_sweep(result.report)

    with ArtifactStore(_out_dir(args, "sweep")) as store:
        store.write_json("sweep.json", result.report)
        store.write_csv("sweep.csv", [row.model_dump(by_alias=True) for row in result.report.rows])
        store.write_text("sweep.txt", text)
        if result.theta_curve:
            store.write_csv("theta_curve.csv", result.theta_curve)
        store.write_json("timings.json", result.timings)
    print(text, end="")


def cmd_compare(args) -> None:
    print_section_header("Model comparison")
    run = _run_config(args)
    data = resolve_data(args.data, run.target)
    models = [m.strip() for m in args.models.split(",")] if args.models else experiments.COMPARED_MODELS
    report, timings = experiments.run_compare(data, run, _seed(args, run), models)
    text = ReportRenderer().render_experiment(report)

    with ArtifactStore(_out_dir(args, "compare")) as store:
        store.write_json("report.json", report)
        store.write_csv("report.csv", _report_rows(report))
        store.write_csv("grid.csv", _grid_rows(report.grid))
        store.write_text("report.txt", text)
        store.write_json("timings.json", timings)
    print(text, end="")


def cmd_explain(args) -> None:
    print_section_header("Explain")
    model = load_model(args.model)
    if isinstance(model, nls.NlsClassifier):
        raise ConfigurationError("explain supports NLS regressors and local linear smoothers, not classifiers")
    if args.extend and not isinstance(model, nls.NlsModel):
        raise ConfigurationError("--extend needs an NLS model")
    instances = _instances(args.data, model)
    renderer = ReportRenderer()

    if isinstance(model, nls.NlsModel):
        explanations = interpret.explain_batch(model, instances)
    else:
        explanations = [interpret.explain_lls(model, x) for x in instances]

    with ArtifactStore(_out_dir(args, "explain")) as store:
        store.write_json("explanations.json", [e.model_dump(mode="json") for e in explanations])
        store.write_text("explanations.txt", renderer.render_explanations(explanations))
        if args.extend:
            seed = DEFAULT_SEED if args.seed is None else args.seed
            prediction_rows, extension_rows = experiments.extension_split(instances.shape[0], seed)
            report = interpret.extend_predictions(model, instances[prediction_rows], instances[extension_rows])
            store.write_json("extension.json", report)
            store.write_text("extension.txt", renderer.render_extension(report))
            print(f"Mean extension gap: {report.mean_gap:.6g}")
    print(f"Explained {len(explanations)} instances")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nls", description="Neural local smoother experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, model=False):
        if config:
            p.add_argument("--config", help="Key-value config file")
        if model:
            p.add_argument("--model", required=True, help="Saved model JSON")
        p.add_argument("--data", required=True, help="CSV path or generator spec such as sin:n=2000,seed=0")
        p.add_argument("--seed", type=int, default=None, help="Overrides the configured seed")
        p.add_argument("--out", default=None, help="Output directory")

    train = sub.add_parser("train", help="Fit and save a model")
    common(train)
    train.set_defaults(handler=cmd_train)

    evaluate = sub.add_parser("eval", help="Test metrics of a saved model")
    common(evaluate, config=False, model=True)
    evaluate.set_defaults(handler=cmd_eval)

    sweep = sub.add_parser("sweep-lambda", help="Warm-started sweep over penalization strengths")
    common(sweep)
    sweep.add_argument("--lambdas", default=None, help="Ascending comma list, default from the config")
    sweep.add_argument("--extend", action="store_true", help="Also report the extension error per lambda")
    sweep.set_defaults(handler=cmd_sweep_lambda)

    compare = sub.add_parser("compare", help="Grid-searched comparison of NLS, NN, LLS and OLS")
    common(compare)
    compare.add_argument("--models", default=None, help="Comma list subset of nls,nn,lls,ols")
    compare.set_defaults(handler=cmd_compare)

    explain = sub.add_parser("explain", help="Per-instance coefficients of a saved model")
    common(explain, config=False, model=True)
    explain.add_argument("--extend", action="store_true", help="Run the interpretation extension on a 3/4-1/4 split")
    explain.set_defaults(handler=cmd_explain)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=LOG_LEVEL, format='%(levelname)s: %(message)s')
    try:
        args.handler(args)
    except NlsError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.debug("unexpected failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
