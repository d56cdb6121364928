import json

import numpy as np
import pandas as pd
import pytest

from cli.main import main
from core import nls
from core.data import Dataset
from infrastructure.model_store import load_model, save_model
from models.schemas import NlsConfig


def _train(tmp_path, config, name="model", data="sin:n=200,seed=0"):
    out = tmp_path / name
    code = main(["train", "--config", config, "--data", data, "--out", str(out)])
    return code, out


def test_train_writes_model_and_trace(tmp_path, sin_config_file):
    code, out = _train(tmp_path, sin_config_file)
    assert code == 0
    assert (out / "model.json").exists()
    trace = json.loads((out / "trace.json").read_text())
    assert trace["epochs"] <= 5
    assert len(pd.read_csv(out / "trace.csv")) == trace["epochs"] + 1
    assert trace["best_validation_loss"] == min(trace["validation_loss"])
    assert isinstance(load_model(out / "model.json"), nls.NlsModel)


def test_training_twice_gives_identical_files(tmp_path, sin_config_file):
    _, first = _train(tmp_path, sin_config_file, "a")
    _, second = _train(tmp_path, sin_config_file, "b")
    assert (first / "model.json").read_bytes() == (second / "model.json").read_bytes()


def test_invalid_config_exits_with_code_2(tmp_path, capsys):
    config = tmp_path / "bad.cfg"
    config.write_text("lambda = -1\n")
    code, out = _train(tmp_path, str(config))
    assert code == 2
    assert "lambda" in capsys.readouterr().err
    assert not out.exists()


def test_unknown_config_key_exits_with_code_2(tmp_path, capsys):
    config = tmp_path / "bad.cfg"
    config.write_text("hidden = 8\n")
    assert _train(tmp_path, str(config))[0] == 2
    assert "hidden" in capsys.readouterr().err


def test_missing_data_file_is_an_error(tmp_path, sin_config_file):
    code, _ = _train(tmp_path, sin_config_file, data=str(tmp_path / "absent.csv"))
    assert code == 1


def test_lls_training_records_sigma_scores(tmp_path):
    config = tmp_path / "lls.cfg"
    config.write_text("model = lls\ngrid_sigmas = 1, 10\nseed = 0\n")
    code, out = _train(tmp_path, str(config), data="linear:n=80,d=2,seed=0")
    assert code == 0
    scores = json.loads((out / "sigma_scores.json").read_text())
    assert [s["sigma"] for s in scores] == [1.0, 10.0]


def test_eval_and_explain_a_trained_model(tmp_path, sin_config_file):
    _, trained = _train(tmp_path, sin_config_file)
    model_path = str(trained / "model.json")

    assert main(["eval", "--model", model_path, "--data", "sin:n=50,seed=9", "--out", str(tmp_path / "eval")]) == 0
    metrics = json.loads((tmp_path / "eval" / "metrics.json").read_text())
    assert metrics["n"] == 50 and metrics["mse"] >= 0

    out = tmp_path / "explain"
    assert main(["explain", "--model", model_path, "--data", "sin:n=40,seed=1", "--extend", "--out", str(out)]) == 0
    explanations = json.loads((out / "explanations.json").read_text())
    assert len(explanations) == 40
    for e in explanations:
        assert e["prediction"] == pytest.approx(e["intercept"] + sum(e["contributions"]), abs=1e-9)
    extension = json.loads((out / "extension.json").read_text())
    assert len(extension["rows"]) == 10
    assert (out / "extension.txt").exists()


def test_explaining_a_classifier_is_refused(tmp_path, capsys):
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 2, size=60).astype(float)
    data = Dataset(features=rng.normal(size=(60, 2)) + labels[:, None], target=labels, feature_names=("a", "b"))
    model, _ = nls.fit_classifier(NlsConfig(hidden_layers=[4], max_epochs=2), data)
    path = tmp_path / "classifier.json"
    save_model(model, path)

    code = main(["explain", "--model", str(path), "--data", "linear:n=5,d=2", "--out", str(tmp_path / "x")])
    assert code == 2
    assert "classifier" in capsys.readouterr().err


def test_compare_writes_report_and_grid(tmp_path, sin_config_file):
    out = tmp_path / "compare"
    code = main(["compare", "--config", sin_config_file, "--data", "sin:n=150,seed=0",
                 "--models", "lls,ols", "--out", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert [row["model"] for row in report["rows"]] == ["lls", "ols"]
    assert len(pd.read_csv(out / "grid.csv")) == 3
    assert set(json.loads((out / "timings.json").read_text())) == {"lls", "ols"}
    assert "lls" in (out / "report.txt").read_text()


def test_sweep_lambda_writes_rows_and_theta_curve(tmp_path, sin_config_file):
    out = tmp_path / "sweep"
    code = main(["sweep-lambda", "--config", sin_config_file, "--data", "sin:n=200,seed=0", "--out", str(out)])
    assert code == 0
    sweep = json.loads((out / "sweep.json").read_text())
    assert [row["lambda"] for row in sweep["rows"]] == [0.0, 1.0]
    curve = pd.read_csv(out / "theta_curve.csv")
    assert list(curve.columns) == ["lambda", "x", "theta_0", "theta_1"]


def test_sweep_rejects_descending_lambdas(tmp_path, sin_config_file):
    code = main(["sweep-lambda", "--config", sin_config_file, "--data", "sin:n=100,seed=0",
                 "--lambdas", "5,1", "--out", str(tmp_path / "sweep")])
    assert code == 2
