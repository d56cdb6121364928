import os
import sys
from dataclasses import replace

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from core.autodiff import build_specs, init_weights  # noqa: E402
from core.nls import NlsModel  # noqa: E402
from models.schemas import Activation, LayerSpec, NlsConfig  # noqa: E402


def constant_model(intercept, slopes, hidden=(4,)):
    """NLS model whose coefficients do not depend on x: zero weight matrices, output bias = slopes"""
    slopes = np.asarray(slopes, dtype=np.float64)
    d = slopes.size
    weights = init_weights(build_specs(d, list(hidden), d), seed=0)
    layers = [replace(l, weight=np.zeros_like(l.weight), bias=np.zeros_like(l.bias)) for l in weights.layers]
    layers[-1] = replace(layers[-1], bias=slopes.copy())
    return NlsModel(
        weights=replace(weights, layers=tuple(layers)),
        intercept=float(intercept),
        feature_means=np.zeros(d),
        feature_stds=np.ones(d),
        config=NlsConfig(),
        feature_names=tuple(f"x{i + 1}" for i in range(d)),
    )


def linear_theta_model(a):
    """1-d model with θ_1(x) = a·x: identity layers, no bias"""
    specs = [LayerSpec(input_width=1, output_width=1, activation=Activation.IDENTITY)] * 2
    weights = init_weights(specs, 0).with_parameters([np.array([[a]]), np.zeros(1), np.ones((1, 1)), np.zeros(1)])
    return NlsModel(weights, 0.0, np.zeros(1), np.ones(1), NlsConfig(), ("x",))


@pytest.fixture
def small_config():
    return NlsConfig(hidden_layers=[8], max_epochs=15, patience=5, batch_size=32, learning_rate=0.01, seed=0)


@pytest.fixture
def sin_config_file(tmp_path):
    path = tmp_path / "sin.cfg"
    path.write_text(
        "model = nls\n"
        "hidden_layers = 8\n"
        "lambda = 0\n"
        "max_epochs = 5\n"
        "patience = 5\n"
        "batch_size = 32\n"
        "seed = 0\n"
        "test_fraction = 0.2\n"
        "grid_layers = 1\n"
        "grid_widths = 4\n"
        "grid_sigmas = 1, 100\n"
        "lambdas = 0, 1\n"
    )
    return str(path)
