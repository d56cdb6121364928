import json
import logging
import shutil
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from core.autodiff import LayerWeights, NetworkWeights
from core.lls import LlsModel
from core.nls import NlsClassifier, NlsModel
from infrastructure.errors import ConfigurationError, NlsError
from models.schemas import (
    FORMAT_VERSION,
    LayerDocument,
    ModelDocument,
    ModelKind,
    NetworkDocument,
    NlsConfig,
)

logger = logging.getLogger(__name__)

AnyModel = Union[NlsModel, NlsClassifier, LlsModel]


def _floats(values: np.ndarray) -> List[float]:
    return [float(v) for v in np.asarray(values).reshape(-1)]


def network_to_document(weights: NetworkWeights) -> NetworkDocument:
    layers = [
        LayerDocument(
            spec=spec,
            weight=[[float(v) for v in row] for row in layer.weight],
            bias=_floats(layer.bias),
            running_mean=None if layer.running_mean is None else _floats(layer.running_mean),
            running_var=None if layer.running_var is None else _floats(layer.running_var),
        )
        for spec, layer in zip(weights.specs, weights.layers)
    ]
    return NetworkDocument(format_version=FORMAT_VERSION, seed=weights.seed, layers=layers)


def network_from_document(doc: NetworkDocument) -> NetworkWeights:
    _check_version(doc.format_version)
    layers = []
    for index, layer in enumerate(doc.layers):
        weight = np.array(layer.weight, dtype=np.float64).reshape(layer.spec.input_width, layer.spec.output_width)
        running_var = None if layer.running_var is None else np.array(layer.running_var, dtype=np.float64)
        if running_var is not None and np.any(running_var <= 0):
            raise ConfigurationError(f"layer {index} has a non-positive running variance")
        layers.append(LayerWeights(
            weight=weight,
            bias=np.array(layer.bias, dtype=np.float64),
            running_mean=None if layer.running_mean is None else np.array(layer.running_mean, dtype=np.float64),
            running_var=running_var,
        ))
    return NetworkWeights(specs=tuple(l.spec for l in doc.layers), layers=tuple(layers), seed=doc.seed)


def _check_version(version: int) -> None:
    if version != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported model format version {version} (expected {FORMAT_VERSION})")


def model_to_document(model: AnyModel) -> ModelDocument:
    common: Dict[str, Any] = dict(
        feature_names=list(model.feature_names),
        target_name=model.target_name,
        feature_means=_floats(model.feature_means),
        feature_stds=_floats(model.feature_stds),
    )
    if isinstance(model, NlsModel):
        return ModelDocument(
            kind=ModelKind.NLS,
            config=model.config.model_dump(mode="json", by_alias=True),
            network=network_to_document(model.weights),
            intercepts=[float(model.intercept)],
            **common,
        )
    if isinstance(model, NlsClassifier):
        return ModelDocument(
            kind=ModelKind.NLS_CLASSIFIER,
            config=model.config.model_dump(mode="json", by_alias=True),
            network=network_to_document(model.weights),
            intercepts=_floats(model.intercepts),
            classes=_floats(model.classes),
            **common,
        )
    if isinstance(model, LlsModel):
        return ModelDocument(
            kind=ModelKind.LLS,
            sigma=model.sigma,
            ridge=model.ridge,
            data_source=model.source,
            train_features=[[float(v) for v in row] for row in model.features],
            train_target=_floats(model.target),
            **common,
        )
    raise ConfigurationError(f"cannot persist objects of type {type(model).__name__}")


def model_from_document(doc: ModelDocument) -> AnyModel:
    _check_version(doc.format_version)
    means = np.array(doc.feature_means, dtype=np.float64)
    stds = np.array(doc.feature_stds, dtype=np.float64)
    names = tuple(doc.feature_names)
    if doc.kind is ModelKind.LLS:
        return LlsModel(
            features=np.array(doc.train_features, dtype=np.float64).reshape(-1, len(names)),
            target=np.array(doc.train_target, dtype=np.float64),
            sigma=doc.sigma,
            ridge=doc.ridge,
            feature_means=means,
            feature_stds=stds,
            feature_names=names,
            target_name=doc.target_name,
            source=doc.data_source or "",
        )
    if doc.network is None or doc.intercepts is None or doc.config is None:
        raise ConfigurationError(f"{doc.kind.value} document lacks network, intercepts or config")
    config = NlsConfig.model_validate(doc.config)
    weights = network_from_document(doc.network)
    if doc.kind is ModelKind.NLS:
        return NlsModel(weights, doc.intercepts[0], means, stds, config, names, doc.target_name)
    return NlsClassifier(
        weights=weights,
        intercepts=np.array(doc.intercepts, dtype=np.float64),
        classes=np.array(doc.classes, dtype=np.float64),
        feature_means=means,
        feature_stds=stds,
        config=config,
        feature_names=names,
        target_name=doc.target_name,
    )


def to_json_text(payload: Union[BaseModel, Dict[str, Any], List[Any]]) -> str:
    """Deterministic JSON: floats via repr, fixed key order from the schema"""
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json", by_alias=True)
    return json.dumps(payload, indent=2, allow_nan=False) + "\n"


def save_model(model: AnyModel, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json_text(model_to_document(model)), encoding="utf-8")
    logger.info(f"Saved {type(model).__name__} to {path}")


def load_model(path: Union[str, Path]) -> AnyModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise NlsError(f"cannot read model file {path}: {e}")
    try:
        doc = ModelDocument.model_validate_json(text)
    except ValidationError as e:
        raise ConfigurationError(f"invalid model file {path}: {e}")
    return model_from_document(doc)


class ArtifactStore:
    """
    Run directory written as a unit: files are staged next to the target and
    moved into place on clean exit, discarded if the block raises.
    """

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self.staging: Path = None
        self.written: List[str] = []

    def __enter__(self):
        self.out_dir.parent.mkdir(parents=True, exist_ok=True)
        self.staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out_dir.parent))
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if exc_type:
            shutil.rmtree(self.staging, ignore_errors=True)
            return False
        self.out_dir.mkdir(parents=True, exist_ok=True)
        for name in self.written:
            shutil.move(str(self.staging / name), str(self.out_dir / name))
        shutil.rmtree(self.staging, ignore_errors=True)
        logger.info(f"Wrote {len(self.written)} files to {self.out_dir}")
        return False

    def _target(self, name: str) -> Path:
        if name not in self.written:
            self.written.append(name)
        return self.staging / name

    def write_text(self, name: str, text: str) -> None:
        self._target(name).write_text(text, encoding="utf-8")

    def write_json(self, name: str, payload) -> None:
        self.write_text(name, to_json_text(payload))

    def write_csv(self, name: str, rows: List[Dict[str, Any]]) -> None:
        pd.DataFrame(rows).to_csv(self._target(name), index=False, encoding="utf-8")

    def write_model(self, name: str, model: AnyModel) -> None:
        self.write_text(name, to_json_text(model_to_document(model)))
