from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator

FORMAT_VERSION = 1


def _split_list(value: Any) -> Any:
    """Accept '100, 300' style strings from key-value config files"""
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class Activation(str, Enum):
    ELU = "elu"
    IDENTITY = "identity"


class LayerSpec(BaseModel):
    input_width: int = Field(..., ge=1)
    output_width: int = Field(..., ge=1)
    activation: Activation = Activation.ELU
    use_batch_norm: bool = False
    dropout_rate: float = Field(0.0, ge=0.0, lt=1.0)

    model_config = ConfigDict(frozen=True)


class NlsConfig(BaseModel):
    """Training configuration for the smoother and its network baseline"""
    hidden_layers: List[int] = Field(default_factory=lambda: [100])
    penalty: float = Field(0.0, ge=0.0, alias="lambda", description="Penalization strength")
    learning_rate: float = Field(1e-3, gt=0.0)
    batch_size: int = Field(128, ge=1)
    patience: int = Field(50, ge=1)
    validation_fraction: float = Field(0.1, gt=0.0, lt=1.0)
    max_epochs: int = Field(2000, ge=1)
    seed: int = 0
    batch_norm: bool = False
    dropout: float = Field(0.0, ge=0.0, lt=1.0)
    lr_reduce_patience: int = Field(20, ge=1)
    lr_reduce_factor: float = Field(0.5, gt=0.0, le=1.0)

    model_config = ConfigDict(populate_by_name=True, frozen=True, extra="forbid")

    @field_validator("hidden_layers", mode="before")
    @classmethod
    def parse_hidden_layers(cls, v):
        return _split_list(v)

    @field_validator("hidden_layers")
    @classmethod
    def positive_widths(cls, v):
        if any(width < 1 for width in v):
            raise ValueError("hidden layer widths must be >= 1")
        return v

    def with_changes(self, **changes: Any) -> "NlsConfig":
        """Validated copy; model_copy would skip the field constraints"""
        return NlsConfig.model_validate({**self.model_dump(), **changes})


class StopReason(str, Enum):
    PATIENCE = "patience"
    MAX_EPOCHS = "max_epochs"
    ANALYTIC_LIMIT = "analytic_limit"


class TrainTrace(BaseModel):
    """Per-epoch history; epoch 0 is the state before any update"""
    train_loss: List[float] = Field(default_factory=list)
    validation_loss: List[float] = Field(default_factory=list)
    penalty: List[float] = Field(default_factory=list)
    learning_rate: List[float] = Field(default_factory=list)
    best_epoch: int = 0
    stop_reason: StopReason = StopReason.MAX_EPOCHS

    @computed_field
    @property
    def epochs(self) -> int:
        return max(len(self.validation_loss) - 1, 0)

    @computed_field
    @property
    def best_validation_loss(self) -> Optional[float]:
        return self.validation_loss[self.best_epoch] if self.validation_loss else None


class Explanation(BaseModel):
    instance: List[float]
    intercept: float
    coefficients: List[float]
    contributions: List[float]
    prediction: float
    feature_names: List[str]


class ExtensionRow(BaseModel):
    index: int
    neighbor_index: int
    extended_prediction: float
    true_prediction: float
    gap: float = Field(..., ge=0.0)


class ExtensionReport(BaseModel):
    rows: List[ExtensionRow]
    mean_gap: float = Field(..., ge=0.0)


class GridSpec(BaseModel):
    layers: List[int] = Field(default_factory=lambda: [1, 3, 5], min_length=1)
    widths: List[int] = Field(default_factory=lambda: [100, 300, 500], min_length=1)
    sigmas: List[float] = Field(default_factory=lambda: [0.1, 1.0, 10.0, 100.0, 1000.0], min_length=1)
    lambdas: List[float] = Field(default_factory=lambda: [0.0], min_length=1)

    model_config = ConfigDict(frozen=True)

    @field_validator("layers", "widths", "sigmas", "lambdas", mode="before")
    @classmethod
    def parse_lists(cls, v):
        return _split_list(v)

    @field_validator("sigmas")
    @classmethod
    def positive_sigmas(cls, v):
        if any(sigma <= 0 for sigma in v):
            raise ValueError("kernel bandwidths must be > 0")
        return v

    @field_validator("lambdas")
    @classmethod
    def nonnegative_lambdas(cls, v):
        if any(value < 0 for value in v):
            raise ValueError("penalization strengths must be >= 0")
        return v


class ModelKind(str, Enum):
    NLS = "nls"
    NLS_CLASSIFIER = "nls_classifier"
    LLS = "lls"


class RunConfig(BaseModel):
    """Everything a CLI command reads from one key-value config file"""
    model: ModelKind = ModelKind.NLS
    target: str = "y"
    test_fraction: float = Field(0.1, gt=0.0, lt=1.0)
    folds: int = Field(0, ge=0, description="0 for a holdout split, otherwise k >= 2")
    sigma: Optional[float] = Field(None, gt=0.0)
    ridge: float = Field(1e-8, ge=0.0)
    nls: NlsConfig = Field(default_factory=NlsConfig)
    grid: GridSpec = Field(default_factory=GridSpec)

    model_config = ConfigDict(extra="forbid")

    @field_validator("folds")
    @classmethod
    def fold_count(cls, v):
        if v == 1:
            raise ValueError("folds must be 0 (holdout) or >= 2")
        return v


class EvalMetrics(BaseModel):
    n: int
    mse: float = Field(..., ge=0.0)
    mae: float = Field(..., ge=0.0)
    mse_standard_error: float = Field(..., ge=0.0)
    mae_standard_error: float = Field(..., ge=0.0)
    accuracy: Optional[float] = None
    log_loss: Optional[float] = None


class ReportRow(BaseModel):
    model: str
    hyperparameters: Dict[str, Any]
    test_mse: float = Field(..., ge=0.0)
    test_mae: float = Field(..., ge=0.0)
    mse_standard_error: float = Field(..., ge=0.0)
    mae_standard_error: float = Field(..., ge=0.0)
    avg_squared_gradient: Optional[float] = None
    # wall-clock, kept out of the deterministic report file
    fit_seconds: float = Field(0.0, ge=0.0, exclude=True)


class GridCell(BaseModel):
    model: str
    hyperparameters: Dict[str, Any]
    seed: int
    validation_mse: float
    fold: Optional[int] = None


class ExperimentReport(BaseModel):
    dataset: str
    seed: int
    protocol: str
    standard_error_definition: str
    rows: List[ReportRow]
    grid: List[GridCell]


class SweepRow(BaseModel):
    penalty: float = Field(..., alias="lambda")
    epochs: int
    train_mse: float
    test_mse: float
    train_avg_squared_gradient: float
    test_avg_squared_gradient: float
    extension_mean_gap: Optional[float] = None

    model_config = ConfigDict(populate_by_name=True)


class SweepReport(BaseModel):
    dataset: str
    seed: int
    rows: List[SweepRow]


class LayerDocument(BaseModel):
    spec: LayerSpec
    weight: List[List[float]]
    bias: List[float]
    running_mean: Optional[List[float]] = None
    running_var: Optional[List[float]] = None


class NetworkDocument(BaseModel):
    format_version: int = FORMAT_VERSION
    seed: int
    layers: List[LayerDocument]


class ModelDocument(BaseModel):
    format_version: int = FORMAT_VERSION
    kind: ModelKind
    feature_names: List[str]
    target_name: str
    feature_means: List[float]
    feature_stds: List[float]
    config: Optional[Dict[str, Any]] = None
    network: Optional[NetworkDocument] = None
    intercepts: Optional[List[float]] = None
    classes: Optional[List[float]] = None
    sigma: Optional[float] = None
    ridge: Optional[float] = None
    data_source: Optional[str] = None
    train_features: Optional[List[List[float]]] = None
    train_target: Optional[List[float]] = None


class PredictRequest(BaseModel):
    instances: List[List[float]] = Field(..., min_length=1)

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "instances": [[1.5], [3.0]]
            }
        }
    )


class PredictResponse(BaseModel):
    predictions: List[float]


class ExplainResponse(BaseModel):
    explanations: List[Explanation]


class ModelInfo(BaseModel):
    kind: ModelKind
    feature_names: List[str]
    target_name: str
    penalty: Optional[float] = None
