"""
Differentiation and optimisation engine for the coefficient network.

The network is a stack of affine layers with optional frozen-statistics batch
normalisation, ELU or identity activations and dropout. Input-Jacobians are
carried forward as one tangent matrix per input direction; the weight gradient
of a loss that includes the squared Jacobian penalty is obtained by reverse
mode through both the primal and the tangent values, so the second-order
terms of the penalty are exact.
"""
import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from infrastructure.errors import ConfigurationError, InputError, NumericError
from models.schemas import Activation, LayerSpec

logger = logging.getLogger(__name__)

# Row-major float64 array, batch rows by units
Matrix = np.ndarray

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


class LossKind(str, Enum):
    SQUARED_ERROR = "squared_error"
    CROSS_ENTROPY = "cross_entropy"
    CONSTANT = "constant"


class HeadKind(str, Enum):
    LOCAL_LINEAR = "local_linear"   # scores = θ0 + Σ θ_k(x) x_k per group
    DIRECT = "direct"               # scores = θ0 + network output


@dataclass(frozen=True)
class LayerWeights:
    weight: Matrix                      # (input_width, output_width)
    bias: np.ndarray                    # (output_width,)
    running_mean: Optional[np.ndarray] = None
    running_var: Optional[np.ndarray] = None


@dataclass(frozen=True)
class NetworkWeights:
    specs: Tuple[LayerSpec, ...]
    layers: Tuple[LayerWeights, ...]
    seed: int = 0

    @property
    def input_width(self) -> int:
        return self.specs[0].input_width

    @property
    def output_width(self) -> int:
        return self.specs[-1].output_width

    @property
    def is_stochastic(self) -> bool:
        """True when Train mode differs from Eval mode"""
        return any(spec.use_batch_norm or spec.dropout_rate > 0 for spec in self.specs)

    def parameters(self) -> List[np.ndarray]:
        params: List[np.ndarray] = []
        for layer in self.layers:
            params.extend([layer.weight, layer.bias])
        return params

    def with_parameters(self, params: Sequence[np.ndarray]) -> "NetworkWeights":
        if len(params) != 2 * len(self.layers):
            raise InputError(f"expected {2 * len(self.layers)} parameter arrays, got {len(params)}")
        layers = tuple(
            replace(layer, weight=params[2 * i], bias=params[2 * i + 1])
            for i, layer in enumerate(self.layers)
        )
        return replace(self, layers=layers)


@dataclass(frozen=True)
class DualBatch:
    """Primal values plus one tangent matrix per seeded input direction"""
    primal: Matrix              # (n, width)
    tangents: np.ndarray        # (d, n, width)

    def jacobians(self) -> np.ndarray:
        """Per-instance Jacobians, shape (n, width, d)"""
        return np.transpose(self.tangents, (1, 2, 0))


@dataclass(frozen=True)
class AdamState:
    step: int
    first_moment: Tuple[np.ndarray, ...]
    second_moment: Tuple[np.ndarray, ...]
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def create(cls, params: Sequence[np.ndarray], learning_rate: float = 1e-3, **hyper) -> "AdamState":
        zeros = tuple(np.zeros_like(p) for p in params)
        return cls(step=0, first_moment=zeros, second_moment=zeros, learning_rate=learning_rate, **hyper)

    def reduce_learning_rate(self, factor: float) -> "AdamState":
        return replace(self, learning_rate=self.learning_rate * factor)


@dataclass(frozen=True)
class Objective:
    """One of the fixed loss shapes the engine differentiates"""
    loss: LossKind
    head: HeadKind = HeadKind.LOCAL_LINEAR
    penalty: float = 0.0
    n_groups: int = 1
    constant: float = 0.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "loss", LossKind(self.loss))
            object.__setattr__(self, "head", HeadKind(self.head))
        except ValueError as e:
            raise ConfigurationError(f"unsupported loss primitive: {e}")
        if self.penalty < 0:
            raise ConfigurationError(f"penalty must be >= 0, got {self.penalty}")
        if self.n_groups < 1:
            raise ConfigurationError("n_groups must be >= 1")


@dataclass(frozen=True)
class LossBatch:
    inputs: Matrix              # standardized features, fed to the network
    covariates: Matrix          # features on the dot-product side of the head
    target: np.ndarray          # real targets, or class indices for cross entropy


@dataclass(frozen=True)
class LossValue:
    total: float
    data: float
    penalty: Optional[float]    # None when the objective's penalty is 0


@dataclass(frozen=True)
class Gradient:
    layers: Tuple[Tuple[np.ndarray, np.ndarray], ...]
    intercepts: np.ndarray

    def as_list(self) -> List[np.ndarray]:
        flat: List[np.ndarray] = []
        for weight_grad, bias_grad in self.layers:
            flat.extend([weight_grad, bias_grad])
        flat.append(self.intercepts)
        return flat


@dataclass
class _LayerCache:
    inputs: Matrix
    input_tangents: Optional[np.ndarray]
    normalized: Matrix
    normalized_tangents: Optional[np.ndarray]
    scale: Optional[np.ndarray]
    mask: Optional[np.ndarray]


def build_specs(
    input_width: int,
    hidden_layers: Sequence[int],
    output_width: int,
    batch_norm: bool = False,
    dropout: float = 0.0,
) -> List[LayerSpec]:
    """ELU hidden layers followed by an identity output layer"""
    widths = [input_width, *hidden_layers]
    specs = [
        LayerSpec(
            input_width=widths[i],
            output_width=widths[i + 1],
            activation=Activation.ELU,
            use_batch_norm=batch_norm,
            dropout_rate=dropout,
        )
        for i in range(len(hidden_layers))
    ]
    specs.append(LayerSpec(input_width=widths[-1], output_width=output_width, activation=Activation.IDENTITY))
    return specs


def check_specs(specs: Sequence[LayerSpec]) -> None:
    if not specs:
        raise ConfigurationError("network needs at least one layer")
    for index in range(1, len(specs)):
        if specs[index].input_width != specs[index - 1].output_width:
            raise ConfigurationError(
                f"layer {index} expects width {specs[index].input_width} "
                f"but layer {index - 1} produces {specs[index - 1].output_width}"
            )


def init_weights(specs: Sequence[LayerSpec], seed: int) -> NetworkWeights:
    """Glorot-uniform weights, zero biases, unit running variances"""
    check_specs(specs)
    rng = np.random.default_rng(seed)
    layers = []
    for spec in specs:
        bound = np.sqrt(6.0 / (spec.input_width + spec.output_width))
        weight = rng.uniform(-bound, bound, size=(spec.input_width, spec.output_width))
        bias = np.zeros(spec.output_width)
        running_mean = running_var = None
        if spec.use_batch_norm:
            running_mean = np.zeros(spec.output_width)
            running_var = np.ones(spec.output_width)
        layers.append(LayerWeights(weight, bias, running_mean, running_var))
    return NetworkWeights(specs=tuple(specs), layers=tuple(layers), seed=seed)


def _activate(u: Matrix, activation: Activation) -> Matrix:
    if activation == Activation.ELU:
        return np.where(u > 0, u, np.expm1(np.minimum(u, 0.0)))
    return u


def _activation_slope(u: Matrix, activation: Activation) -> Matrix:
    if activation == Activation.ELU:
        return np.where(u > 0, 1.0, np.exp(np.minimum(u, 0.0)))
    return np.ones_like(u)


def _activation_curvature(u: Matrix, activation: Activation) -> Optional[Matrix]:
    if activation == Activation.ELU:
        return np.where(u > 0, 0.0, np.exp(np.minimum(u, 0.0)))
    return None


def _check_batch(weights: NetworkWeights, batch: Matrix) -> None:
    if batch.ndim != 2 or batch.shape[1] != weights.input_width:
        raise InputError(
            f"batch has shape {batch.shape}, network expects {weights.input_width} columns"
        )


def _propagate(
    weights: NetworkWeights,
    batch: Matrix,
    mode: Mode,
    rng: Optional[np.random.Generator],
    with_tangents: bool,
) -> Tuple[Matrix, Optional[np.ndarray], List[_LayerCache]]:
    inputs = np.asarray(batch, dtype=np.float64)
    n = inputs.shape[0]
    tangents: Optional[np.ndarray] = None
    caches: List[_LayerCache] = []

    for index, (spec, layer) in enumerate(zip(weights.specs, weights.layers)):
        z = inputs @ layer.weight + layer.bias
        z_tangents = None
        if with_tangents:
            if index == 0:
                # seeds are unit directions, so tangent j of the first layer is row j of W
                z_tangents = np.broadcast_to(layer.weight[:, None, :], (spec.input_width, n, spec.output_width))
            else:
                z_tangents = tangents @ layer.weight

        scale = None
        if spec.use_batch_norm:
            if mode is Mode.TRAIN:
                mean, var = z.mean(axis=0), z.var(axis=0)
            else:
                mean, var = layer.running_mean, layer.running_var
            scale = np.sqrt(var + BN_EPSILON)
            z = (z - mean) / scale
            if z_tangents is not None:
                z_tangents = z_tangents / scale

        out = _activate(z, spec.activation)
        out_tangents = None
        if z_tangents is not None:
            out_tangents = _activation_slope(z, spec.activation) * z_tangents

        mask = None
        if mode is Mode.TRAIN and spec.dropout_rate > 0:
            if rng is None:
                raise ConfigurationError("dropout in Train mode needs a random generator")
            keep = 1.0 - spec.dropout_rate
            mask = (rng.random(out.shape) < keep) / keep
            out = out * mask
            if out_tangents is not None:
                out_tangents = out_tangents * mask

        if not np.all(np.isfinite(out)) or (out_tangents is not None and not np.all(np.isfinite(out_tangents))):
            raise NumericError(f"non-finite values in layer {index}", layer=index)

        caches.append(_LayerCache(inputs, tangents, z, z_tangents, scale, mask))
        inputs, tangents = out, out_tangents

    return inputs, tangents, caches


def _backpropagate(
    weights: NetworkWeights,
    caches: List[_LayerCache],
    out_grad: Matrix,
    tangent_grad: Optional[np.ndarray],
) -> Tuple[Tuple[np.ndarray, np.ndarray], ...]:
    grads: List[Tuple[np.ndarray, np.ndarray]] = [None] * len(caches)
    grad, t_grad = out_grad, tangent_grad

    for index in reversed(range(len(caches))):
        spec, layer, cache = weights.specs[index], weights.layers[index], caches[index]
        if cache.mask is not None:
            grad = grad * cache.mask
            if t_grad is not None:
                t_grad = t_grad * cache.mask

        slope = _activation_slope(cache.normalized, spec.activation)
        z_grad = grad * slope
        z_t_grad = None
        if t_grad is not None:
            curvature = _activation_curvature(cache.normalized, spec.activation)
            if curvature is not None:
                z_grad = z_grad + curvature * np.sum(t_grad * cache.normalized_tangents, axis=0)
            z_t_grad = t_grad * slope

        if cache.scale is not None:
            z_grad = z_grad / cache.scale
            if z_t_grad is not None:
                z_t_grad = z_t_grad / cache.scale

        weight_grad = cache.inputs.T @ z_grad
        if z_t_grad is not None:
            if index == 0:
                weight_grad = weight_grad + z_t_grad.sum(axis=1)
            else:
                weight_grad = weight_grad + np.einsum("jni,jno->io", cache.input_tangents, z_t_grad)
        grads[index] = (weight_grad, z_grad.sum(axis=0))

        if index > 0:
            grad = z_grad @ layer.weight.T
            t_grad = None if z_t_grad is None else z_t_grad @ layer.weight.T

    return tuple(grads)


def forward(
    weights: NetworkWeights,
    batch: Matrix,
    mode: Mode = Mode.EVAL,
    rng: Optional[np.random.Generator] = None,
) -> Matrix:
    _check_batch(weights, batch)
    out, _, _ = _propagate(weights, batch, Mode(mode), rng, with_tangents=False)
    return out


def forward_with_input_jacobian(weights: NetworkWeights, batch: Matrix) -> Tuple[Matrix, DualBatch]:
    """Eval-mode outputs with exact per-instance input-Jacobians"""
    _check_batch(weights, batch)
    out, tangents, _ = _propagate(weights, batch, Mode.EVAL, None, with_tangents=True)
    return out, DualBatch(primal=out, tangents=np.ascontiguousarray(tangents))


def update_normalization(weights: NetworkWeights, batch: Matrix, momentum: float = BN_MOMENTUM) -> NetworkWeights:
    """Move running statistics toward the batch statistics of every normalised layer"""
    if not any(spec.use_batch_norm for spec in weights.specs):
        return weights
    _check_batch(weights, batch)
    inputs = np.asarray(batch, dtype=np.float64)
    layers = []
    for spec, layer in zip(weights.specs, weights.layers):
        z = inputs @ layer.weight + layer.bias
        if spec.use_batch_norm:
            mean, var = z.mean(axis=0), z.var(axis=0)
            layer = replace(
                layer,
                running_mean=(1.0 - momentum) * layer.running_mean + momentum * mean,
                running_var=(1.0 - momentum) * layer.running_var + momentum * var,
            )
            z = (z - mean) / np.sqrt(var + BN_EPSILON)
        inputs = _activate(z, spec.activation)
        layers.append(layer)
    return replace(weights, layers=tuple(layers))


def _check_objective(weights: NetworkWeights, intercepts: np.ndarray, objective: Objective, batch: LossBatch) -> None:
    if intercepts.shape != (objective.n_groups,):
        raise ConfigurationError(f"expected {objective.n_groups} intercepts, got shape {intercepts.shape}")
    if objective.head is HeadKind.LOCAL_LINEAR:
        width = batch.covariates.shape[1]
        if weights.output_width != objective.n_groups * width:
            raise ConfigurationError(
                f"local-linear head needs {objective.n_groups * width} network outputs, "
                f"network has {weights.output_width}"
            )
    elif weights.output_width != objective.n_groups:
        raise ConfigurationError(f"direct head needs {objective.n_groups} outputs, network has {weights.output_width}")
    if batch.inputs.shape[0] == 0:
        raise InputError("empty batch")


def head_scores(objective: Objective, phi: Matrix, intercepts: np.ndarray, covariates: Matrix) -> Matrix:
    if objective.head is HeadKind.LOCAL_LINEAR:
        slopes = phi.reshape(phi.shape[0], objective.n_groups, -1)
        return intercepts + np.einsum("ngd,nd->ng", slopes, covariates)
    return intercepts + phi


def _data_loss(objective: Objective, scores: Matrix, target: np.ndarray) -> Tuple[float, Matrix]:
    n = scores.shape[0]
    bad = np.flatnonzero(~np.all(np.isfinite(scores), axis=1))
    if bad.size:
        raise NumericError(f"non-finite prediction for instance {bad[0]}", instance=int(bad[0]))
    if objective.loss is LossKind.SQUARED_ERROR:
        residual = scores[:, 0] - target
        return float(np.mean(residual ** 2)), (2.0 / n * residual)[:, None]
    labels = target.astype(int)
    rows = np.arange(n)
    loss = -float(np.mean(log_softmax(scores, axis=1)[rows, labels]))
    grad = softmax(scores, axis=1)
    grad[rows, labels] -= 1.0
    return loss, grad / n


def loss_gradient(
    weights: NetworkWeights,
    intercepts: np.ndarray,
    objective: Objective,
    batch: LossBatch,
    mode: Mode = Mode.EVAL,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[LossValue, Gradient]:
    """Value and exact weight gradient of data loss + penalty * mean squared Jacobian norm"""
    _check_batch(weights, batch.inputs)
    _check_objective(weights, intercepts, objective, batch)
    n = batch.inputs.shape[0]

    if objective.loss is LossKind.CONSTANT:
        zero = Gradient(
            layers=tuple((np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in weights.layers),
            intercepts=np.zeros_like(intercepts),
        )
        return LossValue(objective.constant, objective.constant, None), zero

    needs_tangents = objective.penalty > 0
    stochastic = mode is Mode.TRAIN and weights.is_stochastic

    phi, tangents, caches = _propagate(
        weights, batch.inputs, Mode(mode), rng, with_tangents=needs_tangents and not stochastic
    )
    scores = head_scores(objective, phi, intercepts, batch.covariates)
    data, score_grad = _data_loss(objective, scores, batch.target)

    intercept_grad = score_grad.sum(axis=0)
    if objective.head is HeadKind.LOCAL_LINEAR:
        phi_grad = (score_grad[:, :, None] * batch.covariates[:, None, :]).reshape(n, -1)
    else:
        phi_grad = score_grad

    penalty = None
    if not needs_tangents:
        layer_grads = _backpropagate(weights, caches, phi_grad, None)
    else:
        # the penalty is always an Eval-mode quantity
        if stochastic:
            _, tangents, penalty_caches = _propagate(weights, batch.inputs, Mode.EVAL, None, with_tangents=True)
        else:
            penalty_caches = caches
        penalty = float(np.sum(tangents ** 2) / n)
        tangent_grad = (2.0 * objective.penalty / n) * tangents
        if stochastic:
            data_grads = _backpropagate(weights, caches, phi_grad, None)
            penalty_grads = _backpropagate(weights, penalty_caches, np.zeros_like(phi), tangent_grad)
            layer_grads = tuple(
                (dw + pw, db + pb) for (dw, db), (pw, pb) in zip(data_grads, penalty_grads)
            )
        else:
            layer_grads = _backpropagate(weights, caches, phi_grad, tangent_grad)

    total = data + objective.penalty * (penalty or 0.0)
    if not np.isfinite(total):
        raise NumericError(f"non-finite loss {total}")
    return LossValue(total, data, penalty), Gradient(layers=layer_grads, intercepts=intercept_grad)


def adam_step(
    state: AdamState,
    params: Sequence[np.ndarray],
    gradient: Sequence[np.ndarray],
) -> Tuple[List[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays and state"""
    if len(params) != len(gradient) or len(params) != len(state.first_moment):
        raise InputError("parameter, gradient and moment lists differ in length")
    for index, (p, g) in enumerate(zip(params, gradient)):
        if p.shape != g.shape:
            raise InputError(f"gradient {index} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter array {index}")

    step = state.step + 1
    correction1 = 1.0 - state.beta1 ** step
    correction2 = 1.0 - state.beta2 ** step
    new_params, first, second = [], [], []
    for p, g, m, v in zip(params, gradient, state.first_moment, state.second_moment):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        update = state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        new_params.append(p - update)
        first.append(m)
        second.append(v)
    return new_params, replace(state, step=step, first_moment=tuple(first), second_moment=tuple(second))
