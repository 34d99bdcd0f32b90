"""Dense multilayer perceptron built from scratch on numpy.

Forward map, mean-squared-error loss, reverse-mode gradients, SGD / Adam /
RMSprop updates, learning-rate schedules, and JSON serialization. Everything
runs in double precision; option-price targets need ~1e-8 resolution.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, EmptyInput, FormatError, ShapeMismatch

MODEL_FORMAT_VERSION = 1

LEAKY_RELU_SLOPE = 0.01
ELU_ALPHA = 1.0

ACTIVATIONS = ("relu", "sigmoid", "leaky_relu", "tanh", "elu", "identity")
INIT_SCHEMES = ("uniform", "glorot_uniform", "he_uniform")


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if name == "leaky_relu":
        return np.where(z > 0, z, LEAKY_RELU_SLOPE * z)
    if name == "tanh":
        return np.tanh(z)
    if name == "elu":
        return np.where(z > 0, z, ELU_ALPHA * np.expm1(z))
    if name == "identity":
        return z
    raise DomainError(f"unknown activation {name!r}")


def _activate_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Derivative w.r.t. the pre-activation z (a is the activation output)."""
    if name == "relu":
        return (z > 0).astype(float)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_RELU_SLOPE)
    if name == "tanh":
        return 1.0 - a * a
    if name == "elu":
        return np.where(z > 0, 1.0, a + ELU_ALPHA)
    if name == "identity":
        return np.ones_like(z)
    raise DomainError(f"unknown activation {name!r}")


@dataclass
class MlpModel:
    """Layer weights W_l (fan_out x fan_in), biases b_l, and activation names."""

    layer_sizes: list[int]
    activations: list[str]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        n_layers = len(self.layer_sizes) - 1
        if n_layers < 1:
            raise DomainError("model needs at least an input and an output size")
        if len(self.activations) != n_layers:
            raise ShapeMismatch("one activation required per weight layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_sizes[l + 1], self.layer_sizes[l]):
                raise ShapeMismatch(
                    f"layer {l}: weight shape {w.shape} does not chain "
                    f"{self.layer_sizes[l]} -> {self.layer_sizes[l + 1]}"
                )
            if b.shape != (self.layer_sizes[l + 1],):
                raise ShapeMismatch(f"layer {l}: bias shape {b.shape} invalid")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "MlpModel":
        return MlpModel(
            layer_sizes=list(self.layer_sizes),
            activations=list(self.activations),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            training_meta=dict(self.training_meta),
        )


def init(
    layer_sizes: list[int],
    activations: list[str] | str,
    scheme: str = "glorot_uniform",
    seed: int = 0,
) -> MlpModel:
    """Create a model with scheme-dependent uniform weights and zero biases."""
    if len(layer_sizes) < 2:
        raise DomainError("need at least input and output layer sizes")
    if any(s < 1 for s in layer_sizes):
        raise DomainError(f"zero-width layer in {layer_sizes}")
    n_layers = len(layer_sizes) - 1
    if isinstance(activations, str):
        activations = [activations] * (n_layers - 1) + ["identity"]
    for a in activations:
        if a not in ACTIVATIONS:
            raise DomainError(f"unknown activation {a!r}")
    if scheme not in INIT_SCHEMES:
        raise DomainError(f"unknown init scheme {scheme!r}; expected {INIT_SCHEMES}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for l in range(n_layers):
        fan_in, fan_out = layer_sizes[l], layer_sizes[l + 1]
        if scheme == "uniform":
            limit = 0.05
        elif scheme == "glorot_uniform":
            limit = math.sqrt(6.0 / (fan_in + fan_out))
        else:
            limit = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(
        layer_sizes=list(layer_sizes),
        activations=list(activations),
        weights=weights,
        biases=biases,
        training_meta={"init_scheme": scheme, "init_seed": seed},
    )


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Evaluate one input vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n_inputs,):
        raise ShapeMismatch(f"expected input of shape ({model.n_inputs},), got {x.shape}")
    return forward_batch(model, x[None, :])[0]


def forward_batch(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Evaluate a batch; row i equals forward(model, X[i]) exactly."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise ShapeMismatch(
            f"expected batch of shape (n, {model.n_inputs}), got {X.shape}"
        )
    a = X
    for w, b, act in zip(model.weights, model.biases, model.activations):
        a = _activate(act, a @ w.T + b)
    return a


def _forward_cached(
    model: MlpModel,
    X: np.ndarray,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
):
    """Forward pass retaining per-layer pre/post activations for backprop.

    Dropout (inverted scaling) is applied to hidden activations only when a
    positive rate and an rng are supplied, i.e. in training mode.
    """
    zs, activs, masks = [], [X], []
    a = X
    n_layers = len(model.weights)
    for l, (w, b, act) in enumerate(zip(model.weights, model.biases, model.activations)):
        z = a @ w.T + b
        a = _activate(act, z)
        mask = None
        if dropout_rate > 0.0 and rng is not None and l < n_layers - 1:
            keep = 1.0 - dropout_rate
            mask = (rng.uniform(size=a.shape) < keep) / keep
            a = a * mask
        zs.append(z)
        activs.append(a)
        masks.append(mask)
    return zs, activs, masks


def loss_mse(predictions: np.ndarray, targets: np.ndarray) -> float:
    predictions = np.asarray(predictions, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if predictions.shape != targets.shape:
        raise ShapeMismatch(
            f"prediction shape {predictions.shape} != target shape {targets.shape}"
        )
    if predictions.size == 0:
        raise EmptyInput("loss requires at least one element")
    diff = predictions - targets
    return float(np.mean(diff * diff))


def _backprop_from_cache(model, X, Y, zs, activs, masks):
    n = X.shape[0]
    grad_w = [None] * len(model.weights)
    grad_b = [None] * len(model.weights)
    # d loss / d output for the mean batch MSE: 2 (y_hat - y) / (n * n_out)
    delta = 2.0 * (activs[-1] - Y) / Y.size
    for l in range(len(model.weights) - 1, -1, -1):
        if masks[l] is not None:
            delta = delta * masks[l]
        delta = delta * _activate_grad(model.activations[l], zs[l], activs[l + 1])
        grad_w[l] = delta.T @ activs[l]
        grad_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = delta @ model.weights[l]
    return grad_w, grad_b


def backprop(model: MlpModel, X: np.ndarray, Y: np.ndarray):
    """Exact gradients of the mean batch MSE w.r.t. every weight and bias."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise ShapeMismatch(f"bad input shape {X.shape}")
    if Y.ndim != 2 or Y.shape != (X.shape[0], model.n_outputs):
        raise ShapeMismatch(f"bad target shape {Y.shape}")
    zs, activs, masks = _forward_cached(model, X)
    return _backprop_from_cache(model, X, Y, zs, activs, masks)


@dataclass
class OptimizerState:
    kind: str
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rms_decay: float = 0.9
    step_count: int = 0
    m_w: list = field(default_factory=list)
    m_b: list = field(default_factory=list)
    v_w: list = field(default_factory=list)
    v_b: list = field(default_factory=list)


def make_optimizer(kind: str, model: MlpModel, **hyper) -> OptimizerState:
    kind = kind.lower()
    if kind not in ("sgd", "adam", "rmsprop"):
        raise DomainError(f"unknown optimizer {kind!r}")
    state = OptimizerState(kind=kind, **hyper)
    if kind in ("adam", "rmsprop"):
        state.v_w = [np.zeros_like(w) for w in model.weights]
        state.v_b = [np.zeros_like(b) for b in model.biases]
    if kind == "adam":
        state.m_w = [np.zeros_like(w) for w in model.weights]
        state.m_b = [np.zeros_like(b) for b in model.biases]
    return state


def step(model: MlpModel, gradients, opt: OptimizerState, lr: float):
    """Apply one parameter update in place; returns (model, opt)."""
    grad_w, grad_b = gradients
    if len(grad_w) != len(model.weights):
        raise ShapeMismatch("gradient layer count mismatch")
    opt.step_count += 1
    t = opt.step_count
    for l in range(len(model.weights)):
        for params, grads, m_buf, v_buf in (
            (model.weights, grad_w, opt.m_w, opt.v_w),
            (model.biases, grad_b, opt.m_b, opt.v_b),
        ):
            g = grads[l]
            if g.shape != params[l].shape:
                raise ShapeMismatch(f"gradient shape {g.shape} != parameter shape")
            if opt.kind == "sgd":
                params[l] -= lr * g
            elif opt.kind == "rmsprop":
                v_buf[l] *= opt.rms_decay
                v_buf[l] += (1.0 - opt.rms_decay) * g * g
                params[l] -= lr * g / (np.sqrt(v_buf[l]) + opt.eps)
            else:  # adam
                m_buf[l] *= opt.beta1
                m_buf[l] += (1.0 - opt.beta1) * g
                v_buf[l] *= opt.beta2
                v_buf[l] += (1.0 - opt.beta2) * g * g
                m_hat = m_buf[l] / (1.0 - opt.beta1**t)
                v_hat = v_buf[l] / (1.0 - opt.beta2**t)
                params[l] -= lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    return model, opt


@dataclass(frozen=True)
class LrSchedule:
    """Learning-rate schedule; `kind` selects which parameters apply.

    constant: eta. step_decay: eta0 * factor^(epoch // every_n_epochs).
    exponential: geometric ramp eta0 -> eta_final over total_steps.
    cyclical: triangular wave between eta_min and eta_max, period cycle_len.
    """

    kind: str
    eta: float = 1e-3
    eta_final: float = 1e-5
    factor: float = 0.5
    every_n_epochs: int = 10
    total_steps: int = 1
    cycle_len: int = 200

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "step_decay", "exponential", "cyclical"):
            raise DomainError(f"unknown schedule kind {self.kind!r}")
        if self.eta <= 0 or self.eta_final <= 0:
            raise DomainError("learning rates must be positive")
        if self.kind == "cyclical":
            if self.cycle_len < 2:
                raise DomainError("cycle_len must be >= 2")
            if self.eta_final > self.eta:
                raise DomainError("cyclical needs eta_min (eta_final) <= eta_max (eta)")


def lr_at(schedule: LrSchedule, step_index: int, steps_per_epoch: int = 1) -> float:
    if step_index < 0 or steps_per_epoch < 1:
        raise DomainError("indices must be non-negative and steps_per_epoch >= 1")
    if schedule.kind == "constant":
        return schedule.eta
    if schedule.kind == "step_decay":
        epoch = step_index // steps_per_epoch
        return schedule.eta * schedule.factor ** (epoch // schedule.every_n_epochs)
    if schedule.kind == "exponential":
        frac = min(step_index, schedule.total_steps) / schedule.total_steps
        return schedule.eta * (schedule.eta_final / schedule.eta) ** frac
    # cyclical: eta_final is the trough, eta the peak
    pos = step_index % schedule.cycle_len
    half = schedule.cycle_len / 2.0
    frac = 1.0 - abs(pos - half) / half
    return schedule.eta_final + (schedule.eta - schedule.eta_final) * frac


def save_model(model: MlpModel, path: str | os.PathLike) -> None:
    """Serialize to JSON with full round-trip float precision (atomic write)."""
    path = os.fspath(path)
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "layer_sizes": model.layer_sizes,
        "activations": model.activations,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "training_meta": model.training_meta,
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    os.replace(tmp, path)


def load_model(path: str | os.PathLike) -> MlpModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid model file {path}: {exc}") from exc
    try:
        version = doc["format_version"]
        if version != MODEL_FORMAT_VERSION:
            raise FormatError(f"unsupported model format version {version}")
        model = MlpModel(
            layer_sizes=list(doc["layer_sizes"]),
            activations=list(doc["activations"]),
            weights=[np.asarray(w, dtype=float) for w in doc["weights"]],
            biases=[np.asarray(b, dtype=float) for b in doc["biases"]],
            training_meta=doc.get("training_meta", {}),
        )
    except (KeyError, TypeError, ShapeMismatch) as exc:
        raise FormatError(f"malformed model file {path}: {exc}") from exc
    return model
