"""
Multilayer perceptrons for the encoder, predictor, discriminator and
adversary, their first-order optimizers, and the text checkpoint codec.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, NumericError, ShapeError

logger = logging.getLogger(__name__)

ROLES = ("encoder", "predictor", "discriminator", "adversary")
ACTIVATIONS = {
    "relu": ad.relu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "identity": lambda var: var,
}
OPTIMIZERS = ("sgd_momentum", "adam")

CHECKPOINT_HEADER = "ARLCKPT v1"


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple = ()
    output_dim: int = 2
    hidden_activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        dims = self.layer_dims
        if any(d < 1 for d in dims):
            raise ValueError(f"All layer dimensions must be >= 1, got {dims}")
        if self.hidden_activation not in ACTIVATIONS:
            raise ValueError(
                f"Unknown hidden activation '{self.hidden_activation}' "
                f"(expected one of {', '.join(ACTIVATIONS)})"
            )

    @property
    def layer_dims(self):
        return (int(self.input_dim), *self.hidden_dims, int(self.output_dim))

    def parameter_count(self):
        dims = self.layer_dims
        return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))


class MlpModel:
    """Affine layers with a hidden activation; the last layer emits raw logits."""

    def __init__(self, spec, role, params):
        if role not in ROLES:
            raise ValueError(f"Unknown role '{role}' (expected one of {', '.join(ROLES)})")
        self.spec = spec
        self.role = role
        self.params = params
        self.frozen = False

    @property
    def num_layers(self):
        return len(self.spec.layer_dims) - 1

    def layer_keys(self, index):
        return f"{self.role}.layer{index}.weight", f"{self.role}.layer{index}.bias"

    def apply(self, tape, x):
        """Trace the forward pass on `tape`; frozen models contribute constants only."""
        if x.shape[-1] != self.spec.input_dim:
            raise ShapeError(
                f"{self.role}: input shape {x.shape} does not match input_dim {self.spec.input_dim}"
            )
        activation = ACTIVATIONS[self.spec.hidden_activation]
        watch = tape.constant if self.frozen else None
        h = x
        for i in range(self.num_layers):
            weight_key, bias_key = self.layer_keys(i)
            if watch is None:
                weight = tape.leaf(self.params[weight_key], weight_key)
                bias = tape.leaf(self.params[bias_key], bias_key)
            else:
                weight = watch(self.params[weight_key])
                bias = watch(self.params[bias_key])
            h = ad.add(ad.matmul(h, weight), bias)
            if i < self.num_layers - 1:
                h = activation(h)
        return h

    def copy(self):
        clone = MlpModel(self.spec, self.role, {k: v.copy() for k, v in self.params.items()})
        clone.frozen = self.frozen
        return clone

    def get_flat(self):
        return np.concatenate([v.reshape(-1) for v in self.params.values()])

    def set_flat(self, vector):
        vector = np.asarray(vector, dtype=np.float64)
        offset = 0
        for key, value in self.params.items():
            size = value.size
            self.params[key] = vector[offset:offset + size].reshape(value.shape).copy()
            offset += size
        if offset != vector.size:
            raise ShapeError(f"{self.role}: flat vector has {vector.size} entries, model has {offset}")


def mlp_new(spec, role="encoder"):
    """Glorot-uniform weights and zero biases, reproducible from `spec.seed`."""
    rng = np.random.default_rng(spec.seed)
    dims = spec.layer_dims
    params = {}
    model = MlpModel(spec, role, params)
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weight_key, bias_key = model.layer_keys(i)
        params[weight_key] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        params[bias_key] = np.zeros(fan_out)
    return model


def forward(model, batch):
    """Logits for a [B x input_dim] batch as a plain array."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != model.spec.input_dim:
        raise ShapeError(
            f"{model.role}: batch shape {batch.shape} does not match input_dim {model.spec.input_dim}"
        )
    tape = ad.Tape()
    frozen = model.frozen
    model.frozen = True
    try:
        return model.apply(tape, tape.constant(batch)).value.copy()
    finally:
        model.frozen = frozen


# --- optimizers -------------------------------------------------------------

@dataclass(frozen=True)
class OptimizerSettings:
    kind: str = "adam"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ValueError(f"Unknown optimizer '{self.kind}' (expected one of {', '.join(OPTIMIZERS)})")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be >= 0")


@dataclass
class OptimizerState:
    settings: OptimizerSettings
    buffers: dict = field(default_factory=dict)
    step_count: int = 0


def optimizer_new(settings):
    if settings.kind == "adam":
        return OptimizerState(settings, {"m": {}, "v": {}})
    return OptimizerState(settings, {"velocity": {}})


def step(optimizer, params, grads):
    """
    One update of `params` (dict key -> array) from `grads` (same keys; a
    missing key counts as a zero gradient). Weight decay is decoupled: the
    parameter is multiplied by (1 - lr * wd) before the gradient step.
    """
    for key, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"Non-finite gradient for '{key}' at step {optimizer.step_count + 1}")

    s = optimizer.settings
    optimizer.step_count += 1
    t = optimizer.step_count
    decay = 1.0 - s.learning_rate * s.weight_decay
    updated = {}

    for key, value in params.items():
        grad = grads.get(key)
        if grad is None:
            grad = np.zeros_like(value)
        elif grad.shape != value.shape:
            raise ShapeError(f"Gradient for '{key}' has shape {grad.shape}, parameter has {value.shape}")

        new_value = value * decay
        if s.kind == "sgd_momentum":
            velocity = s.momentum * optimizer.buffers["velocity"].get(key, 0.0) + grad
            optimizer.buffers["velocity"][key] = velocity
            new_value = new_value - s.learning_rate * velocity
        else:
            m = s.beta1 * optimizer.buffers["m"].get(key, 0.0) + (1.0 - s.beta1) * grad
            v = s.beta2 * optimizer.buffers["v"].get(key, 0.0) + (1.0 - s.beta2) * grad * grad
            optimizer.buffers["m"][key] = m
            optimizer.buffers["v"][key] = v
            m_hat = m / (1.0 - s.beta1 ** t)
            v_hat = v / (1.0 - s.beta2 ** t)
            new_value = new_value - s.learning_rate * m_hat / (np.sqrt(v_hat) + s.eps)
        updated[key] = new_value

    return updated


# --- checkpoints ------------------------------------------------------------

def _format_values(array):
    return " ".join(format(float(v), ".17g") for v in array.reshape(-1))


def save_checkpoint(path, models, meta=None):
    """Write models (and optional string metadata) in the ARLCKPT v1 text format."""
    lines = [CHECKPOINT_HEADER]
    for key, value in (meta or {}).items():
        lines.append(f"meta {key} {value}")
    for model in models:
        spec = model.spec
        lines.append(f"model {model.role}")
        lines.append(
            f"spec input_dim={spec.input_dim} "
            f"hidden_dims={','.join(str(d) for d in spec.hidden_dims)} "
            f"output_dim={spec.output_dim} hidden_activation={spec.hidden_activation} seed={spec.seed}"
        )
        for key, value in model.params.items():
            shape = ",".join(str(d) for d in value.shape)
            lines.append(f"param {key} {shape} {_format_values(value)}")
        lines.append("end")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def _parse_spec(fields, line_no):
    try:
        values = dict(item.split("=", 1) for item in fields)
        hidden = tuple(int(d) for d in values["hidden_dims"].split(",") if d)
        return MlpSpec(
            input_dim=int(values["input_dim"]),
            hidden_dims=hidden,
            output_dim=int(values["output_dim"]),
            hidden_activation=values["hidden_activation"],
            seed=int(values["seed"]),
        )
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"line {line_no}: invalid spec ({e})") from e


def load_checkpoint(path):
    """Read a checkpoint; returns (models by role, metadata dict)."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    if not lines or lines[0].strip() != CHECKPOINT_HEADER:
        raise CheckpointError(f"{path}: missing '{CHECKPOINT_HEADER}' header")

    models, meta = {}, {}
    role, spec, params = None, None, {}
    for line_no, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        tag = parts[0]
        if tag == "meta" and len(parts) >= 2:
            meta[parts[1]] = " ".join(parts[2:])
        elif tag == "model" and len(parts) == 2:
            if parts[1] not in ROLES:
                raise CheckpointError(f"{path}:{line_no}: unknown role '{parts[1]}'")
            role, spec, params = parts[1], None, {}
        elif tag == "spec" and role is not None:
            spec = _parse_spec(parts[1:], line_no)
        elif tag == "param" and spec is not None and len(parts) >= 3:
            try:
                shape = tuple(int(d) for d in parts[2].split(",") if d)
                values = np.array([float(v) for v in parts[3:]], dtype=np.float64)
            except ValueError as e:
                raise CheckpointError(f"{path}:{line_no}: invalid parameter {parts[1]} ({e})") from e
            if values.size != int(np.prod(shape)):
                raise CheckpointError(
                    f"{path}:{line_no}: parameter {parts[1]} declares shape {shape} "
                    f"but holds {values.size} values"
                )
            params[parts[1]] = values.reshape(shape)
        elif tag == "end" and spec is not None:
            model = MlpModel(spec, role, params)
            expected = mlp_new(spec, role).params
            if set(expected) != set(params) or any(
                    expected[k].shape != params[k].shape for k in expected):
                raise CheckpointError(f"{path}:{line_no}: parameters of '{role}' do not match its spec")
            models[role] = model
            role, spec, params = None, None, {}
        else:
            raise CheckpointError(f"{path}:{line_no}: unexpected line '{line[:40]}'")

    if role is not None:
        raise CheckpointError(f"{path}: model '{role}' is not terminated by 'end'")
    logger.info("Loaded checkpoint %s with roles %s", path, ", ".join(models))
    return models, meta
