"""A small dense classifier with hand-written gradients.

Either plain softmax regression (hidden == 0) or one hidden layer with tanh
or ReLU. Parameters live in a single flat float64 vector so that federated
averaging, checkpointing and momentum SGD are simple vector operations.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DivergenceError

ACTIVATIONS = ("tanh", "relu")

BLOB_MAGIC = b"FNLP"
BLOB_VERSION = 1
_BLOB_HEADER = "<4sHIIH"  # magic, version, input_dim, hidden, num_classes


@dataclass(frozen=True)
class ModelDescriptor:
    input_dim: int
    hidden: int  # 0 selects the linear model
    num_classes: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.input_dim < 1 or self.num_classes < 2 or self.hidden < 0:
            raise ConfigError(
                f"bad architecture d={self.input_dim} h={self.hidden} C={self.num_classes}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        d, h, c = self.input_dim, self.hidden, self.num_classes
        if h == 0:
            return d * c + c
        return d * h + h + h * c + c


@dataclass
class ModelParams:
    """Flat parameter vector plus the architecture it encodes."""

    desc: ModelDescriptor
    flat: np.ndarray

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.desc.n_params,):
            raise ConfigError(
                f"parameter vector has {self.flat.shape}, expected ({self.desc.n_params},)"
            )

    def copy(self) -> "ModelParams":
        return ModelParams(self.desc, self.flat.copy())

    def views(self):
        """Weight/bias views into the flat vector: (W, b) or (W1, b1, W2, b2)."""
        d, h, c = self.desc.input_dim, self.desc.hidden, self.desc.num_classes
        v = self.flat
        if h == 0:
            return v[: d * c].reshape(d, c), v[d * c :]
        o1 = d * h
        o2 = o1 + h
        o3 = o2 + h * c
        return (
            v[:o1].reshape(d, h),
            v[o1:o2],
            v[o2:o3].reshape(h, c),
            v[o3:],
        )


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.05
    momentum: float = 0.5
    weight_decay: float = 1e-4
    batch_size: int = 32

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class OptimizerState:
    velocity: np.ndarray

    @classmethod
    def zeros(cls, desc: ModelDescriptor) -> "OptimizerState":
        return cls(np.zeros(desc.n_params))


def init_params(desc: ModelDescriptor, seed) -> ModelParams:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer."""
    rng = np.random.default_rng(seed)
    d, h, c = desc.input_dim, desc.hidden, desc.num_classes
    if h == 0:
        bound = 1.0 / np.sqrt(d)
        flat = rng.uniform(-bound, bound, size=desc.n_params)
    else:
        b1 = 1.0 / np.sqrt(d)
        b2 = 1.0 / np.sqrt(h)
        flat = np.concatenate(
            [
                rng.uniform(-b1, b1, size=d * h + h),
                rng.uniform(-b2, b2, size=h * c + c),
            ]
        )
    return ModelParams(desc, flat)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activate_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - a * a
    return (z > 0).astype(np.float64)


def _as_batch(x: np.ndarray, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"input has shape {x.shape}, model expects dim {dim}")
    return x, single


def _forward_pass(params: ModelParams, x: np.ndarray):
    """Returns (logits, hidden pre-activation, hidden activation)."""
    if params.desc.hidden == 0:
        w, b = params.views()
        return x @ w + b, None, None
    w1, b1, w2, b2 = params.views()
    z = x @ w1 + b1
    a = _activate(z, params.desc.activation)
    return a @ w2 + b2, z, a


def _softmax(logits: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)


def forward(params: ModelParams, x: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Class probabilities softmax(logits / temperature).

    Accepts a single feature vector or an (n, d) batch; the output matches.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    xb, single = _as_batch(x, params.desc.input_dim)
    logits, _, _ = _forward_pass(params, xb)
    probs = _softmax(logits / temperature)
    return probs[0] if single else probs


def loss_and_grad(
    params: ModelParams,
    x: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray | None = None,
    temperature: float = 1.0,
) -> tuple[float, np.ndarray]:
    """Mean weighted cross-entropy over a batch and its gradient.

    loss = (1/n) * sum_i w_i * (-log p_i[y_i]); a zero-weight sample
    contributes nothing to either term. Raises DivergenceError when the
    loss is not finite.
    """
    xb, _ = _as_batch(x, params.desc.input_dim)
    labels = np.asarray(labels, dtype=np.int64)
    n = xb.shape[0]
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= params.desc.num_classes):
        raise ValueError("labels out of range")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,):
            raise ValueError("weights shape does not match batch")
        if w.size and w.min() < 0:
            raise ValueError("weights must be nonnegative")

    with np.errstate(over="ignore", invalid="ignore"):
        logits, z, a = _forward_pass(params, xb)
        t_logits = logits / temperature
        shifted = t_logits - t_logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        nll = -log_probs[np.arange(n), labels]
        loss = float(np.sum(w * nll) / n)

        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss {loss}")

        probs = np.exp(log_probs)
        dlogits = probs
        dlogits[np.arange(n), labels] -= 1.0
        dlogits *= (w / (n * temperature))[:, None]

        grad = np.empty_like(params.flat)
        if params.desc.hidden == 0:
            d, c = params.desc.input_dim, params.desc.num_classes
            grad[: d * c] = (xb.T @ dlogits).ravel()
            grad[d * c :] = dlogits.sum(axis=0)
        else:
            d, h, c = params.desc.input_dim, params.desc.hidden, params.desc.num_classes
            w1, b1, w2, b2 = params.views()
            da = dlogits @ w2.T
            dz = da * _activate_grad(z, a, params.desc.activation)
            o1 = d * h
            o2 = o1 + h
            o3 = o2 + h * c
            grad[:o1] = (xb.T @ dz).ravel()
            grad[o1:o2] = dz.sum(axis=0)
            grad[o2:o3] = (a.T @ dlogits).ravel()
            grad[o3:] = dlogits.sum(axis=0)

    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient")
    return loss, grad


def sgd_step(
    params: ModelParams,
    state: OptimizerState,
    grad: np.ndarray,
    config: OptimizerConfig,
) -> tuple[ModelParams, OptimizerState]:
    """Momentum SGD with coupled weight decay.

    velocity' = momentum * velocity + grad + weight_decay * params
    params'   = params - learning_rate * velocity'
    """
    if grad.shape != params.flat.shape or state.velocity.shape != params.flat.shape:
        raise ValueError("gradient/velocity shape mismatch")
    velocity = config.momentum * state.velocity + grad + config.weight_decay * params.flat
    new_flat = params.flat - config.learning_rate * velocity
    return ModelParams(params.desc, new_flat), OptimizerState(velocity)


def evaluate_accuracy(params: ModelParams, dataset) -> float:
    """Fraction of samples whose argmax prediction (ties to the smallest
    class id) equals the true label."""
    if dataset.n == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    logits, _, _ = _forward_pass(params, dataset.features)
    pred = np.argmax(logits, axis=1)
    return float(np.mean(pred == dataset.true_labels))


def params_to_blob(params: ModelParams) -> bytes:
    """Serialize to a little-endian blob with a 16-byte header."""
    desc = params.desc
    header = struct.pack(
        _BLOB_HEADER,
        BLOB_MAGIC,
        BLOB_VERSION,
        desc.input_dim,
        desc.hidden,
        desc.num_classes,
    )
    return header + params.flat.astype("<f8").tobytes()


def params_from_blob(blob: bytes, activation: str = "tanh") -> ModelParams:
    """Inverse of params_to_blob. The header does not carry the activation,
    so the caller supplies it."""
    head_size = struct.calcsize(_BLOB_HEADER)
    if len(blob) < head_size:
        raise ConfigError(f"blob too short for header: {len(blob)} bytes")
    magic, version, d, h, c = struct.unpack(_BLOB_HEADER, blob[:head_size])
    if magic != BLOB_MAGIC:
        raise ConfigError(f"bad blob magic {magic!r}")
    if version != BLOB_VERSION:
        raise ConfigError(f"unsupported blob version {version}")
    desc = ModelDescriptor(d, h, c, activation)
    body = np.frombuffer(blob[head_size:], dtype="<f8")
    if body.shape != (desc.n_params,):
        raise ConfigError(
            f"blob body has {body.size} values, architecture needs {desc.n_params}"
        )
    return ModelParams(desc, body.astype(np.float64))
