"""Dense neural network core: forward pass, cross-entropy SGD, parameter algebra.

Models are plain float64 parameter vectors (layer-major, weights then biases
per layer) interpreted against a list of LayerSpec. Everything here is a pure
function of its inputs and seeds; nothing mutates its arguments.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np


class Activation(Enum):
    RELU = "relu"
    IDENTITY = "identity"


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: Activation = Activation.RELU


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes non-finite."""


def mlp_spec(dims: list[int]) -> list[LayerSpec]:
    """Build a ReLU MLP spec from layer sizes; the last layer emits raw logits."""
    if len(dims) < 2:
        raise ValueError("need at least input and output dims")
    layers = []
    for i in range(len(dims) - 1):
        act = Activation.IDENTITY if i == len(dims) - 2 else Activation.RELU
        layers.append(LayerSpec(dims[i], dims[i + 1], act))
    return layers


def validate_spec(spec: list[LayerSpec]) -> None:
    if not spec:
        raise ValueError("empty layer spec")
    for a, b in zip(spec, spec[1:]):
        if a.output_dim != b.input_dim:
            raise ValueError(
                f"layer dims do not chain: {a.output_dim} -> {b.input_dim}")
    if spec[-1].activation is not Activation.IDENTITY:
        raise ValueError("final layer must have identity activation (logits)")
    for layer in spec:
        if layer.input_dim < 1 or layer.output_dim < 1:
            raise ValueError("layer dims must be positive")


def param_count(spec: list[LayerSpec]) -> int:
    return sum(l.input_dim * l.output_dim + l.output_dim for l in spec)


def unpack(spec: list[LayerSpec], params: np.ndarray):
    """Split a flat parameter vector into [(W, b), ...] array views."""
    if params.shape != (param_count(spec),):
        raise ValueError(
            f"parameter vector has length {params.shape}, spec needs {param_count(spec)}")
    out = []
    pos = 0
    for layer in spec:
        w_n = layer.input_dim * layer.output_dim
        w = params[pos:pos + w_n].reshape(layer.input_dim, layer.output_dim)
        pos += w_n
        b = params[pos:pos + layer.output_dim]
        pos += layer.output_dim
        out.append((w, b))
    return out


def pack(spec: list[LayerSpec], layers) -> np.ndarray:
    parts = []
    for w, b in layers:
        parts.append(np.ascontiguousarray(w, dtype=np.float64).ravel())
        parts.append(np.ascontiguousarray(b, dtype=np.float64).ravel())
    params = np.concatenate(parts)
    if params.shape != (param_count(spec),):
        raise ValueError("packed layers do not match spec")
    return params


def init_model(spec: list[LayerSpec], seed: int) -> np.ndarray:
    """Deterministic init: W ~ U[-a, a] with a = sqrt(6/(fan_in+fan_out)), b = 0."""
    validate_spec(spec)
    rng = np.random.default_rng(seed)
    layers = []
    for layer in spec:
        a = np.sqrt(6.0 / (layer.input_dim + layer.output_dim))
        w = rng.uniform(-a, a, size=(layer.input_dim, layer.output_dim))
        b = np.zeros(layer.output_dim)
        layers.append((w, b))
    return pack(spec, layers)


def forward(params: np.ndarray, spec: list[LayerSpec], x: np.ndarray) -> np.ndarray:
    """Logits of the network on one input (d,) or a batch (n, d)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != spec[0].input_dim:
        raise ValueError(
            f"input dim {h.shape[1]} does not match first layer {spec[0].input_dim}")
    for layer, (w, b) in zip(spec, unpack(spec, params)):
        h = h @ w + b
        if layer.activation is Activation.RELU:
            h = np.maximum(h, 0.0)
    return h[0] if single else h


def predict_label(params: np.ndarray, spec: list[LayerSpec], x: np.ndarray):
    """Argmax class of the logits; ties resolve to the lowest class index.

    Returns an int for a single input, an int array for a batch.
    """
    scores = forward(params, spec, x)
    if scores.ndim == 1:
        return int(np.argmax(scores))
    return np.argmax(scores, axis=1)


def _forward_cached(params, spec, x):
    """Forward pass keeping pre/post-activation values per layer for backprop."""
    acts = [x]
    pre = []
    h = x
    for layer, (w, b) in zip(spec, unpack(spec, params)):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if layer.activation is Activation.RELU else z
        acts.append(h)
    return pre, acts


def loss_and_grad(params, spec, features, labels):
    """Mean softmax cross-entropy over the batch and its flat gradient."""
    n = features.shape[0]
    pre, acts = _forward_cached(params, spec, features)
    logits = acts[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    loss = -np.mean(shifted[np.arange(n), labels] - np.log(exp.sum(axis=1)))

    grads = [None] * len(spec)
    delta = probs
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    layers = unpack(spec, params)
    for i in range(len(spec) - 1, -1, -1):
        w, _ = layers[i]
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = delta @ w.T
            if spec[i - 1].activation is Activation.RELU:
                delta = delta * (pre[i - 1] > 0)
    return loss, pack(spec, grads)


def train_local(params: np.ndarray, spec: list[LayerSpec], dataset,
                cfg: TrainConfig) -> np.ndarray:
    """Mini-batch SGD on softmax cross-entropy; returns a new parameter vector.

    The input vector is never modified. Shuffling is driven solely by
    cfg.shuffle_seed, so identical inputs reproduce bitwise-identical output.
    Raises TrainingDiverged if the loss goes non-finite.
    """
    features = np.asarray(dataset.features, dtype=np.float64)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    n = features.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    n_classes = spec[-1].output_dim
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes})")
    out = params.copy()
    if cfg.epochs == 0:
        return out
    rng = np.random.default_rng(cfg.shuffle_seed)
    batch = min(cfg.batch_size, n)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, grad = loss_and_grad(out, spec, features[idx], labels[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss}")
            out -= cfg.learning_rate * grad
    return out


def param_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean norm of the parameter difference."""
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def accuracy(params: np.ndarray, spec: list[LayerSpec], dataset) -> float:
    """Fraction of examples whose predicted label equals the true label."""
    features = np.asarray(dataset.features, dtype=np.float64)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    if features.shape[0] == 0:
        raise ValueError("cannot score an empty dataset")
    pred = np.argmax(forward(params, spec, features), axis=1)
    return float(np.mean(pred == labels))


_MAGIC = b"FCPV"
_VERSION = 1


def save_params(params: np.ndarray, path) -> None:
    """Checkpoint format: 16-byte header (magic, u32 version, u64 count), then
    little-endian float64 values."""
    data = np.ascontiguousarray(params, dtype="<f8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IQ", _VERSION, data.size))
        f.write(data.tobytes())


def load_params(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16 or header[:4] != _MAGIC:
            raise ValueError(f"bad checkpoint magic in {path}")
        version, count = struct.unpack("<IQ", header[4:])
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        raw = f.read(count * 8)
        if len(raw) != count * 8:
            raise ValueError(f"truncated checkpoint {path}")
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)
