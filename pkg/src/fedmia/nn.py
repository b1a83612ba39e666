"""Dense neural-network core: forward pass, backprop, and mini-batch SGD.

One shared multilayer-perceptron architecture (ReLU hidden layers,
softmax output, cross-entropy loss) serves target, shadow, and client
models. Everything is plain float64 numpy; every public operation is a
pure function, so calls are safe from any thread and repeatable
bit-for-bit given the same inputs.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .errors import FormatError, InputError, NumericError, ShapeError

LOSS_CLAMP = 1e-12  # floor inside log(); keeps confident-wrong losses finite


@dataclass(frozen=True)
class ModelSpec:
    """Layer sizes of the shared classifier architecture."""

    input_dim: int
    hidden_dims: tuple
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.output_dim < 2:
            raise InputError(f"output_dim must be >= 2, got {self.output_dim}")
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise InputError("all layer dims must be >= 1")
        if self.activation != "relu":
            raise InputError(f"unsupported activation {self.activation!r}")

    @property
    def dims(self) -> tuple:
        return (self.input_dim, *self.hidden_dims, self.output_dim)


@dataclass
class ModelParams:
    """Ordered (weight, bias) pairs; weight i is (dims[i], dims[i+1])."""

    layers: list

    def __post_init__(self):
        if not self.layers:
            raise InputError("ModelParams needs at least one layer")
        layers = []
        prev_cols = None
        for i, (w, b) in enumerate(self.layers):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.ndim != 2 or b.shape != (1, w.shape[1]):
                raise ShapeError(
                    f"layer {i}: weight {w.shape} needs bias (1, {w.shape[1]}), got {b.shape}"
                )
            if prev_cols is not None and w.shape[0] != prev_cols:
                raise ShapeError(
                    f"layer {i}: weight rows {w.shape[0]} != previous layer cols {prev_cols}"
                )
            prev_cols = w.shape[1]
            layers.append((w, b))
        self.layers = layers

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    def dims(self) -> tuple:
        return (self.input_dim, *(w.shape[1] for w, _ in self.layers))

    def copy(self) -> "ModelParams":
        return ModelParams([(w.copy(), b.copy()) for w, b in self.layers])

    def conforms_to(self, spec: ModelSpec) -> bool:
        return self.dims() == spec.dims


@dataclass(frozen=True)
class TrainConfig:
    """Mini-batch SGD settings; `seed` drives the epoch shuffles."""

    epochs: int
    batch_size: int
    learning_rate: float
    seed: int

    def __post_init__(self):
        if self.epochs < 1:
            raise InputError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise InputError(f"learning_rate must be >= 0, got {self.learning_rate}")


def init_params(spec: ModelSpec, seed: int) -> ModelParams:
    """Scaled-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    dims = spec.dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-limit, limit, (fan_in, fan_out)), np.zeros((1, fan_out))))
    return ModelParams(layers)


def _check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")
    return arr


def _check_batch(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise ShapeError(f"batch must be 2-D, got shape {batch.shape}")
    if batch.shape[1] != params.input_dim:
        raise ShapeError(f"batch has {batch.shape[1]} columns, model expects {params.input_dim}")
    return batch


def _forward_cached(params: ModelParams, batch: np.ndarray):
    """Returns (probs, activations); activations[i] is layer i's input."""
    # divergence shows up as non-finite values, reported via NumericError
    # rather than numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        activations = [batch]
        a = batch
        last = len(params.layers) - 1
        for i, (w, b) in enumerate(params.layers):
            z = a @ w + b
            a = z if i == last else np.maximum(z, 0.0)
            activations.append(a)
        logits = activations[-1]
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=1, keepdims=True)
    return probs, activations


def forward(params: ModelParams, batch) -> np.ndarray:
    """Class probabilities for each row of `batch`; rows sum to one."""
    batch = _check_batch(params, batch)
    probs, _ = _forward_cached(params, batch)
    return _check_finite(probs, "forward probabilities")


def _check_labels(labels, class_count: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ShapeError(f"labels must be 1-D, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= class_count):
        raise InputError(
            f"labels must lie in [0, {class_count}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels


def cross_entropy(probs, labels):
    """Per-sample and mean negative log-likelihood of the true class."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ShapeError(f"probs must be 2-D, got shape {probs.shape}")
    labels = _check_labels(labels, probs.shape[1])
    if probs.shape[0] != labels.shape[0]:
        raise ShapeError(f"{probs.shape[0]} prob rows vs {labels.shape[0]} labels")
    picked = probs[np.arange(probs.shape[0]), labels]
    per_sample = -np.log(np.maximum(picked, LOSS_CLAMP))
    return per_sample, float(per_sample.mean())


def backward(params: ModelParams, batch, labels) -> list:
    """Gradients of the mean cross-entropy, shaped like params.layers."""
    batch = _check_batch(params, batch)
    labels = _check_labels(labels, params.output_dim)
    if batch.shape[0] != labels.shape[0]:
        raise ShapeError(f"{batch.shape[0]} batch rows vs {labels.shape[0]} labels")
    probs, activations = _forward_cached(params, batch)
    n = batch.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        delta = probs.copy()
        delta[np.arange(n), labels] -= 1.0
        delta /= n
        grads = [None] * len(params.layers)
        for i in range(len(params.layers) - 1, -1, -1):
            a_prev = activations[i]
            grads[i] = (a_prev.T @ delta, delta.sum(axis=0, keepdims=True))
            if i > 0:
                delta = (delta @ params.layers[i][0].T) * (activations[i] > 0.0)
    for dw, db in grads:
        _check_finite(dw, "weight gradient")
        _check_finite(db, "bias gradient")
    return grads


def train(params: ModelParams, dataset: LabeledDataset, cfg: TrainConfig) -> ModelParams:
    """Shuffled mini-batch SGD for cfg.epochs passes; returns new params.

    The final partial batch of each epoch is kept. Deterministic in
    (params, dataset, cfg).
    """
    if len(dataset) == 0:
        raise InputError("cannot train on an empty dataset")
    if dataset.class_count > params.output_dim:
        raise ShapeError(
            f"dataset has {dataset.class_count} classes, model outputs {params.output_dim}"
        )
    current = params.copy()
    rng = np.random.default_rng(cfg.seed)
    n = len(dataset)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            grads = backward(current, dataset.features[idx], dataset.labels[idx])
            with np.errstate(over="ignore", invalid="ignore"):
                for (w, b), (dw, db) in zip(current.layers, grads):
                    w -= cfg.learning_rate * dw
                    b -= cfg.learning_rate * db
    for w, b in current.layers:
        _check_finite(w, "trained weights")
        _check_finite(b, "trained biases")
    return current


def evaluate(params: ModelParams, dataset: LabeledDataset):
    """(accuracy, mean loss); argmax ties break to the lowest class index."""
    if len(dataset) == 0:
        raise InputError("cannot evaluate on an empty dataset")
    probs = forward(params, dataset.features)
    preds = probs.argmax(axis=1)
    accuracy = float((preds == dataset.labels).mean())
    _, mean_loss = cross_entropy(probs, dataset.labels)
    return accuracy, mean_loss


def save_params(params: ModelParams, path) -> None:
    """Checkpoint format: uint32 LE layer count, per-layer (rows, cols)
    uint32 pairs, then each layer's weight and bias as flat little-endian
    float64."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(params.layers)))
        for w, _ in params.layers:
            fh.write(struct.pack("<II", *w.shape))
        for w, b in params.layers:
            fh.write(w.astype("<f8").tobytes())
            fh.write(b.astype("<f8").tobytes())


def load_params(path) -> ModelParams:
    """Read a checkpoint written by save_params."""
    with open(path, "rb") as fh:
        header = fh.read(4)
        if len(header) != 4:
            raise FormatError(f"{path}: truncated layer-count header")
        (layer_count,) = struct.unpack("<I", header)
        if layer_count == 0:
            raise FormatError(f"{path}: zero layers in header")
        shapes = []
        for i in range(layer_count):
            raw = fh.read(8)
            if len(raw) != 8:
                raise FormatError(f"{path}: truncated shape header at layer {i}")
            shapes.append(struct.unpack("<II", raw))
        layers = []
        for i, (rows, cols) in enumerate(shapes):
            need = (rows * cols + cols) * 8
            raw = fh.read(need)
            if len(raw) != need:
                raise FormatError(f"{path}: truncated data for layer {i}")
            flat = np.frombuffer(raw, dtype="<f8")
            layers.append((flat[: rows * cols].reshape(rows, cols).copy(),
                           flat[rows * cols:].reshape(1, cols).copy()))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after parameter data")
    return ModelParams(layers)
