"""Per-modality classifiers: small softmax networks with deterministic SGD.

A modality model is a flat float parameter vector plus an architecture tag.
The flat layout is layer-major, weights before biases, rows of each weight
matrix contiguous:

* ``LinearSoftmax``: ``W (d, C)`` then ``b (C,)``.
* ``Mlp1(h)``: ``W1 (d, h)``, ``b1 (h,)``, ``W2 (h, C)``, ``b2 (C,)``
  with a tanh hidden layer.

Models are immutable values; every operation returns a new model. Byte
size is ``4 * len(params)`` (parameters travel as 32-bit floats).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AggregationError, DimensionError, DivergenceError, WeightError
from .seeding import make_rng

INIT_SCALE = 0.05
BYTES_PER_PARAM = 4


@dataclass(frozen=True)
class LinearSoftmax:
    """Single affine layer followed by softmax."""

    def param_count(self, input_dim: int, num_classes: int) -> int:
        return (input_dim + 1) * num_classes


@dataclass(frozen=True)
class Mlp1:
    """One tanh hidden layer of ``hidden_units``, then an affine output layer."""

    hidden_units: int

    def param_count(self, input_dim: int, num_classes: int) -> int:
        h = self.hidden_units
        return (input_dim + 1) * h + (h + 1) * num_classes


Arch = LinearSoftmax | Mlp1


@dataclass(frozen=True)
class ModalityModel:
    """Classifier for one modality, stored as a flat parameter vector."""

    modality_id: int
    arch: Arch
    input_dim: int
    num_classes: int
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        params = np.asarray(self.params, dtype=np.float64)
        expected = self.arch.param_count(self.input_dim, self.num_classes)
        if params.shape != (expected,):
            raise DimensionError(
                f"params length {params.shape} does not match "
                f"{type(self.arch).__name__} expectation ({expected},)"
            )
        # Own a frozen copy: deployed models are shared between clients.
        if params.flags.writeable:
            params = params.copy()
            params.setflags(write=False)
        object.__setattr__(self, "params", params)

    @property
    def byte_size(self) -> int:
        return self.params.size * BYTES_PER_PARAM

    def with_params(self, params: np.ndarray) -> "ModalityModel":
        return replace(self, params=np.asarray(params, dtype=np.float64))


@dataclass(frozen=True)
class TrainOutcome:
    """Bookkeeping from one local training call."""

    final_loss: float
    epochs_run: int
    samples_seen: int


def init_model(arch: Arch, input_dim: int, num_classes: int, seed: int, modality_id: int = 0) -> ModalityModel:
    """Fresh model with parameters ~ uniform(-0.05, 0.05) from a Philox stream.

    Identical ``(arch, input_dim, num_classes, seed)`` give bit-identical
    parameters.
    """
    if input_dim < 1:
        raise DimensionError(f"input_dim must be >= 1, got {input_dim}")
    if num_classes < 2:
        raise DimensionError(f"num_classes must be >= 2, got {num_classes}")
    if isinstance(arch, Mlp1) and arch.hidden_units < 1:
        raise DimensionError(f"hidden_units must be >= 1, got {arch.hidden_units}")
    rng = make_rng(seed)
    n = arch.param_count(input_dim, num_classes)
    params = rng.uniform(-INIT_SCALE, INIT_SCALE, size=n)
    return ModalityModel(modality_id, arch, input_dim, num_classes, params)


def _unpack(model: ModalityModel) -> list[np.ndarray]:
    d, c = model.input_dim, model.num_classes
    p = model.params
    if isinstance(model.arch, LinearSoftmax):
        return [p[: d * c].reshape(d, c), p[d * c :]]
    h = model.arch.hidden_units
    o1 = d * h
    o2 = o1 + h
    o3 = o2 + h * c
    return [p[:o1].reshape(d, h), p[o1:o2], p[o2:o3].reshape(h, c), p[o3:]]


def _pack(parts: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([part.ravel() for part in parts])


def _scores(model: ModalityModel, features: np.ndarray) -> np.ndarray:
    parts = _unpack(model)
    if isinstance(model.arch, LinearSoftmax):
        w, b = parts
        return features @ w + b
    w1, b1, w2, b2 = parts
    return np.tanh(features @ w1 + b1) @ w2 + b2


def _check_features(model: ModalityModel, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.input_dim:
        raise DimensionError(
            f"expected features of width {model.input_dim}, got shape {features.shape}"
        )
    return features


def _cross_entropy(scores: np.ndarray, labels: np.ndarray) -> float:
    # log-sum-exp keeps the all-zero model at exactly ln C.
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(log_z - shifted[np.arange(len(labels)), labels]))


def predict(model: ModalityModel, features: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class index."""
    features = _check_features(model, features)
    if features.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmax(_scores(model, features), axis=1)


def eval_loss(model: ModalityModel, features: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy of the model on the given rows."""
    features = _check_features(model, features)
    labels = np.asarray(labels, dtype=np.int64)
    if features.shape[0] == 0:
        raise DimensionError("eval_loss needs at least one row")
    return _cross_entropy(_scores(model, features), labels)


def _gradient(model: ModalityModel, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and the gradient as a flat vector."""
    n = x.shape[0]
    parts = _unpack(model)
    if isinstance(model.arch, LinearSoftmax):
        w, b = parts
        scores = x @ w + b
    else:
        w1, b1, w2, b2 = parts
        hidden = np.tanh(x @ w1 + b1)
        scores = hidden @ w2 + b2
    shifted = scores - scores.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    probs = expd / expd.sum(axis=1, keepdims=True)
    loss = float(np.mean(np.log(expd.sum(axis=1)) - shifted[np.arange(n), y]))
    dscores = probs.copy()
    dscores[np.arange(n), y] -= 1.0
    dscores /= n
    if isinstance(model.arch, LinearSoftmax):
        grad = _pack([x.T @ dscores, dscores.sum(axis=0)])
    else:
        gw2 = hidden.T @ dscores
        gb2 = dscores.sum(axis=0)
        dhidden = (dscores @ w2.T) * (1.0 - hidden * hidden)
        grad = _pack([x.T @ dhidden, dhidden.sum(axis=0), gw2, gb2])
    return loss, grad


def train_local(
    model: ModalityModel,
    features: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    batch_size: int,
    learning_rate: float,
    seed: int,
) -> tuple[ModalityModel, TrainOutcome]:
    """Minibatch SGD on softmax cross-entropy, deterministic per seed.

    Batch order is reshuffled each epoch from a Philox stream keyed on
    ``seed``. The reported loss is the mean per-sample cross-entropy over
    the final epoch's batches (measured before each batch's update), or
    the loss of the untouched model when ``epochs == 0``.

    Raises :class:`DivergenceError` carrying the epoch index if the loss
    or parameters go non-finite.
    """
    features = _check_features(model, features)
    labels = np.asarray(labels, dtype=np.int64)
    n = features.shape[0]
    if n < 1:
        raise DimensionError("training needs at least one sample")
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match {n} rows")
    if labels.min() < 0 or labels.max() >= model.num_classes:
        raise DimensionError("labels outside [0, num_classes)")
    if epochs == 0:
        return model, TrainOutcome(eval_loss(model, features, labels), 0, 0)

    rng = make_rng(seed)
    params = model.params.copy()
    current = model.with_params(params)
    final_loss = 0.0
    for epoch in range(epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            # Overflow is detected via the finiteness checks, not warnings.
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grad = _gradient(current, features[batch], labels[batch])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", epoch)
            loss_sum += loss * batch.size
            params = params - learning_rate * grad
            current = model.with_params(params)
        if not np.all(np.isfinite(params)):
            raise DivergenceError(f"non-finite parameters at epoch {epoch}", epoch)
        final_loss = loss_sum / n
    return current, TrainOutcome(final_loss, epochs, n * epochs)


def weighted_sum(models: list[ModalityModel], weights: np.ndarray) -> ModalityModel:
    """Elementwise convex combination of parameter vectors.

    Weights must be nonnegative and sum to 1 within 1e-9; models must share
    architecture and dimensions.
    """
    if not models:
        raise AggregationError("cannot aggregate an empty model list")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(models),):
        raise WeightError(f"{len(models)} models but {weights.shape} weights")
    if np.any(weights < 0):
        raise WeightError("weights must be nonnegative")
    if abs(float(weights.sum()) - 1.0) > 1e-9:
        raise WeightError(f"weights sum to {weights.sum()!r}, expected 1")
    head = models[0]
    for m in models[1:]:
        if (m.arch, m.input_dim, m.num_classes) != (head.arch, head.input_dim, head.num_classes):
            raise AggregationError("models differ in architecture or dimensions")
    # Reduce in a canonical order so jointly shuffled inputs give
    # bit-identical output regardless of arrival order.
    order = sorted(range(len(models)), key=lambda i: (weights[i], models[i].params.tobytes()))
    stacked = np.stack([models[i].params for i in order])
    return head.with_params(weights[order] @ stacked)
