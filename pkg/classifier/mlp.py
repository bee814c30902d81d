"""
Fully-connected classification head trained on cached quanvolutional features.
"""
import csv
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import yaml
from scipy.special import log_softmax, softmax

STD_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std


def fit_normalizer(X_train) -> Normalizer:
    """
    Per-feature z-score statistics of the training split (std floored at 1e-8).
    """
    X = np.asarray(X_train, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError(f"Need a matrix with at least 2 rows, got shape {X.shape}")
    return Normalizer(X.mean(axis=0), np.maximum(X.std(axis=0), STD_FLOOR))


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 25
    learning_rate: float = 0.001
    seed: int = 0
    loss_reduction: str = "sum"

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate < 0:
            raise ValueError(
                f"batch_size must be >= 1 and epochs/learning_rate non-negative, got {self}"
            )
        if self.loss_reduction not in ("sum", "mean"):
            raise ValueError(f"loss_reduction must be 'sum' or 'mean', got {self.loss_reduction!r}")


@dataclass(eq=False)
class MlpModel:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (W.shape[0],):
                raise ValueError(f"Layer {i}: bias shape {b.shape} does not match W {W.shape}")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"Layer {i}: W {W.shape} does not chain with previous layer")

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(W.shape[0] for W in self.weights)

    def copy(self) -> "MlpModel":
        return MlpModel([W.copy() for W in self.weights], [b.copy() for b in self.biases])


def init_model(layer_sizes: Sequence[int], seed: int) -> MlpModel:
    """
    Glorot-uniform weights on [-sqrt(6/(fan_in+fan_out)), +...], zero biases.
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases)


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _logits(model: MlpModel, X: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    activations = [X]
    h = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W.T + b
        h = z if i == last else _relu(z)
        activations.append(h)
    return h, activations


def _check_inputs(model: MlpModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != model.layer_sizes[0]:
        raise ValueError(f"Expected {model.layer_sizes[0]} features, got {X.shape[-1]}")
    return X


def predict_proba(model: MlpModel, X) -> np.ndarray:
    X = np.atleast_2d(_check_inputs(model, X))
    logits, _ = _logits(model, X)
    return softmax(logits, axis=1)


def forward(model: MlpModel, x) -> np.ndarray:
    x = _check_inputs(model, x)
    if x.ndim != 1:
        raise ValueError(f"forward takes a single vector, got shape {x.shape}")
    return predict_proba(model, x)[0]


def _check_labels(X: np.ndarray, Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[0] != X.shape[0]:
        raise ValueError(f"Labels of shape {Y.shape} do not align with {X.shape[0]} rows")
    if not np.all((Y == 0) | (Y == 1)) or not np.all(Y.sum(axis=1) == 1):
        raise ValueError("Labels must be one-hot rows")
    return Y


def loss_and_gradients(model: MlpModel, X, Y, reduction: str = "sum"):
    """
    Cross-entropy of a batch and its gradients by backpropagation.

    Args:
        model: Network to differentiate.
        X: Batch inputs, one row per sample.
        Y: One-hot targets.
        reduction: "sum" or "mean" over the batch.

    Returns:
        (loss, weight gradients, bias gradients), both gradient lists in layer order.
    """
    X = np.atleast_2d(_check_inputs(model, X))
    Y = _check_labels(X, Y)
    logits, activations = _logits(model, X)
    scale = 1.0 if reduction == "sum" else 1.0 / X.shape[0]
    loss = -float(np.sum(Y * log_softmax(logits, axis=1))) * scale

    delta = (softmax(logits, axis=1) - Y) * scale
    grad_W, grad_b = [], []
    for i in reversed(range(len(model.weights))):
        grad_W.insert(0, delta.T @ activations[i])
        grad_b.insert(0, delta.sum(axis=0))
        if i:
            delta = (delta @ model.weights[i]) * (activations[i] > 0)
    return loss, grad_W, grad_b


def evaluate(model: MlpModel, X, Y) -> Tuple[float, float]:
    """
    Mean cross-entropy and accuracy; argmax ties resolve to the lower class.
    """
    X = np.atleast_2d(_check_inputs(model, X))
    Y = _check_labels(X, Y)
    logits, _ = _logits(model, X)
    loss = -float(np.mean(np.sum(Y * log_softmax(logits, axis=1), axis=1)))
    accuracy = float(np.mean(np.argmax(logits, axis=1) == np.argmax(Y, axis=1)))
    return loss, accuracy


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: Optional[float] = None
    test_acc: Optional[float] = None


def train(
    X,
    Y,
    cfg: TrainConfig,
    hidden: Sequence[int] = (64, 32),
    validation: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    model: Optional[MlpModel] = None,
) -> Tuple[MlpModel, List[EpochMetrics]]:
    """
    Mini-batch SGD (no momentum) on cross-entropy.

    Args:
        X: Training features.
        Y: One-hot training labels.
        cfg: Batch size, epochs, learning rate, seed and loss reduction.
        hidden: Hidden layer widths.
        validation: Optional (X, Y) evaluated after every epoch.
        model: Starting weights; freshly initialized from cfg.seed when omitted.

    Returns:
        The trained model and one EpochMetrics per epoch.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = _check_labels(X, Y)
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = init_model((X.shape[1],) + tuple(hidden) + (Y.shape[1],), cfg.seed)
    else:
        model = model.copy()

    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(X.shape[0])
        for start in range(0, X.shape[0], cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            _, grad_W, grad_b = loss_and_gradients(model, X[batch], Y[batch], cfg.loss_reduction)
            for W, dW, b, db in zip(model.weights, grad_W, model.biases, grad_b):
                W -= cfg.learning_rate * dW
                b -= cfg.learning_rate * db

        train_loss, train_acc = evaluate(model, X, Y)
        test_loss = test_acc = None
        if validation is not None:
            test_loss, test_acc = evaluate(model, *validation)
        metrics = EpochMetrics(epoch, train_loss, train_acc, test_loss, test_acc)
        history.append(metrics)
        logging.info(
            f"Epoch {epoch}/{cfg.epochs}: train loss {train_loss:.4f} acc {train_acc:.3f}"
            + (f", test loss {test_loss:.4f} acc {test_acc:.3f}" if validation is not None else "")
        )
    return model, history


def _to_lists(array: np.ndarray) -> list:
    return [float(f"{v:.17g}") for v in array.reshape(-1)]


def save_model(path: str, model: MlpModel):
    checkpoint = {
        "layer_sizes": list(model.layer_sizes),
        "weights": [_to_lists(W) for W in model.weights],
        "biases": [_to_lists(b) for b in model.biases],
    }
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(checkpoint, f, sort_keys=False)


def load_model(path: str) -> MlpModel:
    with open(path, "r", encoding="utf-8") as f:
        checkpoint = yaml.safe_load(f)
    sizes = checkpoint["layer_sizes"]
    weights = [
        np.array(W, dtype=float).reshape(fan_out, fan_in)
        for W, fan_in, fan_out in zip(checkpoint["weights"], sizes[:-1], sizes[1:])
    ]
    biases = [np.array(b, dtype=float) for b in checkpoint["biases"]]
    return MlpModel(weights, biases)


def save_normalizer(path: str, normalizer: Normalizer):
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(
            {"mean": _to_lists(normalizer.mean), "std": _to_lists(normalizer.std)}, f, sort_keys=False
        )


def load_normalizer(path: str) -> Normalizer:
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f)
    return Normalizer(np.array(data["mean"], dtype=float), np.array(data["std"], dtype=float))


METRICS_HEADER = ["epoch", "train_loss", "train_acc", "test_loss", "test_acc"]


def write_metrics(path: str, history: Sequence[EpochMetrics]):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for row in history:
            writer.writerow(
                [row.epoch] + ["" if v is None else f"{v:.17g}" for v in
                               (row.train_loss, row.train_acc, row.test_loss, row.test_acc)]
            )
