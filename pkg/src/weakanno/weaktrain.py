"""Noise-robust classifier training.

Implements weighted cross-entropy, generalized cross-entropy (GCE) and the
partially Huberised GCE (PHGCE). PHGCE linearizes GCE below the probability
pivot p0 = tau^(1/(q-1)), the point where |d phi/d p| reaches tau, which
bounds the per-sample gradient magnitude with respect to p by w * tau. The
reference classifier is a two-layer fully connected network on flattened
windows trained with Adam and a step learning-rate schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyDataError, NumericalError, ShapeError
from .transfer import LabeledWindowSet

LOSS_KINDS = ("weighted-ce", "gce", "phgce")

_PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossSpec:
    """Training loss selector with the GCE exponent q and Huberisation bound tau."""

    kind: str
    class_weights: np.ndarray
    q: float = 0.7
    tau: float = 10.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}, expected one of {LOSS_KINDS}")
        if not 0.0 < self.q <= 1.0:
            raise ConfigError(f"q must be in (0, 1], got {self.q}")
        if self.tau < 1.0:
            raise ConfigError(f"tau must be at least 1, got {self.tau}")
        weights = np.asarray(self.class_weights, dtype=np.float64)
        if weights.ndim != 1 or np.any(weights < 0.0):
            raise ConfigError("class weights must be a non-negative vector")
        object.__setattr__(self, "class_weights", weights)

    @property
    def pivot(self) -> float:
        # q = 1 makes GCE linear already; no Huberisation region remains
        if self.q == 1.0:
            return 0.0
        return float(self.tau ** (1.0 / (self.q - 1.0)))


@dataclass
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 1e-4
    weight_decay: float = 1e-6
    lr_decay: float = 0.9
    lr_decay_every: int = 10
    batch_size: int = 16
    hidden_units: int = 128
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "learning_rate", "lr_decay", "lr_decay_every",
                     "batch_size", "hidden_units"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")

    def lr_at_epoch(self, epoch_index: int) -> float:
        """Effective learning rate for a zero-based epoch index."""
        return self.learning_rate * self.lr_decay ** (epoch_index // self.lr_decay_every)


def _phi(p: np.ndarray, q: float) -> np.ndarray:
    return (1.0 - p ** q) / q


def per_sample_loss_grad_p(spec: LossSpec, prob_true: np.ndarray,
                           labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Loss and d(loss)/d(p_y) per sample, with p_y clamped at 1e-12."""
    p = np.clip(prob_true, _PROB_FLOOR, None)
    w = spec.class_weights[labels]
    if spec.kind == "weighted-ce":
        return -w * np.log(p), -w / p
    if spec.kind == "gce":
        return w * _phi(p, spec.q), -w * p ** (spec.q - 1.0)
    pivot = spec.pivot
    linear = p <= pivot
    loss = np.where(linear,
                    w * (-spec.tau * (p - pivot) + _phi(np.float64(pivot), spec.q)),
                    w * _phi(p, spec.q))
    grad = np.where(linear, -w * spec.tau, -w * p ** (spec.q - 1.0))
    return loss, grad


def batch_loss_and_grad(spec: LossSpec, probs: np.ndarray,
                        labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample losses and gradients with respect to the pre-softmax scores.

    The chain rule through softmax gives d loss/d z_j =
    d loss/d p_y * p_y * (1[j = y] - p_j).
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ShapeError("probs must be B x A with one label per row")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= probs.shape[1]:
        raise ShapeError("label id outside the class range")
    rows = np.arange(probs.shape[0])
    p_true = probs[rows, labels]
    losses, dldp = per_sample_loss_grad_p(spec, p_true, labels)
    grad = -(dldp * p_true)[:, None] * probs
    grad[rows, labels] += dldp * p_true
    return losses, grad


def loss_and_grad(spec: LossSpec, probs: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Single-sample loss and gradient with respect to the pre-softmax scores."""
    losses, grad = batch_loss_and_grad(spec, np.asarray(probs)[None, :],
                                       np.asarray([label]))
    return float(losses[0]), grad[0]


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class Adam:
    """Adam with decoupled weight decay over a list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = [np.zeros_like(p) for p in params]
        self._v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray], learning_rate: float | None = None) -> None:
        lr = self.learning_rate if learning_rate is None else learning_rate
        self.step_count += 1
        t = self.step_count
        for p, g, m, v in zip(self.params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay:
                p -= lr * self.weight_decay * p


class Classifier:
    """Two-layer rectifier network with a softmax head, parameters in float64."""

    def __init__(self, n_inputs: int, hidden_units: int, n_classes: int,
                 rng: np.random.Generator):
        self.w1 = rng.normal(0.0, np.sqrt(2.0 / n_inputs), (n_inputs, hidden_units))
        self.b1 = np.zeros(hidden_units)
        # zero-initialized head: training starts from uniform predictions
        self.w2 = np.zeros((hidden_units, n_classes))
        self.b2 = np.zeros(n_classes)
        self.loss_curve: list[float] = []

    @property
    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def scores(self, inputs: np.ndarray) -> np.ndarray:
        hidden = np.maximum(inputs @ self.w1 + self.b1, 0.0)
        return hidden @ self.w2 + self.b2

    def predict_proba(self, inputs: np.ndarray) -> np.ndarray:
        return softmax(self.scores(inputs))

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        return np.argmax(self.scores(inputs), axis=1)


def train(data: LabeledWindowSet, cfg: TrainConfig, spec: LossSpec) -> Classifier:
    """Mini-batch Adam training with a seeded shuffle per epoch and the
    0.9-per-10-epochs learning-rate step schedule."""
    if data.n_windows == 0:
        raise EmptyDataError("no training windows")
    if np.unique(data.window_labels).size < 2:
        raise EmptyDataError("training data must contain at least two classes")
    inputs = np.asarray(data.windows, dtype=np.float64)
    labels = np.asarray(data.window_labels)
    rng = np.random.default_rng(cfg.seed)
    model = Classifier(inputs.shape[1], cfg.hidden_units, data.n_classes, rng)
    optimizer = Adam(model.params, cfg.learning_rate, weight_decay=cfg.weight_decay)
    n = inputs.shape[0]
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at_epoch(epoch)
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            x = inputs[batch]
            y = labels[batch]
            pre = x @ model.w1 + model.b1
            hidden = np.maximum(pre, 0.0)
            probs = softmax(hidden @ model.w2 + model.b2)
            losses, dscores = batch_loss_and_grad(spec, probs, y)
            loss = float(losses.mean())
            if not np.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch + 1}, batch {start // cfg.batch_size}"
                )
            epoch_loss += loss * batch.size
            dscores /= batch.size
            grad_w2 = hidden.T @ dscores
            grad_b2 = dscores.sum(axis=0)
            dhidden = dscores @ model.w2.T
            dhidden[pre <= 0.0] = 0.0
            grad_w1 = x.T @ dhidden
            grad_b1 = dhidden.sum(axis=0)
            optimizer.step([grad_w1, grad_b1, grad_w2, grad_b2], learning_rate=lr)
        model.loss_curve.append(epoch_loss / n)
    return model


@dataclass
class EvalResult:
    accuracy: float
    macro_f1: float
    confusion: np.ndarray


def evaluate(model: Classifier, data: LabeledWindowSet) -> EvalResult:
    """Accuracy, macro F1 (absent classes count as 0) and the confusion matrix
    with ground truth on rows and predictions on columns."""
    if data.n_windows == 0:
        raise EmptyDataError("no evaluation windows")
    predictions = model.predict(np.asarray(data.windows, dtype=np.float64))
    n_classes = data.n_classes
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (data.window_labels, predictions), 1)
    accuracy = float(np.trace(confusion) / confusion.sum())
    f1 = np.zeros(n_classes)
    for a in range(n_classes):
        tp = confusion[a, a]
        denom = 2 * tp + (confusion[:, a].sum() - tp) + (confusion[a, :].sum() - tp)
        f1[a] = 2.0 * tp / denom if denom > 0 else 0.0
    return EvalResult(accuracy=accuracy, macro_f1=float(f1.mean()), confusion=confusion)


def format_mean_std(mean: float, std: float) -> str:
    """Two-decimal "mean (± std)" cell, e.g. "82.47 (± 6.03")."""
    return f"{mean:.2f} (± {std:.2f})"
