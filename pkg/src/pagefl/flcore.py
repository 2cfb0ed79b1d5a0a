"""Local training, evaluation and weighted aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics
from .data import Dataset
from .numerics import MlpSpec, ShapeError

WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class LocalTrainSpec:
    epochs: int = 5
    learning_rate: float = 0.05
    minibatch_size: int = 32
    prox_mu: float = 0.0

    def __post_init__(self):
        if int(self.epochs) < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if int(self.minibatch_size) < 1:
            raise ValueError("minibatch size must be >= 1")
        if self.prox_mu < 0:
            raise ValueError("prox_mu must be non-negative")


def validate_weights(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ShapeError("aggregation weights must be a non-empty vector")
    upper_ok = np.all(p < 1.0) if p.size > 1 else True
    if not np.all(np.isfinite(p)) or np.any(p <= 0.0) or not upper_ok:
        raise ShapeError("aggregation weights must lie in (0, 1)")
    if abs(p.sum() - 1.0) > WEIGHT_TOL:
        raise ShapeError(f"aggregation weights sum to {p.sum()!r}, not 1")
    return p


def local_train(
    spec: MlpSpec,
    w: np.ndarray,
    train: Dataset,
    ts: LocalTrainSpec,
    anchor: np.ndarray | None = None,
    seed=0,
) -> np.ndarray:
    """``epochs`` shuffled passes of mini-batch SGD on cross-entropy.

    With ``prox_mu > 0`` the objective gains ``prox_mu/2 * ||w - anchor||^2``,
    handled by its closed-form proximal map after each gradient step.
    The last short batch of each pass is kept.
    """
    if len(train) == 0:
        raise ValueError("empty training set")
    w = np.array(w, dtype=np.float64)
    if ts.learning_rate == 0.0:
        return w
    if ts.prox_mu > 0:
        if anchor is None:
            raise ValueError("prox_mu > 0 needs an anchor model")
        anchor = np.asarray(anchor, dtype=np.float64)
    if w.shape[0] != spec.num_params:
        raise ShapeError(f"expected {spec.num_params} parameters, got {w.shape[0]}")
    if train.dim != spec.input_dim or train.num_classes != spec.output_dim:
        raise ShapeError("dataset does not match the model's input or output width")
    rng = np.random.default_rng(seed)
    n = len(train)
    bs = int(ts.minibatch_size)
    for _ in range(int(ts.epochs)):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            grad = numerics.ce_grad(spec, w, train.features[idx], train.labels[idx])
            if ts.prox_mu > 0:
                # explicit step on the loss, exact proximal step on the quadratic
                # anchor term; stable for any lr * prox_mu
                lm = ts.learning_rate * ts.prox_mu
                w = (numerics.sgd_step(w, grad, ts.learning_rate) + lm * anchor) / (1.0 + lm)
            else:
                w = numerics.sgd_step(w, grad, ts.learning_rate)
    return w


def steps_per_epoch(n: int, minibatch_size: int) -> int:
    return -(-n // minibatch_size)


def evaluate(spec: MlpSpec, w: np.ndarray, data: Dataset) -> tuple[float, float]:
    """Accuracy (argmax, ties to the lowest class) and mean cross-entropy."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    logits = numerics.mlp_forward(spec, w, data.features)
    logp = numerics.log_softmax(logits)
    pred = np.argmax(logits, axis=1)
    acc = float(np.mean(pred == data.labels))
    loss = float(-logp[np.arange(len(data)), data.labels].mean())
    return acc, loss


def aggregate(models: list[np.ndarray], weights) -> np.ndarray:
    """``sum_i p_i * w_i`` accumulated left to right in client order.

    Written as ``w_0 + sum_i p_i * (w_i - w_0)``, which equals the plain sum
    when the weights sum to one and returns ``w_0`` bit-exactly when all
    models coincide.
    """
    p = validate_weights(weights)
    if len(models) != p.size:
        raise ShapeError(f"{len(models)} models but {p.size} weights")
    first = np.asarray(models[0], dtype=np.float64)
    out = first.copy()
    for pi, m in zip(p[1:], models[1:]):
        m = np.asarray(m, dtype=np.float64)
        if m.shape != first.shape:
            raise ShapeError("models differ in length")
        out = out + pi * (m - first)
    return out


def global_loss(losses, weights) -> float:
    f = np.asarray(losses, dtype=np.float64)
    p = validate_weights(weights)
    if f.shape != p.shape:
        raise ShapeError("losses and weights differ in length")
    total = 0.0
    for pi, fi in zip(p, f):
        total += pi * fi
    return float(total)
