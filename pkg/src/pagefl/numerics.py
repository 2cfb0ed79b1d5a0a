"""Small dense feed-forward networks over flat float64 parameter vectors.

Every model in the package (the federated logistic model as well as the
actor and critic networks) is an :class:`MlpSpec` plus a flat parameter
vector. Layer ``k`` stores its weight matrix of shape ``(n_in, n_out)``
followed by its bias of length ``n_out``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

HIDDEN_ACTIVATIONS = ("tanh", "relu")
OUTPUT_HEADS = ("softmax_logits", "identity", "bounded_tanh", "simplex_softmax")


class ShapeError(ValueError):
    """Raised on dimension mismatches between specs, parameters and inputs."""


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    hidden_activation: str = "tanh"
    output_head: str = "identity"

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ShapeError(f"invalid layer sizes {sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_head not in OUTPUT_HEADS:
            raise ValueError(f"unknown output head {self.output_head!r}")

    @property
    def num_params(self) -> int:
        s = self.layer_sizes
        return sum(s[k] * s[k + 1] + s[k + 1] for k in range(len(s) - 1))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]


def init_params(spec: MlpSpec, rng: np.random.Generator, final_scale: float | None = None) -> np.ndarray:
    """Glorot-uniform weights, zero biases.

    ``final_scale`` replaces the Glorot limit of the last layer when given.
    """
    chunks = []
    sizes = spec.layer_sizes
    for k in range(len(sizes) - 1):
        n_in, n_out = sizes[k], sizes[k + 1]
        limit = np.sqrt(6.0 / (n_in + n_out))
        if final_scale is not None and k == len(sizes) - 2:
            limit = final_scale
        chunks.append(rng.uniform(-limit, limit, size=n_in * n_out))
        chunks.append(np.zeros(n_out))
    return np.concatenate(chunks).astype(np.float64)


def unpack(spec: MlpSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views ``(W, b)`` per layer into ``params``; no copies."""
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != spec.num_params:
        raise ShapeError(f"expected {spec.num_params} parameters, got shape {params.shape}")
    layers = []
    off = 0
    sizes = spec.layer_sizes
    for k in range(len(sizes) - 1):
        n_in, n_out = sizes[k], sizes[k + 1]
        W = params[off:off + n_in * n_out].reshape(n_in, n_out)
        off += n_in * n_out
        b = params[off:off + n_out]
        off += n_out
        layers.append((W, b))
    return layers


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _apply_head(head: str, z: np.ndarray) -> np.ndarray:
    if head == "bounded_tanh":
        return np.tanh(z)
    if head == "simplex_softmax":
        return softmax(z)
    return z


def _as_batch(spec: MlpSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ShapeError(f"expected input width {spec.input_dim}, got shape {x.shape}")
    return X, single


def forward_cached(spec: MlpSpec, params: np.ndarray, x, pre_head_noise=None):
    """Batched forward pass that also returns what :func:`backward` needs."""
    X, single = _as_batch(spec, x)
    layers = unpack(spec, params)
    acts = [X]
    h = X
    last = len(layers) - 1
    for k, (W, b) in enumerate(layers):
        z = h @ W + b
        if k < last:
            h = np.tanh(z) if spec.hidden_activation == "tanh" else np.maximum(z, 0.0)
            acts.append(h)
        else:
            if pre_head_noise is not None:
                z = z + pre_head_noise
            out = _apply_head(spec.output_head, z)
    return out, (acts, out, single)


def mlp_forward(spec: MlpSpec, params: np.ndarray, x, pre_head_noise=None) -> np.ndarray:
    """Network output for one input vector or a batch of rows.

    The ``softmax_logits`` head returns raw logits; probabilities come from
    :func:`softmax`.
    """
    out, (_, _, single) = forward_cached(spec, params, x, pre_head_noise)
    return out[0] if single else out


def backward(spec: MlpSpec, params: np.ndarray, cache, grad_out: np.ndarray):
    """Gradients of ``sum(grad_out * output)`` w.r.t. parameters and input."""
    acts, out, _ = cache
    G = np.asarray(grad_out, dtype=np.float64).reshape(out.shape)
    head = spec.output_head
    if head == "bounded_tanh":
        G = G * (1.0 - out * out)
    elif head == "simplex_softmax":
        G = out * (G - (G * out).sum(axis=-1, keepdims=True))
    layers = unpack(spec, params)
    grads = [None] * len(layers)
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        h_in = acts[k]
        grads[k] = ((h_in.T @ G).ravel(), G.sum(axis=0))
        G = G @ W.T
        if k > 0:
            if spec.hidden_activation == "tanh":
                G = G * (1.0 - h_in * h_in)
            else:
                G = G * (h_in > 0.0)
    flat = np.concatenate([part for pair in grads for part in pair])
    return flat, G


def ce_loss_and_grad(spec: MlpSpec, params: np.ndarray, X, y) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of a ``softmax_logits`` network and its gradient."""
    if spec.output_head != "softmax_logits":
        raise ShapeError("cross-entropy needs a softmax_logits head")
    y = np.asarray(y, dtype=np.int64)
    if y.shape[0] == 0:
        raise ValueError("empty batch")
    logits, cache = forward_cached(spec, params, X)
    if logits.shape[0] != y.shape[0]:
        raise ShapeError("features and labels disagree in length")
    if y.min() < 0 or y.max() >= spec.output_dim:
        raise ValueError("label outside class range")
    n = y.shape[0]
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -logp[rows, y].mean()
    G = np.exp(logp)
    G[rows, y] -= 1.0
    grad, _ = backward(spec, params, cache, G / n)
    return float(loss), grad


@lru_cache(maxsize=64)
def _layer_slices(spec: MlpSpec) -> tuple[tuple[int, int, int, int], ...]:
    out = []
    off = 0
    sizes = spec.layer_sizes
    for k in range(len(sizes) - 1):
        n_in, n_out = sizes[k], sizes[k + 1]
        out.append((off, n_in, n_out, off + n_in * n_out))
        off += n_in * n_out + n_out
    return tuple(out)


def ce_grad(spec: MlpSpec, params: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of the mean cross-entropy, skipping the loss and all input checks.

    Agrees with :func:`ce_loss_and_grad` to rounding; meant for inner training loops.
    """
    slices = _layer_slices(spec)
    layers = [(params[o:wb].reshape(n_in, n_out), params[wb:wb + n_out]) for o, n_in, n_out, wb in slices]
    acts = [X]
    h = X
    last = len(layers) - 1
    for k, (W, b) in enumerate(layers):
        z = h @ W + b
        if k < last:
            h = np.tanh(z) if spec.hidden_activation == "tanh" else np.maximum(z, 0.0)
            acts.append(h)
    z = z - z.max(axis=1, keepdims=True)
    G = np.exp(z)
    G /= G.sum(axis=1, keepdims=True)
    n = y.shape[0]
    G[np.arange(n), y] -= 1.0
    G /= n
    grads = []
    for k in range(last, -1, -1):
        W, _ = layers[k]
        h_in = acts[k]
        grads.append(G.sum(axis=0))
        grads.append((h_in.T @ G).ravel())
        if k > 0:
            G = G @ W.T
            G = G * (1.0 - h_in * h_in) if spec.hidden_activation == "tanh" else G * (h_in > 0.0)
    return np.concatenate(grads[::-1])


def mse_loss_and_grad(spec: MlpSpec, params: np.ndarray, X, T) -> tuple[float, np.ndarray]:
    out, cache = forward_cached(spec, params, X)
    T = np.asarray(T, dtype=np.float64).reshape(out.shape)
    if out.shape[0] == 0:
        raise ValueError("empty batch")
    diff = out - T
    loss = float(np.mean(diff * diff))
    grad, _ = backward(spec, params, cache, 2.0 * diff / diff.size)
    return loss, grad


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise ShapeError(f"params {params.shape} vs grad {grad.shape}")
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    return params - lr * grad


def grad_check(
    spec: MlpSpec,
    params: np.ndarray,
    loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    step: float = 1e-6,
) -> float:
    """Max of ``|analytic - central| / max(1, |central|)`` over all parameters."""
    params = np.array(params, dtype=np.float64)
    if params.shape[0] != spec.num_params:
        raise ShapeError("parameter length does not match spec")
    _, analytic = loss_fn(params)
    worst = 0.0
    for j in range(params.shape[0]):
        old = params[j]
        params[j] = old + step
        up, _ = loss_fn(params)
        params[j] = old - step
        down, _ = loss_fn(params)
        params[j] = old
        numeric = (up - down) / (2.0 * step)
        worst = max(worst, abs(analytic[j] - numeric) / max(1.0, abs(numeric)))
    return worst


class Adam:
    """Adam moments for one parameter vector; ``step`` returns new parameters."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not lr > 0:
            raise ValueError("learning rate must be positive")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if params.shape != grad.shape or grad.shape != self.m.shape:
            raise ShapeError("Adam state, params and grad disagree in shape")
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
