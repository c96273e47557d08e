"""Embedding-to-weights mapping: a small fully connected network.

Hidden layers use ReLU, the output layer is linear. Written against plain
numpy arrays with explicit forward and backward passes so the trainer can
drive it with an exact analytic gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_HIDDEN = (256,)


@dataclass
class MlpParams:
    weights: list[np.ndarray]  # weights[i]: (n_in, n_out)
    biases: list[np.ndarray]   # biases[i]: (n_out,)

    @property
    def layers(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_mlp(layers: list[int], seed: int) -> MlpParams:
    """He-style init: W ~ N(0, 2/fan_in), biases zero."""
    if len(layers) < 2:
        raise ValueError("need at least input and output layer sizes")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(layers[:-1], layers[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return MlpParams(weights, biases)


def mlp_forward(params: MlpParams, x: np.ndarray):
    """Returns (output (n, p), cache). x is (n, z) or (z,)."""
    single = x.ndim == 1
    h = np.atleast_2d(np.asarray(x, dtype=float))
    cache = [h]
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < n_layers - 1:
            h = np.maximum(h, 0.0)
        cache.append(h)
    return (h[0] if single else h), cache


def mlp_backward(params: MlpParams, cache: list[np.ndarray], dy: np.ndarray):
    """Backprop dLoss/dOutput (n, p) through the cached forward pass.

    Returns (MlpParams gradients, dLoss/dInput)."""
    dy = np.atleast_2d(np.asarray(dy, dtype=float))
    d_weights = [np.empty(0)] * len(params.weights)
    d_biases = [np.empty(0)] * len(params.biases)
    grad = dy
    for i in reversed(range(len(params.weights))):
        if i < len(params.weights) - 1:
            grad = grad * (cache[i + 1] > 0)  # ReLU mask on this layer's activations
        d_weights[i] = cache[i].T @ grad
        d_biases[i] = grad.sum(axis=0)
        grad = grad @ params.weights[i].T
    return MlpParams(d_weights, d_biases), grad


def flatten_params(params: MlpParams) -> np.ndarray:
    parts = [w.ravel() for w in params.weights] + [b.ravel() for b in params.biases]
    return np.concatenate(parts)


def unflatten_params(vec: np.ndarray, layers: list[int]) -> MlpParams:
    vec = np.asarray(vec, dtype=float)
    weights, biases = [], []
    pos = 0
    for n_in, n_out in zip(layers[:-1], layers[1:]):
        weights.append(vec[pos:pos + n_in * n_out].reshape(n_in, n_out).copy())
        pos += n_in * n_out
    for n_out in layers[1:]:
        biases.append(vec[pos:pos + n_out].copy())
        pos += n_out
    if pos != vec.size:
        raise ValueError("parameter vector length does not match layer sizes")
    return MlpParams(weights, biases)


def predict_theta(params: MlpParams, z_emb: np.ndarray) -> np.ndarray:
    """Map one compressed embedding to a task-weight vector."""
    out, _ = mlp_forward(params, np.asarray(z_emb, dtype=float))
    return out
