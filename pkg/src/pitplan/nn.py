"""Tiny dense-network toolkit with hand-derived gradients.

Kept in-module (no learning framework) so every gradient used by the
scenario generator and the adaptive controllers can be checked against
central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


@dataclass
class Dense:
    W: np.ndarray  # (n_out, n_in)
    b: np.ndarray  # (n_out,)

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator, scale: str = "he") -> "Dense":
        std = np.sqrt(2.0 / n_in) if scale == "he" else np.sqrt(1.0 / n_in)
        return cls(W=rng.standard_normal((n_out, n_in)) * std, b=np.zeros(n_out))

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x @ self.W.T + self.b


class Mlp:
    """Dense layers with relu between them; final layer linear."""

    def __init__(self, layers: list[Dense]):
        self.layers = layers

    @classmethod
    def init(cls, sizes: list[int], rng: np.random.Generator) -> "Mlp":
        layers = []
        for k in range(len(sizes) - 1):
            scale = "he" if k < len(sizes) - 2 else "xavier"
            layers.append(Dense.init(sizes[k], sizes[k + 1], rng, scale))
        return cls(layers)

    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        h = x
        for k, layer in enumerate(self.layers):
            if cache is not None:
                cache.append(h)
            h = layer.forward(h)
            if k < len(self.layers) - 1:
                h = relu(h)
        return h

    def backward(self, cache: list, d_out: np.ndarray) -> tuple[np.ndarray, list]:
        """Given cached layer inputs and the output-gradient, return the
        input-gradient and per-layer (dW, db)."""
        grads: list = [None] * len(self.layers)
        grad = d_out
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            grads[k] = (grad.T @ cache[k], grad.sum(axis=0))
            grad = grad @ layer.W
            if k > 0:
                # cache[k] is the relu output that fed layer k
                grad = grad * (cache[k] > 0)
        return grad, grads

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.W, layer.b])
        return out


def flatten_params(params: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([p.ravel() for p in params])


def set_flat_params(params: list[np.ndarray], flat: np.ndarray) -> None:
    pos = 0
    for p in params:
        p.flat[:] = flat[pos : pos + p.size]
        pos += p.size


@dataclass
class Adam:
    """Adaptive-moment gradient ascent/descent over a parameter list."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], minimize: bool = True) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        sign = -1.0 if minimize else 1.0
        for k, (p, g) in enumerate(zip(params, grads)):
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            mhat = self.m[k] / (1 - self.beta1**self.t)
            vhat = self.v[k] / (1 - self.beta2**self.t)
            p += sign * self.lr * mhat / (np.sqrt(vhat) + self.eps)
