"""Plain-array optimizers operating on named parameter dicts."""

from __future__ import annotations

import numpy as np


class SGD:
    """Momentum SGD with L2 weight decay folded into the gradient."""

    def __init__(self, keys, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.keys = list(keys)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k in self.keys:
            g = grads[k]
            if self.weight_decay:
                g = g + self.weight_decay * tensors[k]
            v = self.velocity.get(k)
            v = g if v is None else self.momentum * v + g
            self.velocity[k] = v
            tensors[k] -= self.lr * v


class Adam:
    def __init__(self, keys, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.keys = list(keys)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k in self.keys:
            g = grads[k]
            m = self.m.get(k, np.zeros_like(g))
            v = self.v.get(k, np.zeros_like(g))
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self.m[k] = m
            self.v[k] = v
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            tensors[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
