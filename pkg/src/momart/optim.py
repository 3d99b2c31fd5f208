"""Adam with bias correction and global gradient-norm clipping."""

from __future__ import annotations

import math

import numpy as np

from .tensorcore import ParamStore, TensorcoreError


class NonFiniteGradient(TensorcoreError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


class Adam:
    """Owns first/second moment state for every parameter in a ParamStore.

    One trainer mutates an Adam instance at a time; `step` replaces parameter
    arrays in the store rather than writing in place.
    """

    def __init__(self, store: ParamStore, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, clip_norm: float | None = 10.0):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m = {name: np.zeros_like(v) for name, v in store.items()}
        self.v = {name: np.zeros_like(v) for name, v in store.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(name)

        if self.clip_norm is not None:
            total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if total > self.clip_norm:
                scale = self.clip_norm / total
                grads = {name: g * scale for name, g in grads.items()}

        self.step_count += 1
        t = self.step_count
        b1c = 1.0 - self.beta1 ** t
        b2c = 1.0 - self.beta2 ** t
        for name, g in grads.items():
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            update = self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            self.store.replace(name, self.store[name] - update)
