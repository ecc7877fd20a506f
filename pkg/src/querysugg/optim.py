"""Adam optimizer over named parameter blocks."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """One update in place; blocks absent from grads are left untouched."""
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for key, g in grads.items():
            if key not in params:
                raise KeyError(f"gradient for unknown parameter block {key!r}")
            if key not in self._m:
                self._m[key] = np.zeros_like(params[key])
                self._v[key] = np.zeros_like(params[key])
            m = self._m[key]
            v = self._v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            params[key] -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
