"""Adaptive-moment (Adam) optimizer over named parameter arrays, updated in place."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, parameters, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(parameters)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for _, p in self.params]
        self.v = [np.zeros_like(p) for _, p in self.params]
        self.t = 0

    def step(self, grads):
        """Apply one update. ``grads`` is a list aligned with the parameters."""
        self.t += 1
        if self.lr == 0:
            return
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for (_, p), g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            p -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
