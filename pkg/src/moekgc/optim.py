"""Adam over a ParamStore. Gradients are left untouched; the trainer zeroes."""

import numpy as np

from .errors import NumericError


class Adam:
    def __init__(self, store, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.moments = {
            g.name: (np.zeros_like(g.value), np.zeros_like(g.value))
            for g in store
            if g.trainable
        }

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.step_count
        corr2 = 1.0 - b2 ** self.step_count
        for group in self.store:
            if not group.trainable:
                continue
            grad = group.grad
            if not np.all(np.isfinite(grad)):
                raise NumericError(f"non-finite gradient in parameter group {group.name!r}")
            m, v = self.moments[group.name]
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad * grad
            group.value -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)

    def describe(self):
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "step_count": self.step_count,
        }

    def load(self, description, moments):
        self.lr = description["lr"]
        self.beta1 = description["beta1"]
        self.beta2 = description["beta2"]
        self.eps = description["eps"]
        self.step_count = description["step_count"]
        for name, (m, v) in moments.items():
            if name in self.moments:
                self.moments[name] = (
                    np.asarray(m, dtype=np.float64).copy(),
                    np.asarray(v, dtype=np.float64).copy(),
                )
