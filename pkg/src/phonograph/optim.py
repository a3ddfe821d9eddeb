"""AdamW with decoupled weight decay and per-group learning rates."""

import numpy as np


class AdamW:
    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        """``groups`` is a list of ``{"params": [...], "lr": float}`` dicts.

        A group may override ``weight_decay``.
        """
        self.groups = []
        for g in groups:
            if g["lr"] < 0:
                raise ValueError("learning rate must be non-negative")
            self.groups.append({"params": list(g["params"]), "lr": g["lr"], "weight_decay": g.get("weight_decay", weight_decay)})
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.state = {}

    def zero_grad(self):
        for g in self.groups:
            for p in g["params"]:
                p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for g in self.groups:
            lr, wd = g["lr"], g["weight_decay"]
            for p in g["params"]:
                if p.grad is None:
                    continue
                m, v = self.state.get(id(p), (None, None))
                if m is None:
                    m = np.zeros_like(p.data)
                    v = np.zeros_like(p.data)
                m = self.b1 * m + (1.0 - self.b1) * p.grad
                v = self.b2 * v + (1.0 - self.b2) * p.grad * p.grad
                self.state[id(p)] = (m, v)
                p.data *= 1.0 - lr * wd
                p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
