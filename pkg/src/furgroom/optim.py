"""First-order optimizer shared by LBS fitting and strand optimization."""

import math

import numpy as np


class Adam:
    """Adam over a dict of named float arrays (updated in place).

    ``lr`` is a scalar or a dict keyed like ``params``. With ``total_steps``
    set, the rate follows a cosine decay down to ``min_lr_ratio`` of its
    initial value.
    """

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8,
                 total_steps=None, min_lr_ratio=0.0):
        self.params = params
        self.lr = lr if isinstance(lr, dict) else {k: lr for k in params}
        self.b1, self.b2 = betas
        self.eps = eps
        self.total_steps = total_steps
        self.min_lr_ratio = min_lr_ratio
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def schedule(self):
        if not self.total_steps:
            return 1.0
        frac = min(self.t / self.total_steps, 1.0)
        return self.min_lr_ratio + (1 - self.min_lr_ratio) * 0.5 * (1 + math.cos(math.pi * frac))

    def step(self, grads):
        factor = self.schedule()
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            if k not in self.params:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            self.params[k] -= self.lr[k] * factor * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self):
        return {"t": self.t, "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}
