"""Adam and the step learning-rate schedule."""

import numpy as np

from .errors import ConfigurationError


def step_lr(epoch, base_lr=1e-4, decay_epoch=120, factor=0.1):
    """Learning rate for a 1-indexed epoch: ``base_lr`` up to ``decay_epoch``, then scaled by ``factor``."""
    return base_lr if epoch <= decay_epoch else base_lr * factor


class Adam:
    """Adam with bias correction over a fixed, ordered list of named parameters."""

    def __init__(self, named_params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        if lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {lr}")
        self.named = [(n, p) for n, p in named_params if p.requires_grad]
        self.lr = float(lr)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.named}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named}

    def zero_grad(self):
        for _, p in self.named:
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        c1 = 1 - self.beta1 ** t
        c2 = 1 - self.beta2 ** t
        for name, p in self.named:
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def grad_norms(self):
        return {n: float(np.linalg.norm(p.grad)) for n, p in self.named if p.grad is not None}

    def state_dict(self):
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "step": self.step_count,
            "m": {n: a.copy() for n, a in self.m.items()},
            "v": {n: a.copy() for n, a in self.v.items()},
        }

    def load_state_dict(self, state):
        self.lr = float(state["lr"])
        self.beta1, self.beta2, self.eps = float(state["beta1"]), float(state["beta2"]), float(state["eps"])
        self.step_count = int(state["step"])
        for n in self.m:
            if n in state["m"]:
                self.m[n][...] = state["m"][n]
                self.v[n][...] = state["v"][n]
