"""Adaptive-moment optimizer with decoupled weight decay (AdamW)."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

__all__ = ["AdamW", "MissingGradientError"]


class MissingGradientError(RuntimeError):
    """A parameter reached step() without a populated gradient."""


class AdamW:
    """Decoupled-weight-decay adaptive-moment update over named parameters.

    Defaults follow the common convention: beta1=0.9, beta2=0.999, eps=1e-8,
    weight decay 0.01. Gradients are zeroed after each step.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ) -> None:
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> None:
        missing = [name for name, p in self.params.items() if p.grad is None]
        if missing:
            raise MissingGradientError(
                "parameters without gradients: " + ", ".join(sorted(missing))
            )
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay != 0.0:
                update = update + self.weight_decay * p.data
            p.data -= self.lr * update
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
