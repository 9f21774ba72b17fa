"""Adam with global gradient-norm clipping."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class TrainingDiverged(RuntimeError):
    """A gradient or update became non-finite; message names the parameter."""


class Adam:
    """Adam over a named parameter dict.

    Gradients are clipped by their global L2 norm across all parameters
    before the moment updates, so one exploding chain cannot blow up the
    rest.  ``clip_norm=None`` disables clipping.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 clip_norm: float | None = 2.0):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def global_grad_norm(self) -> float:
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float((p.grad * p.grad).sum())
        return float(np.sqrt(total))

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise TrainingDiverged(f"non-finite gradient in parameter '{name}'")
        scale = 1.0
        if self.clip_norm is not None:
            norm = self.global_grad_norm()
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            g = g * scale
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.data = p.data - update
            if not np.isfinite(p.data).all():
                raise TrainingDiverged(f"non-finite value in parameter '{name}' after update")
