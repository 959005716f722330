"""Adadelta: learning-rate-free adaptive updates.

Per parameter, with decay rho and stabilizer eps:

    E[g^2]  <- rho * E[g^2]  + (1 - rho) * g^2
    dx       = -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
    E[dx^2] <- rho * E[dx^2] + (1 - rho) * dx^2
    x       <- x + dx

The gradient accumulator is refreshed before the update is computed, the
update accumulator after, so the very first step moves by
-sqrt(eps)/sqrt((1-rho)*g^2 + eps) * g.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericError
from .tensor import Tensor


class Adadelta:
    def __init__(self, params: dict[str, Tensor], rho: float = 0.95, eps: float = 1e-6):
        self.params = dict(params)
        self.rho = rho
        self.eps = eps
        self.sq_grad = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.sq_delta = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self) -> None:
        """Apply one update from the gradients currently held by the params."""
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            eg = self.sq_grad[name]
            eg *= self.rho
            eg += (1.0 - self.rho) * g * g
            delta = -np.sqrt(self.sq_delta[name] + self.eps) / np.sqrt(eg + self.eps) * g
            ed = self.sq_delta[name]
            ed *= self.rho
            ed += (1.0 - self.rho) * delta * delta
            p.data += delta

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
