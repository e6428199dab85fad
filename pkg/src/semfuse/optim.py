"""AdamW with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from .errors import EvaluationError, ParameterError


class AdamW:
    """Bias-corrected Adam moments; decay applied to weights, not moments."""

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        if not lr > 0:
            raise ParameterError(f"learning rate must be positive, got {lr}")
        b1, b2 = betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ParameterError(f"betas must lie in [0, 1), got {betas}")
        if eps <= 0 or weight_decay < 0:
            raise ParameterError("eps must be positive and weight_decay nonnegative")
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = b1, b2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        grads = []
        for p in self.params:
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if not np.isfinite(g).all():
                raise EvaluationError(f"non-finite gradient for {getattr(p, 'name', 'param')}")
            grads.append(g)
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            denom = np.sqrt(v / c2) + self.eps
            update = self.lr * (m / c1) / denom
            if self.weight_decay:
                update = update + self.lr * self.weight_decay * p.data
            p.data -= update

    def state_arrays(self) -> dict:
        """Optimizer state keyed for checkpointing."""
        out = {"step": self.t}
        for p, m, v in zip(self.params, self.m, self.v):
            out[f"m::{p.name}"] = m
            out[f"v::{p.name}"] = v
        return out

    def load_state_arrays(self, state: dict):
        self.t = int(state["step"])
        for i, p in enumerate(self.params):
            self.m[i] = np.array(state[f"m::{p.name}"], dtype=np.float64)
            self.v[i] = np.array(state[f"v::{p.name}"], dtype=np.float64)
