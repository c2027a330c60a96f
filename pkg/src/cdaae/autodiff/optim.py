"""Adaptive-moment optimizer."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Parameter


class Adam:
    """Adam with bias correction.

    State (``m``, ``v``, ``step``) is exposed so checkpoints can round-trip it.
    """

    def __init__(self, params: Sequence[Parameter], lr: float = 2e-4, betas: tuple[float, float] = (0.5, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        missing = [i for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            names = [self.params[i].name or f"#{i}" for i in missing[:3]]
            raise RuntimeError(f"optimizer step with missing gradients for {len(missing)} parameter(s): {names}")
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.step_count
        c2 = 1 - b2**self.step_count
        lr = np.float32(self.lr * np.sqrt(c2) / c1)
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad.astype(np.float32, copy=False)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= lr * m / (np.sqrt(v) + np.float32(self.eps * np.sqrt(c2)))

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m.{i}"] = m
            out[f"v.{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step: int) -> None:
        for i in range(len(self.params)):
            self.m[i][...] = arrays[f"m.{i}"]
            self.v[i][...] = arrays[f"v.{i}"]
        self.step_count = step
