"""Central finite-difference gradient checker.

The check temporarily promotes the parameters to float64 so the numeric
derivative is not dominated by float32 rounding.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, backward


def gradient_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-6,
    max_coords: Optional[int] = 30,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must be deterministic and rebuild its graph from the current parameter
    values on each call. Up to ``max_coords`` coordinates per parameter are
    sampled (all of them when None). The relative error of a coordinate is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    rng = rng or np.random.default_rng(0)
    originals = [p.data for p in params]
    try:
        for p in params:
            p.data = p.data.astype(np.float64)
            p.grad = None
        loss = fn()
        backward(loss, params)
        analytic = [p.grad.astype(np.float64) for p in params]

        worst = 0.0
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            n = flat.size
            coords = np.arange(n) if max_coords is None or n <= max_coords else rng.choice(n, max_coords, replace=False)
            for c in coords:
                old = flat[c]
                flat[c] = old + eps
                up = float(fn().data)
                flat[c] = old - eps
                down = float(fn().data)
                flat[c] = old
                num = (up - down) / (2 * eps)
                a = float(ga.reshape(-1)[c])
                err = abs(a - num) / max(abs(a), abs(num), 1e-8)
                worst = max(worst, err)
        return worst
    finally:
        for p, orig in zip(params, originals):
            p.data = orig
            p.grad = None
