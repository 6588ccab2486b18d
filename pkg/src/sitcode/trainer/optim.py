"""AdamW with a linear warmup / linear decay learning-rate schedule."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..numkit import Tensor


def warmup_steps(total_steps: int, warmup_frac: float) -> int:
    return int(round(warmup_frac * total_steps))


def lr_at(step: int, peak: float, total_steps: int, warmup: int) -> float:
    """Learning rate for 0-based ``step``.

    Rises linearly to ``peak`` over ``warmup`` steps (``peak / warmup`` at
    step 0, ``peak`` at step ``warmup - 1``), then falls linearly to zero at
    ``total_steps``.
    """
    if warmup > 0 and step < warmup:
        return peak * (step + 1) / warmup
    rest = max(total_steps - warmup, 1)
    return peak * max(0.0, 1.0 - (step - warmup) / rest)


class AdamW:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01, clip_norm: float | None = 1.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def grad_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64))) for p in self.params if p.grad is not None))

    def step(self, lr: float | None = None) -> float:
        """One update; returns the pre-clipping gradient norm."""
        lr = self.lr if lr is None else lr
        self.t += 1
        norm = self.grad_norm()
        factor = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            factor = self.clip_norm / (norm + 1e-12)
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad * factor
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            # decoupled decay acts on the weights, not through the moments
            p.data = (p.data - lr * (update + self.weight_decay * p.data)).astype(p.data.dtype, copy=False)
        return norm
