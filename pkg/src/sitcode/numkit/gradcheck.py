"""Central finite differences, used as an independent check on :func:`backward`."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def finite_diff(f: Callable[[Tensor], object], x: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Numerical gradient of scalar ``f`` at ``x`` by central differences.

    ``x.data`` is perturbed in place one coordinate at a time and restored
    afterwards; ``f`` must read ``x`` afresh on every call.
    """
    original = x.data
    work = np.array(original, dtype=np.float64)
    x.data = work
    flat = work.reshape(-1)
    out = np.zeros(work.size)
    try:
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            hi = _scalar(f(x))
            flat[i] = keep - eps
            lo = _scalar(f(x))
            flat[i] = keep
            out[i] = (hi - lo) / (2.0 * eps)
    finally:
        x.data = original
    return out.reshape(original.shape)


def _scalar(v) -> float:
    if isinstance(v, Tensor):
        v = v.data
    return float(np.asarray(v).reshape(-1)[0])


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(f: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between backward and finite differences over ``inputs``."""
    for t in inputs:
        t.grad = None
    f().backward()
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = finite_diff(lambda _: f(), t, eps)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
