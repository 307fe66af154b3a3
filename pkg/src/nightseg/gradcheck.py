"""Finite-difference verification of tape gradients.

``grad_check`` compares the analytic gradient of a scalar-valued function
against central differences, coordinate by coordinate, in 64-bit. The
probe mutates ``x.data`` in place and restores it, so the function under
test must read ``x`` fresh on every call.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor, backward

__all__ = ["grad_check"]


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max over coordinates of |a-n| / max(1e-8, |a|+|n|)."""
    if x.data.dtype != np.float64:
        raise ValueError("grad_check requires a float64 tensor")
    x.requires_grad = True
    x.grad = None
    with Tape():
        y = f(x)
        if y.data.size != 1:
            raise ValueError(f"grad_check: f must return a scalar, got shape {y.shape}")
        backward(y)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None

    flat = x.data.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = f(x).item()
        flat[i] = keep - h
        fm = f(x).item()
        flat[i] = keep
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"grad_check: non-finite evaluation at coordinate {i}")
        numeric = (fp - fm) / (2.0 * h)
        a = analytic.reshape(-1)[i]
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, err)
    return worst
