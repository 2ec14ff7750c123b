from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import NumericError, Tensor


def numeric_grad(f: Callable[[], Tensor], x: Tensor, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x``."""
    g = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(f().data)
        flat[i] = old - h
        fm = float(f().data)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-6) -> float:
    """Max over entries of ``|g_ad - g_fd| / max(1, |g_fd|)``.

    ``f`` must rebuild the graph on every call from the current values of
    ``params``; entries are perturbed in place.
    """
    for p in params:
        p.grad = None
        p.requires_grad = True
    out = f()
    if out.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise NumericError("grad_check: function value is not finite")
    out.backward()
    worst = 0.0
    for p in params:
        ad = np.zeros_like(p.data) if p.grad is None else p.grad
        fd = numeric_grad(f, p, h)
        if not np.isfinite(fd).all():
            raise NumericError("grad_check: finite-difference gradient is not finite")
        err = np.abs(ad - fd) / np.maximum(1.0, np.abs(fd))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
