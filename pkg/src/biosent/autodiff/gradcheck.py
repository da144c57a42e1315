"""Central-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .core import Tensor, backward, no_grad

REL_FLOOR = 1e-8


def numeric_grad(f, param: Tensor, h: float, indices=None) -> np.ndarray:
    """(f(θ+h) − f(θ−h)) / 2h for the selected flat entries of ``param``."""
    flat = param.data.reshape(-1)
    if not np.shares_memory(flat, param.data):
        raise ValueError("parameter data must be contiguous")
    if indices is None:
        indices = range(flat.size)
    out = np.zeros(flat.size)
    with no_grad():
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data.sum())
            flat[i] = orig - h
            fm = float(f().data.sum())
            flat[i] = orig
            out[i] = (fp - fm) / (2 * h)
    return out.reshape(param.shape)


def grad_check(f, params, h: float = 1e-5, max_entries: int | None = None, rng=None, return_details=False):
    """Max relative error between analytic and central-difference gradients.

    ``f`` is a zero-argument callable returning a scalar Tensor; it must be
    deterministic. Relative error per entry is
    ``|a − n| / max(|a|, |n|, 1e-8)``. ``max_entries`` caps how many entries
    of each parameter are probed (chosen with ``rng``).
    """
    params = list(params)
    for p in params:
        if p.dtype != np.float64:
            raise TypeError("grad_check needs float64 parameters")
        p.grad = None
    loss = f()
    backward(loss)
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    details = []
    for p in params:
        analytic = np.zeros(p.shape) if p.grad is None else np.asarray(p.grad, dtype=np.float64)
        if max_entries is not None and p.size > max_entries:
            idx = rng.choice(p.size, size=max_entries, replace=False)
        else:
            idx = np.arange(p.size)
        numeric = numeric_grad(f, p, h, idx).reshape(-1)[idx]
        a = analytic.reshape(-1)[idx]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), REL_FLOOR)
        err = float(np.max(np.abs(a - numeric) / denom)) if idx.size else 0.0
        details.append(err)
        worst = max(worst, err)
    return (worst, details) if return_details else worst
