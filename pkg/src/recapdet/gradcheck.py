"""Central finite-difference checks for reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from recapdet.tensor import Tensor, backward, zero_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_grad(fn: Callable[[], Tensor], param: Tensor, index: tuple, step: float = 1e-5) -> float:
    old = param.data[index]
    param.data[index] = old + step
    fp = float(fn().data)
    param.data[index] = old - step
    fm = float(fn().data)
    param.data[index] = old
    return (fp - fm) / (2.0 * step)


def check_gradients(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    n_samples: int | None = None,
    step: float = 1e-5,
    rng: np.random.Generator | None = None,
) -> dict:
    """Compare backprop gradients of scalar ``fn()`` against central differences.

    With ``n_samples`` set, that many (param, element) coordinates are drawn
    uniformly over all elements of all params; otherwise every element is
    checked. Returns a dict with the per-coordinate records and the worst
    relative error.
    """
    zero_grad(params)
    loss = fn()
    backward(loss)
    analytic = [p.grad.copy() for p in params]

    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    if n_samples is None or n_samples >= total:
        flat = np.arange(total)
    else:
        rng = rng or np.random.default_rng(0)
        flat = np.sort(rng.choice(total, size=n_samples, replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    records = []
    for f in flat:
        pi = int(np.searchsorted(offsets, f, side="right") - 1)
        p = params[pi]
        idx = np.unravel_index(int(f - offsets[pi]), p.shape)
        num = numeric_grad(fn, p, idx, step)
        ana = float(analytic[pi][idx])
        records.append((pi, idx, ana, num, float(relative_error(ana, num))))
    zero_grad(params)
    worst = max((r[4] for r in records), default=0.0)
    return {"records": records, "max_rel_error": worst, "n_checked": len(records)}
