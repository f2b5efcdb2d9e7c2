"""Error metrics over Monte-Carlo runs.

Arrays are shaped ``(L, K, n)``: runs, time steps, state dimensions. A
single run may be passed as ``(K, n)``.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

Array = np.ndarray


def _align(truth, est) -> tuple[Array, Array]:
    t = np.asarray(truth, float)
    e = np.asarray(est, float)
    if t.shape != e.shape:
        raise ValueError(f"truth {t.shape} and estimates {e.shape} are misaligned")
    if t.ndim == 2:
        t, e = t[None], e[None]
    if t.ndim != 3:
        raise ValueError("expected (K, n) or (L, K, n) arrays")
    return t, e


def _sq_err(truth, est, idx: Optional[Sequence[int]]) -> Array:
    t, e = _align(truth, est)
    d = t - e
    if idx is not None:
        d = d[..., list(idx)]
    return np.sum(d ** 2, axis=-1)          # (L, K)


def rmse_state(truth, est) -> Array:
    """Per-run RMSE over time and all state entries: ``sqrt(mean_k ||e_k||^2)``, shape ``(L,)``."""
    return np.sqrt(_sq_err(truth, est, None).mean(axis=1))


def mse_state(truth, est) -> Array:
    """Per-run time-averaged squared state error ``mean_k ||e_k||^2``, shape ``(L,)``."""
    return _sq_err(truth, est, None).mean(axis=1)


def rmse_pos(truth, est, idx: Sequence[int] = (0, 2)) -> Array:
    """Per-run position RMSE ``sqrt(mean_k (da^2 + db^2))``, shape ``(L,)``."""
    return np.sqrt(_sq_err(truth, est, idx).mean(axis=1))


def rmse_series(truth, est, idx: Optional[Sequence[int]] = None) -> Array:
    """RMSE across runs at each step, shape ``(K,)``."""
    return np.sqrt(_sq_err(truth, est, idx).mean(axis=0))


def trmse(truth, est) -> float:
    """Time average of the across-run RMSE of the full state."""
    return float(rmse_series(truth, est).mean())


def trmse_pos(truth, est, idx: Sequence[int] = (0, 1)) -> float:
    """Time average of the across-run position RMSE."""
    return float(rmse_series(truth, est, idx).mean())


def summarize(values) -> dict:
    v = np.asarray(values, float)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"median": float(med), "q1": float(q1), "q3": float(q3), "mean": float(v.mean()),
            "n": int(v.size)}
