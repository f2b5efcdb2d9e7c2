"""Injection of outliers, missing data and biases into clean measurements.

Every mode is deterministic for a given seed and records each injected
event. Alongside the corrupted measurements a :class:`Corruption` holds the
per-entry mean shift and extra variance that an oracle estimator (perfect
rejector or ideal particle filter) may use.
"""
from __future__ import annotations

from typing import NamedTuple, Optional, Sequence

import numpy as np

from ..core import CorruptionEvent, make_rng

Array = np.ndarray

MODES = ("none", "gmm-outlier", "missing", "bias-random", "piecewise", "tdoa-outlier")


class Corruption(NamedTuple):
    measurements: Array
    log: list
    flags: Array           # (K, m) True where the entry is missing
    shift: Array           # (K, m) known deterministic offset (biases, drifts)
    extra_var: Array       # (K, m) extra variance of random contamination
    outlier_mask: Array    # (K, m) True where an abnormality was injected


def _events(mask: Array, values: Array, kind: str) -> list:
    ks, ds = np.nonzero(mask)
    return [CorruptionEvent(int(k) + 1, int(d), kind, float(values[k, d])) for k, d in zip(ks, ds)]


def _draw_gamma(gamma, rng) -> float:
    g = np.asarray(gamma, float)
    if g.ndim == 0:
        return float(g)
    if g.shape != (2,) or g[0] > g[1]:
        raise ValueError("gamma must be a scalar or a [low, high] range")
    return float(rng.uniform(g[0], g[1]))


def growth_drift_offset(k: Array) -> Array:
    """Deterministic drift/bias part of the growth-model contamination at 1-based steps ``k``."""
    k = np.asarray(k, float)
    out = np.zeros_like(k)
    drift = (k >= 100) & (k <= 500)
    out[drift] = 50.0 + 0.25 * (k[drift] - 100.0)
    out[(k >= 600) & (k <= 800)] = 150.0
    return out


def corrupt(measurements: Array, mode: str, seed=None, R: Optional[Array] = None, **params) -> Corruption:
    """Apply corruption ``mode`` to a ``(K, m)`` measurement array.

    Modes and their parameters
    --------------------------
    ``gmm-outlier``: ``lam``, ``gamma`` (scalar or ``[low, high]`` drawn once).
        Each entry independently receives extra noise so that its total
        variance becomes ``gamma R_ii``. Needs diagonal ``R``.
    ``missing``: ``lam``. Entries are set to 0 and flagged.
    ``bias-random``: ``lam``, ``xi`` (90), ``sigma_o`` (0.4, a variance),
        ``window`` (``[start, stop]`` 1-based inclusive, default whole run).
        Each dimension is biased with probability ``lam`` for the window by
        ``o + do_k`` with ``o ~ U(0, xi)`` fixed and ``do_k ~ N(0, sigma_o)``.
    ``piecewise``: ``schedule`` in ``{"growth-drift-bias", "cv-outliers", "cv-bias-window", "cv-bias-then-outliers"}``
        with ``lam``, ``gamma``, ``t_b`` as the schedule requires.
    ``tdoa-outlier``: ``lam``, ``gamma``, ``sigma2`` (per-sensor variances, length ``m + 1``).
        The reference sensor and sensor ``j + 1`` each fail with probability
        ``lam``; either failure corrupts dimension ``j`` with ``N(0, gamma (s1 + s_{j+1}))``.
    """
    Y = np.array(measurements, dtype=float, copy=True)
    if Y.ndim != 2:
        raise ValueError("measurements must be a (K, m) array")
    K, m = Y.shape
    rng = make_rng(seed)
    flags = np.zeros((K, m), bool)
    shift = np.zeros((K, m))
    extra = np.zeros((K, m))
    mask = np.zeros((K, m), bool)
    log: list = []
    if mode == "none":
        pass
    elif mode == "gmm-outlier":
        lam = float(params["lam"])
        if R is None:
            raise ValueError("gmm-outlier needs the nominal R")
        Rd = np.diag(np.asarray(R, float))
        gamma = _draw_gamma(params.get("gamma", 100.0), rng)
        mask = rng.random((K, m)) < lam
        add = np.sqrt(max(gamma - 1.0, 0.0) * Rd) * rng.standard_normal((K, m))
        Y = np.where(mask, Y + add, Y)
        extra[mask] = np.broadcast_to(max(gamma - 1.0, 0.0) * Rd, (K, m))[mask]
        log = _events(mask, add, "outlier")
    elif mode == "missing":
        lam = float(params["lam"])
        mask = rng.random((K, m)) < lam
        log = _events(mask, Y, "missing")
        Y[mask] = 0.0
        flags = mask.copy()
    elif mode == "bias-random":
        lam = float(params["lam"])
        xi = float(params.get("xi", 90.0))
        s_o = float(params.get("sigma_o", 0.4))
        start, stop = params.get("window", (1, K))
        present = rng.random(m) < lam
        o = rng.uniform(0.0, xi, m)
        steps = np.arange(1, K + 1)
        active = (steps >= start) & (steps <= stop)
        dO = np.sqrt(s_o) * rng.standard_normal((K, m))
        mask = active[:, None] & present[None, :]
        b = np.where(mask, o + dO, 0.0)
        Y += b
        shift = b
        log = _events(mask, b, "bias")
    elif mode == "piecewise":
        Y, shift, extra, mask, log = _piecewise(Y, rng, **params)
    elif mode == "tdoa-outlier":
        lam = float(params["lam"])
        gamma = _draw_gamma(params.get("gamma", 200.0), rng)
        s2 = np.broadcast_to(np.asarray(params.get("sigma2", 10.0), float), (m + 1,))
        ref = rng.random(K) < lam
        own = rng.random((K, m)) < lam
        mask = ref[:, None] | own
        var = gamma * (s2[0] + s2[1:])
        add = np.sqrt(var) * rng.standard_normal((K, m))
        Y = np.where(mask, Y + add, Y)
        extra = np.where(mask, var, 0.0)
        log = _events(mask, add, "outlier")
    else:
        raise ValueError(f"unknown corruption mode {mode!r}; choose from {MODES}")
    return Corruption(Y, log, flags, shift, extra, mask)


def _piecewise(Y: Array, rng: np.random.Generator, schedule: str, lam: float = 0.4,
               gamma: float = 100.0, t_b: float = 0.1, **_):
    K, m = Y.shape
    steps = np.arange(1, K + 1)
    shift = np.zeros((K, m))
    extra = np.zeros((K, m))
    out_mask = np.zeros((K, m), bool)
    log: list = []
    if schedule == "growth-drift-bias":
        if m != 1:
            raise ValueError("growth-drift-bias applies to scalar measurements")
        shift[:, 0] = growth_drift_offset(steps)
        win = (steps >= 900) & (steps <= 1300)
        xi = win & (rng.random(K) < 0.4)
        z = np.sqrt(50.0 ** 2 * 5.0) * rng.standard_normal(K)
        out_mask[:, 0] = xi
        extra[xi, 0] = 50.0 ** 2 * 5.0
        Y = Y + shift + np.where(out_mask, z[:, None], 0.0)
        log = _events(shift != 0, shift, "bias") + _events(out_mask, z[:, None] * np.ones((1, m)), "outlier")
        return Y, shift, extra, (shift != 0) | out_mask, log
    if m != 2:
        raise ValueError("cv schedules apply to range/bearing measurements")
    Rd = np.array([8.0, 0.002])

    def outliers(active, lam_, gamma_):
        om = active[:, None] & (rng.random((K, m)) < lam_)
        z = np.sqrt(gamma_ * Rd) * rng.standard_normal((K, m))
        return om, np.where(om, z, 0.0)

    if schedule == "cv-outliers":
        om, z = outliers(np.ones(K, bool), lam, gamma)
    elif schedule == "cv-bias-window":
        active = (steps >= 200) & (steps <= 200 + t_b * K)
        shift[active] = [200.0, np.pi / 3]
        om, z = np.zeros((K, m), bool), np.zeros((K, m))
    elif schedule == "cv-bias-then-outliers":
        active = (steps >= 100) & (steps <= 400)
        shift[active] = [400.0, np.pi / 2]
        om, z = outliers((steps >= 500) & (steps <= 600), 0.4, 150.0)
        gamma = 150.0
    else:
        raise ValueError(f"unknown schedule {schedule!r}")
    extra[om] = np.broadcast_to(gamma * Rd, (K, m))[om]
    Y = Y + shift + z
    log = _events(shift != 0, shift, "bias") + _events(om, z, "outlier")
    return Y, shift, extra, (shift != 0) | om, log
