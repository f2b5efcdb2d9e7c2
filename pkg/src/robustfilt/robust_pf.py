"""Particle filters for measurements with outliers and biases.

The robust filter augments the state with bias magnitudes ``Theta`` and
per-dimension regime labels ``J`` (0 clean, 1 outlier, 2 bias). In regime 1
the measurement variance grows by ``U_ii``; in regime 2 the mean shifts by
``Theta_i`` and the variance grows by ``Upsilon_ii``. A bias persists (with
Gaussian drift ``Delta``) only while the previous regime was 2; otherwise a
fresh magnitude is drawn uniformly on ``[c_i, d_i]``.

The bootstrap and ideal modes share the same propagation and resampling
code, differing only in the likelihood.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.stats import multivariate_normal

from .core import GaussianBelief, StateSpaceModel, make_rng
from .gaussian import systematic_resample

Array = np.ndarray
logger = logging.getLogger(__name__)

ProcessSampler = Callable[[np.random.Generator, int], Array]


def _diag_vec(M, m: int, name: str) -> Array:
    M = np.asarray(M, float)
    if M.ndim == 0:
        return np.full(m, float(M))
    if M.ndim == 1:
        return M.copy()
    if np.any(M - np.diag(np.diag(M))):
        raise ValueError(f"{name} must be diagonal")
    return np.diag(M).copy()


@dataclass(frozen=True)
class AbnormalityConfig:
    """Statistics of the abnormal measurement regimes.

    ``U``, ``Upsilon`` and ``Delta`` may be given as diagonal matrices or as
    vectors of their diagonals. ``transition[a, b]`` is the probability of
    moving from regime ``a`` to regime ``b``.
    """

    U: Array
    Upsilon: Array
    Delta: Array
    c: Array
    d: Array
    transition: Optional[Array] = None

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, float))
        d = np.atleast_1d(np.asarray(self.d, float))
        m = c.shape[0]
        if d.shape != (m,) or np.any(c >= d):
            raise ValueError("need c < d elementwise with matching shapes")
        vals = {}
        for name in ("U", "Upsilon", "Delta"):
            v = _diag_vec(getattr(self, name), m, name)
            if v.shape != (m,) or np.any(v < 0):
                raise ValueError(f"{name} must have {m} nonnegative diagonal entries")
            vals[name] = v
        T = np.full((3, 3), 1.0 / 3.0) if self.transition is None else np.asarray(self.transition, float)
        if T.shape != (3, 3) or np.any(T < 0) or np.any(np.abs(T.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("transition must be a 3x3 row-stochastic matrix")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "transition", T)
        for name, v in vals.items():
            object.__setattr__(self, name, v)

    @property
    def m(self) -> int:
        return self.c.shape[0]


@dataclass(frozen=True)
class AugmentedParticle:
    x: Array
    theta: Array
    regimes: Array
    weight: float = 1.0

    def __post_init__(self):
        r = np.asarray(self.regimes)
        if not np.all(np.isin(r, (0, 1, 2))):
            raise ValueError("regimes must take values in {0, 1, 2}")
        if not np.isfinite(self.weight) or self.weight < 0:
            raise ValueError("weight must be finite and nonnegative")


def _gaussian_sampler(Q: Array) -> ProcessSampler:
    w, V = np.linalg.eigh(0.5 * (Q + Q.T))
    L = V * np.sqrt(np.maximum(w, 0.0))

    def sample(rng: np.random.Generator, N: int) -> Array:
        return rng.standard_normal((N, Q.shape[0])) @ L.T
    return sample


def propagate_batch(X: Array, Th: Array, J: Array, model: StateSpaceModel, cfg: AbnormalityConfig,
                    rng: np.random.Generator, process_sampler: Optional[ProcessSampler] = None,
                    k: int | None = None) -> tuple[Array, Array, Array]:
    """Draw ``(x, Theta, J)`` at step ``k`` for ``N`` particles at once."""
    N = X.shape[0]
    sampler = process_sampler or _gaussian_sampler(model.Q)
    Xn = model.transition_at(X, k) + sampler(rng, N)
    keep = J == 2
    fresh = cfg.c + (cfg.d - cfg.c) * rng.random(Th.shape)
    drift = Th + rng.standard_normal(Th.shape) * np.sqrt(cfg.Delta)
    Thn = np.where(keep, drift, fresh)
    cum = np.cumsum(cfg.transition, axis=1)[J]          # (N, m, 3)
    u = rng.random(J.shape)[..., None]
    Jn = np.minimum((u >= cum).sum(axis=-1), 2)
    return Xn, Thn, Jn


def propagate_particle(p: AugmentedParticle, model: StateSpaceModel, cfg: AbnormalityConfig,
                       rng=None, process_sampler: Optional[ProcessSampler] = None) -> AugmentedParticle:
    """Single-particle version of :func:`propagate_batch` (weight carried over)."""
    rng = make_rng(rng)
    X, Th, J = propagate_batch(np.asarray(p.x, float)[None], np.asarray(p.theta, float)[None],
                               np.asarray(p.regimes, int)[None], model, cfg, rng, process_sampler)
    return AugmentedParticle(X[0], Th[0], J[0], p.weight)


def particle_log_likelihood(p: AugmentedParticle, y: Array, model: StateSpaceModel,
                            cfg: AbnormalityConfig, k: int | None = None) -> float:
    """Dense log-density ``N(y | h(x) + I2 Theta, R + diag(I1) U + diag(I2) Upsilon)``."""
    J = np.asarray(p.regimes)
    mean = model.observe(p.x) + np.where(J == 2, p.theta, 0.0)
    cov = model.Rk(k) + np.diag(np.where(J == 1, cfg.U, 0.0) + np.where(J == 2, cfg.Upsilon, 0.0))
    try:
        return float(multivariate_normal(mean, cov).logpdf(np.asarray(y, float)))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise np.linalg.LinAlgError("effective covariance is not positive definite") from exc


def _batch_loglik(y: Array, Hx: Array, shift: Array, var: Array) -> Array:
    """Sum over dimensions of independent Gaussian log-densities."""
    if np.any(var <= 0):
        raise np.linalg.LinAlgError("effective covariance is not positive definite")
    r = y - Hx - shift
    with np.errstate(over="ignore"):   # overflow gives -inf, handled by the reset logic
        return -0.5 * np.sum(r * r / var + np.log(2.0 * np.pi * var), axis=-1)


class PfResult(NamedTuple):
    estimates: Array        # (K, n) weighted means before resampling
    ess: Array              # (K,)
    resets: int             # number of uniform weight resets after underflow
    theta_estimates: Optional[Array] = None


class ThetaPrior(NamedTuple):
    mean: Array
    cov: Array


def robust_pf_run(model: StateSpaceModel, ys: Array, prior_x: GaussianBelief,
                  cfg: Optional[AbnormalityConfig] = None, N: int = 1000, seed=None,
                  mode: str = "robust", prior_theta: Optional[ThetaPrior] = None,
                  prior_regimes: Optional[Array] = None,
                  process_sampler: Optional[ProcessSampler] = None,
                  ideal_shift: Optional[Array] = None, ideal_var: Optional[Array] = None
                  ) -> PfResult:
    """Sequential Monte Carlo over a measurement batch.

    Parameters
    ----------
    mode : {"robust", "bootstrap", "ideal"}
        ``bootstrap`` ignores abnormalities. ``ideal`` knows the abnormality
        schedule: ``ideal_shift[k]`` is added to the measurement mean and
        ``ideal_var[k]`` to the noise variance at step ``k`` (both ``(K, m)``).
    prior_regimes : (3,) array, optional
        Initial regime probabilities (default uniform).
    process_sampler : callable ``(rng, N) -> (N, n)``, optional
        Additive process-noise draws; Gaussian with ``model.Q`` by default.

    Returns
    -------
    PfResult
        Weighted-mean estimates and ESS per step, plus the reset counter.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    if mode not in ("robust", "bootstrap", "ideal"):
        raise ValueError(f"unknown mode {mode!r}")
    ys = np.atleast_2d(np.asarray(ys, float))
    if ys.shape[1] != model.m:
        ys = ys.reshape(-1, model.m)
    K, m = ys.shape
    if mode == "robust" and cfg is None:
        raise ValueError("robust mode needs an AbnormalityConfig")
    if mode == "ideal" and (ideal_shift is None or ideal_var is None):
        raise ValueError("ideal mode needs ideal_shift and ideal_var")
    rng = make_rng(seed)
    sampler = process_sampler or _gaussian_sampler(model.Q)

    X = prior_x.mean + rng.standard_normal((N, prior_x.n)) @ _noise_sqrt(prior_x.cov).T
    if mode == "robust":
        pt = prior_theta or ThetaPrior(np.zeros(m), 1e-3 * np.eye(m))
        Th = pt.mean + rng.standard_normal((N, m)) @ _noise_sqrt(pt.cov).T
        pj = np.full(3, 1.0 / 3.0) if prior_regimes is None else np.asarray(prior_regimes, float)
        J = rng.choice(3, size=(N, m), p=pj)
    est = np.empty((K, prior_x.n))
    th_est = np.empty((K, m)) if mode == "robust" else None
    ess = np.empty(K)
    resets = 0
    for k in range(K):
        Rd = np.diag(model.Rk(k + 1))
        if mode == "robust":
            X, Th, J = propagate_batch(X, Th, J, model, cfg, rng, sampler, k + 1)
            shift = np.where(J == 2, Th, 0.0)
            var = Rd + np.where(J == 1, cfg.U, 0.0) + np.where(J == 2, cfg.Upsilon, 0.0)
        else:
            X = model.transition_at(X, k + 1) + sampler(rng, N)
            if mode == "ideal":
                shift, var = ideal_shift[k], Rd + ideal_var[k]
            else:
                shift, var = 0.0, Rd
        logw = _batch_loglik(ys[k], model.h(X), shift, var)
        mx = np.max(logw) if logw.size else -np.inf
        if not np.isfinite(mx):
            resets += 1
            logger.warning("weight underflow at step %d; resetting to uniform", k + 1)
            w = np.full(N, 1.0 / N)
        else:
            w = np.exp(logw - mx)
            w /= w.sum()
        est[k] = w @ X
        ess[k] = 1.0 / np.sum(w * w)
        if th_est is not None:
            th_est[k] = w @ Th
        idx = systematic_resample(w, rng)
        X = X[idx]
        if mode == "robust":
            Th, J = Th[idx], J[idx]
    return PfResult(est, ess, resets, th_est)


def _noise_sqrt(C: Array) -> Array:
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    return V * np.sqrt(np.maximum(w, 0.0))
