"""Selective-observations-rejecting (SOR) filter for independent measurements.

Each measurement dimension ``i`` carries a Bernoulli indicator that is
either 1 (nominal) or a small ``epsilon`` (outlier). Variational Bayes
alternates a Gaussian state update, whose noise is ``R_ii / <I_i>``, with a
closed-form update of the indicator posterior ``Omega_i = Pr(I_i = 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import expit

from .core import GaussianBelief, StateSpaceModel
from .gaussian import (DEFAULT_UT, UtParams, ggf_predict, ggf_update_details,
                       unscented_transform)

Array = np.ndarray
_OMEGA_FLOOR = 1e-300


@dataclass(frozen=True)
class SorConfig:
    """SOR settings.

    Attributes
    ----------
    epsilon : float
        Indicator value for an outlier, in (0, 1).
    theta : float or (m,) array
        Prior probability that a dimension is *not* an outlier, in (0, 1).
    conv_tol : float
        Relative L2 change in the state mean ending the VB loop.
    max_iters : int
    """

    epsilon: float = 1e-6
    theta: float | Array = 0.5
    conv_tol: float = 1e-4
    max_iters: int = 50

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        th = np.asarray(self.theta, float)
        if np.any(th <= 0.0) or np.any(th >= 1.0):
            raise ValueError("theta must lie strictly between 0 and 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


class SorDiagnostics(NamedTuple):
    omega: Array
    iterations: int
    converged: bool
    gain: Array


def _diag_or_raise(R: Array) -> Array:
    R = np.asarray(R, float)
    off = R - np.diag(np.diag(R))
    if np.any(off != 0.0):
        raise ValueError("SOR requires a diagonal R; use the EMORF filter for correlated noise")
    return np.diag(R).copy()


def sor_w_stat(posterior: GaussianBelief, y: Array, model: StateSpaceModel,
               params: UtParams = DEFAULT_UT) -> Array:
    """Expected squared residual ``W_i = <(y_i - h_i(x))^2>`` under ``posterior``."""
    mu, U, _ = unscented_transform(posterior, model.h, params)
    return (np.asarray(y, float) - mu) ** 2 + np.maximum(np.diag(U), 0.0)


def sor_omega(W: Array, R_diag: Array, cfg: SorConfig = SorConfig()) -> Array:
    """Posterior no-outlier probabilities.

    ``Omega_i = 1 / (1 + sqrt(eps) (1/theta_i - 1) exp(W_i (1 - eps) / (2 R_ii)))``,
    evaluated as a logistic of the log-odds.
    """
    W = np.asarray(W, float)
    R_diag = np.asarray(R_diag, float)
    if np.any(R_diag <= 0):
        raise ValueError("R diagonal must be positive")
    th = np.asarray(cfg.theta, float)
    a = 0.5 * np.log(cfg.epsilon) + np.log(1.0 / th - 1.0) + W * (1.0 - cfg.epsilon) / (2.0 * R_diag)
    return np.clip(expit(-a), _OMEGA_FLOOR, 1.0)


def sor_step(belief: GaussianBelief, y: Array, model: StateSpaceModel,
             cfg: SorConfig = SorConfig(), params: UtParams = DEFAULT_UT,
             k: int | None = None) -> tuple[GaussianBelief, SorDiagnostics]:
    """One SOR measurement update from the predicted ``belief``.

    The VB loop starts from the all-inlier noise ``V = R`` and repeats
    state update, ``W``, ``Omega`` and ``V = R / <I>`` until the relative
    state change drops below ``cfg.conv_tol``.
    """
    Rd = _diag_or_raise(model.Rk(k))
    y = np.asarray(y, float)
    moments = unscented_transform(belief, model.h, params)
    ibar = np.ones(model.m)
    x_prev = belief.mean
    converged = False
    omega = np.ones(model.m)
    post = belief
    gain = None
    it = 0
    for it in range(1, cfg.max_iters + 1):
        det = ggf_update_details(belief, y, model, np.diag(Rd / ibar), None, params, moments=moments)
        post, gain = det.belief, det.gain
        W = sor_w_stat(post, y, model, params)
        omega = sor_omega(W, Rd, cfg)
        ibar = omega + (1.0 - omega) * cfg.epsilon
        change = np.linalg.norm(post.mean - x_prev) / max(np.linalg.norm(x_prev), 1e-300)
        x_prev = post.mean
        if change < cfg.conv_tol:
            converged = True
            break
    return post, SorDiagnostics(omega, it, converged, gain)


def sor_run(model: StateSpaceModel, ys: Array, prior: GaussianBelief,
            cfg: SorConfig = SorConfig(), params: UtParams = DEFAULT_UT
            ) -> tuple[list[GaussianBelief], list[SorDiagnostics]]:
    """Run the SOR filter over ``K`` measurements."""
    belief = prior
    beliefs, diags = [], []
    for k, y in enumerate(np.asarray(ys, float), start=1):
        belief = ggf_predict(belief, model, params, k)
        belief, d = sor_step(belief, y, model, cfg, params, k)
        beliefs.append(belief)
        diags.append(d)
    return beliefs, diags
