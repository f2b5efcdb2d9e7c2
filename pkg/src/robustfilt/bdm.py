"""Bias-detecting-and-mitigating (BDM) filter.

Measurements follow ``y = h(x) + r + I * Theta`` with per-dimension Bernoulli
bias occurrence ``I`` and bias magnitudes ``Theta`` that persist (with drift)
while present and are redrawn from a broad prior otherwise. Variational
Bayes approximates the posterior by ``q(x) q(I) q(Theta)``:

* ``q(x)``: Gaussian update with the innovation offset by ``Omega Theta``;
* ``q(I)``: independent Bernoulli with mean ``Omega``;
* ``q(Theta)``: Gaussian.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import expit

from .core import GaussianBelief, StateSpaceModel, symmetrize_psd
from .gaussian import DEFAULT_UT, UtParams, ggf_predict, ggf_update_details, unscented_transform

Array = np.ndarray
_LO = 1e-300
_HI = float(np.nextafter(1.0, 0.0))


class BiasBelief(NamedTuple):
    theta_hat: Array
    sigma: Array


@dataclass(frozen=True)
class BdmConfig:
    """BDM settings.

    ``sigma_tilde`` (fresh-bias covariance) and ``sigma_breve`` (drift
    covariance) default to ``1000 R`` and ``0.1 R`` when left as ``None``.
    Both must be diagonal.
    """

    sigma_tilde: Optional[Array] = None
    sigma_breve: Optional[Array] = None
    theta_prior: float = 0.5
    conv_tol: float = 1e-4
    max_iters: int = 50

    def __post_init__(self):
        if not 0.0 < self.theta_prior < 1.0:
            raise ValueError("theta_prior must lie in (0, 1)")
        for name in ("sigma_tilde", "sigma_breve"):
            S = getattr(self, name)
            if S is not None:
                S = np.atleast_2d(np.asarray(S, float))
                if np.any(S - np.diag(np.diag(S))) or np.any(np.diag(S) < 0):
                    raise ValueError(f"{name} must be diagonal with nonnegative entries")
                object.__setattr__(self, name, S)

    def resolved(self, R: Array) -> tuple[Array, Array]:
        st = 1000.0 * R if self.sigma_tilde is None else self.sigma_tilde
        sb = 0.1 * R if self.sigma_breve is None else self.sigma_breve
        return st, sb


def bdm_predict_bias(prev: BiasBelief, omega_prev: Array, sigma_tilde: Array,
                     sigma_breve: Array) -> BiasBelief:
    """Moment-matched Gaussian prediction of the bias vector.

    ``Theta- = Omega Theta+`` and
    ``Sigma- = (I - Omega) S~ + Omega S^ + Sigma+ o (w w^T + Omega (I - Omega))
    + Omega (I - Omega) diag(Theta+)^2``.
    """
    w = np.asarray(omega_prev, float)
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("omega entries must lie in [0, 1]")
    th = np.asarray(prev.theta_hat, float)
    Om = np.diag(w)
    J = np.diag(w * (1.0 - w))
    sigma = ((np.eye(w.size) - Om) @ sigma_tilde + Om @ sigma_breve
             + prev.sigma * (np.outer(w, w) + J) + J @ np.diag(th ** 2))
    return BiasBelief(w * th, symmetrize_psd(sigma))


def bdm_omega(y: Array, nu: Array, hbar2: Array, theta_hat: Array, theta_bar2: Array,
              R_diag: Array, theta_prior: float) -> Array:
    """Posterior bias-occurrence probabilities from the two hypothesis exponents."""
    y, nu = np.asarray(y, float), np.asarray(nu, float)
    log_p1 = np.log(theta_prior) - 0.5 * (hbar2 + theta_bar2 + (nu + theta_hat - y) ** 2) / R_diag
    log_p0 = np.log1p(-theta_prior) - 0.5 * ((y - nu) ** 2 + hbar2) / R_diag
    return np.clip(expit(log_p1 - log_p0), _LO, _HI)


def _bias_block(bias_pred: BiasBelief, omega: Array, y: Array, nu: Array, R: Array,
                R_diag: Array) -> BiasBelief:
    """Gaussian update of ``q(Theta)`` for fixed ``Omega`` and ``nu``."""
    Sm = bias_pred.sigma
    Om = np.diag(omega)
    Ccal = Sm @ Om
    Scal = Om @ Sm @ Om + R
    Kcal = np.linalg.solve(Scal.T, Ccal.T).T
    th_star = bias_pred.theta_hat + Kcal @ (y - (nu + omega * bias_pred.theta_hat))
    S_star = symmetrize_psd(Sm - Ccal @ Kcal.T)
    D = np.diag(omega * (1.0 - omega) / R_diag)
    I = np.eye(omega.size)
    # (D + S*^-1)^-1 = S* (I + D S*)^-1 and Sigma+ S*^-1 Theta* = (I + S* D)^-1 Theta*
    sig_plus = np.linalg.solve((I + D @ S_star).T, S_star.T).T
    th_plus = np.linalg.solve(I + S_star @ D, th_star)
    return BiasBelief(th_plus, symmetrize_psd(sig_plus))


class BdmDiagnostics(NamedTuple):
    iterations: int
    converged: bool


def bdm_vb_iterate(belief: GaussianBelief, bias_pred: BiasBelief, y: Array, model: StateSpaceModel,
                   cfg: BdmConfig = BdmConfig(), params: UtParams = DEFAULT_UT,
                   k: int | None = None, omega_override: Optional[Array] = None,
                   bias_init: Optional[BiasBelief] = None
                   ) -> tuple[GaussianBelief, BiasBelief, Array, BdmDiagnostics]:
    """Variational update of ``(x, Omega, Theta)`` for one measurement.

    Blocks are visited in the order x, Omega, Theta. ``Omega`` starts at the
    prior occurrence probability and ``q(Theta)`` at ``bias_init`` (default:
    the bias prediction). :func:`bdm_run` starts from the predicted bias mean
    with the previous posterior covariance. ``omega_override`` pins ``Omega``
    (and skips its update).
    """
    R = model.Rk(k)
    R_diag = np.diag(R).copy()
    if np.any(R - np.diag(R_diag)):
        raise ValueError("BDM requires a diagonal R")
    y = np.asarray(y, float)
    moments = unscented_transform(belief, model.h, params)
    if omega_override is not None:
        omega = np.broadcast_to(np.asarray(omega_override, float), (model.m,)).copy()
    else:
        omega = np.full(model.m, cfg.theta_prior)
    bias = bias_pred if bias_init is None else bias_init
    x_prev = belief.mean
    post = belief
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        post = ggf_update_details(belief, y, model, R, omega * bias.theta_hat, params,
                                  moments=moments).belief
        nu, Hc, _ = unscented_transform(post, model.h, params)
        hbar2 = np.maximum(np.diag(Hc), 0.0)
        if omega_override is None:
            omega = bdm_omega(y, nu, hbar2, bias.theta_hat, np.diag(bias.sigma), R_diag,
                              cfg.theta_prior)
        bias = _bias_block(bias_pred, omega, y, nu, R, R_diag)
        change = np.linalg.norm(post.mean - x_prev) / max(np.linalg.norm(x_prev), 1e-300)
        x_prev = post.mean
        if change < cfg.conv_tol:
            converged = True
            break
    return post, bias, omega, BdmDiagnostics(it, converged)


def bdm_run(model: StateSpaceModel, ys: Array, prior: GaussianBelief, bias_prior: BiasBelief,
            cfg: BdmConfig = BdmConfig(), params: UtParams = DEFAULT_UT,
            omega0: Optional[Array] = None, omega_override: Optional[Array] = None
            ) -> tuple[list[GaussianBelief], list[BiasBelief], Array]:
    """Run the BDM filter over ``K`` measurements.

    ``omega0`` is the bias-occurrence probability attached to the bias prior
    (default zero: no bias before the first measurement).
    """
    st, sb = cfg.resolved(model.R)
    omega = np.zeros(model.m) if omega0 is None else np.asarray(omega0, float)
    belief, bias = prior, BiasBelief(np.asarray(bias_prior.theta_hat, float),
                                     np.asarray(bias_prior.sigma, float))
    beliefs, biases, omegas = [], [], []
    for k, y in enumerate(np.asarray(ys, float), start=1):
        belief = ggf_predict(belief, model, params, k)
        bias_pred = bdm_predict_bias(bias, omega, st, sb)
        start = BiasBelief(bias_pred.theta_hat, bias.sigma)
        belief, bias, omega, _ = bdm_vb_iterate(belief, bias_pred, y, model, cfg, params, k,
                                                omega_override, start)
        beliefs.append(belief)
        biases.append(bias)
        omegas.append(omega)
    return beliefs, biases, np.asarray(omegas)
