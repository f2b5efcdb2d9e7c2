"""EM-based outlier-robust filter (EMORF) and smoother (EMORS).

Handles fully populated measurement covariances. An indicator value of
``epsilon`` in dimension ``i`` inflates the variance of that dimension to
``R_ii / epsilon`` and removes its correlation with every other dimension.
The E-step is a Gaussian update with the structured covariance; the M-step
sets each indicator by the sign of a log-odds statistic ``tau``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import GaussianBelief, StateSpaceModel
from .gaussian import (DEFAULT_UT, UtParams, ggf_predict, ggf_update_details, rts_backward,
                       unscented_transform)

Array = np.ndarray


@dataclass(frozen=True)
class EmorfConfig:
    theta: float = 0.5
    epsilon: float = 1e-6
    conv_tol: float = 1e-4
    max_iters: int = 50

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")


class IndicatorVector(NamedTuple):
    """Indicator values in ``{epsilon, 1}`` with the epsilon in force."""

    values: Array
    epsilon: float

    @classmethod
    def from_mask(cls, inlier: Array, epsilon: float) -> "IndicatorVector":
        inlier = np.asarray(inlier, bool)
        return cls(np.where(inlier, 1.0, epsilon), epsilon)

    @property
    def inliers(self) -> Array:
        return self.values == 1.0

    def validate(self) -> None:
        v = np.asarray(self.values)
        if not np.all((v == 1.0) | (v == self.epsilon)):
            raise ValueError("indicator entries must equal 1 or epsilon")


def _inlier_mask(indicator) -> Array:
    if isinstance(indicator, IndicatorVector):
        return indicator.inliers
    return np.asarray(indicator, float) == 1.0


def structured_cov(R: Array, indicator, epsilon: float) -> Array:
    """Dense ``R(I)``: diagonal ``R_ii / I_i``, couplings kept only between inliers."""
    R = np.asarray(R, float)
    inl = _inlier_mask(indicator)
    vals = np.where(inl, 1.0, epsilon)
    out = np.where(np.outer(inl, inl), R, 0.0)
    np.fill_diagonal(out, np.diag(R) / vals)
    return out


def r_inv_structured(R: Array, indicator, epsilon: float | None = None) -> Array:
    """Inverse of ``R(I)`` without forming entries of size ``1/epsilon``.

    Outlier diagonals get ``epsilon / R_ii``; the inlier block is inverted densely.
    """
    R = np.asarray(R, float)
    if isinstance(indicator, IndicatorVector):
        epsilon = indicator.epsilon
    if epsilon is None:
        raise ValueError("epsilon required")
    inl = _inlier_mask(indicator)
    out = np.zeros_like(R)
    out_idx = np.flatnonzero(~inl)
    out[out_idx, out_idx] = epsilon / np.diag(R)[out_idx]
    idx = np.flatnonzero(inl)
    if idx.size:
        try:
            out[np.ix_(idx, idx)] = np.linalg.inv(R[np.ix_(idx, idx)])
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("singular inlier block") from exc
    return out


class _Schur(NamedTuple):
    others: Array     # inlier indices other than i
    Rhat_inv_b: Array  # R_hat^{-1} R(-i, i)
    schur: float      # R_ii - R(i,-i) R_hat^{-1} R(-i,i)


def _schur_parts(R: Array, indicator, i: int) -> _Schur:
    inl = _inlier_mask(indicator).copy()
    inl[i] = False
    others = np.flatnonzero(inl)
    if others.size == 0:
        return _Schur(others, np.zeros(0), float(R[i, i]))
    b = R[others, i]
    try:
        Rb = np.linalg.solve(R[np.ix_(others, others)], b)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular R_hat(-i,-i)") from exc
    return _Schur(others, Rb, float(R[i, i] - b @ Rb))


def delta_r_inv(R: Array, indicator, i: int, epsilon: float | None = None) -> Array:
    """``R^-1(I_i = 1, I_-i) - R^-1(I_i = eps, I_-i)`` from Schur-complement blocks.

    ``indicator[i]`` is ignored; the other entries fix ``I_-i``.
    """
    R = np.asarray(R, float)
    if isinstance(indicator, IndicatorVector):
        epsilon = indicator.epsilon
    if epsilon is None:
        raise ValueError("epsilon required")
    sp = _schur_parts(R, indicator, i)
    m = R.shape[0]
    out = np.zeros((m, m))
    out[i, i] = 1.0 / sp.schur - epsilon / R[i, i]
    if sp.others.size:
        row = -sp.Rhat_inv_b / sp.schur
        out[i, sp.others] = row
        out[sp.others, i] = row
        out[np.ix_(sp.others, sp.others)] = np.outer(sp.Rhat_inv_b, sp.Rhat_inv_b) / sp.schur
    return out


def log_det_ratio(R: Array, indicator, i: int, epsilon: float) -> float:
    """``log |R(I_i=1, I_-i)| - log |R(I_i=eps, I_-i)|`` via the scalar Schur form."""
    R = np.asarray(R, float)
    sp = _schur_parts(R, indicator, i)
    return float(np.log(sp.schur / R[i, i]) + np.log(epsilon))


def tau_indicator(W: Array, R: Array, indicator, i: int, theta: float, epsilon: float
                  ) -> tuple[float, float]:
    """Log-odds statistic for dimension ``i`` and the resulting indicator value.

    ``tau = tr(W dR^-1) + log(1 - R(i,-i) R_hat^-1 R(-i,i) / R_ii) + ln eps + 2 ln(1/theta - 1)``;
    the dimension is kept (value 1) iff ``tau <= 0``.
    """
    W = np.asarray(W, float)
    dR = delta_r_inv(R, indicator, i, epsilon)
    tau = float(np.sum(W * dR)) + log_det_ratio(R, indicator, i, epsilon) \
        + 2.0 * np.log(1.0 / theta - 1.0)
    return tau, (1.0 if tau <= 0.0 else epsilon)


def expected_residual_outer(belief: GaussianBelief, y: Array, model: StateSpaceModel,
                            params: UtParams = DEFAULT_UT) -> Array:
    """``<(y - h(x))(y - h(x))^T>`` under ``belief`` via the UT."""
    mu, U, _ = unscented_transform(belief, model.h, params)
    d = np.asarray(y, float) - mu
    return np.outer(d, d) + U


def m_step(W: Array, R: Array, values: Array, cfg: EmorfConfig) -> Array:
    """Sequential sweep ``i = 0..m-1`` updating indicators with the latest values."""
    vals = np.asarray(values, float).copy()
    for i in range(vals.shape[0]):
        _, vals[i] = tau_indicator(W, R, vals, i, cfg.theta, cfg.epsilon)
    return vals


class EmorfDiagnostics(NamedTuple):
    iterations: int
    converged: bool
    sweep_order: tuple


def emorf_update_fixed(belief: GaussianBelief, y: Array, model: StateSpaceModel,
                       indicator, epsilon: float, params: UtParams = DEFAULT_UT,
                       k: int | None = None, moments=None) -> GaussianBelief:
    """E-step only: Gaussian update with the structured noise for a fixed indicator."""
    Ri = r_inv_structured(model.Rk(k), indicator, epsilon)
    return ggf_update_details(belief, y, model, None, None, params, R_inv=Ri, moments=moments).belief


def emorf_step(belief: GaussianBelief, y: Array, model: StateSpaceModel,
               cfg: EmorfConfig = EmorfConfig(), params: UtParams = DEFAULT_UT,
               k: int | None = None) -> tuple[GaussianBelief, IndicatorVector, EmorfDiagnostics]:
    """One EMORF measurement update from the predicted ``belief``."""
    R = model.Rk(k)
    y = np.asarray(y, float)
    moments = unscented_transform(belief, model.h, params)
    vals = np.ones(model.m)
    x_prev = belief.mean
    converged = False
    post = belief
    it = 0
    for it in range(1, cfg.max_iters + 1):
        post = emorf_update_fixed(belief, y, model, vals, cfg.epsilon, params, k, moments)
        change = np.linalg.norm(post.mean - x_prev) / max(np.linalg.norm(x_prev), 1e-300)
        x_prev = post.mean
        if change < cfg.conv_tol:
            converged = True
            break
        vals = m_step(expected_residual_outer(post, y, model, params), R, vals, cfg)
    diag = EmorfDiagnostics(it, converged, tuple(range(model.m)))
    return post, IndicatorVector(vals, cfg.epsilon), diag


def emorf_run(model: StateSpaceModel, ys: Array, prior: GaussianBelief,
              cfg: EmorfConfig = EmorfConfig(), params: UtParams = DEFAULT_UT
              ) -> tuple[list[GaussianBelief], Array]:
    belief = prior
    beliefs, inds = [], []
    for k, y in enumerate(np.asarray(ys, float), start=1):
        belief = ggf_predict(belief, model, params, k)
        belief, ind, _ = emorf_step(belief, y, model, cfg, params, k)
        beliefs.append(belief)
        inds.append(ind.values)
    return beliefs, np.asarray(inds)


def emors_run(model: StateSpaceModel, ys: Array, prior: GaussianBelief,
              cfg: EmorfConfig = EmorfConfig(), params: UtParams = DEFAULT_UT
              ) -> tuple[list[GaussianBelief], Array, EmorfDiagnostics]:
    """EM smoother over a full batch.

    Repeats a forward filter with the current indicators, an RTS backward
    pass and an indicator sweep per step from the smoothed marginals, until
    the relative change of the stacked smoothed means drops below tolerance.
    """
    ys = np.asarray(ys, float)
    K = ys.shape[0]
    vals = np.ones((K, model.m))
    prev = None
    smoothed: list[GaussianBelief] = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        belief = prior
        filtered, predicted = [], []
        for k in range(K):
            pred = ggf_predict(belief, model, params, k + 1)
            belief = emorf_update_fixed(pred, ys[k], model, vals[k], cfg.epsilon, params, k + 1)
            predicted.append(pred)
            filtered.append(belief)
        smoothed = rts_backward(filtered, predicted[1:], model, params, first_step=1)
        cur = np.concatenate([b.mean for b in smoothed])
        if prev is None:
            prev = np.concatenate([p.mean for p in predicted])
        change = np.linalg.norm(cur - prev) / max(np.linalg.norm(prev), 1e-300)
        prev = cur
        if change < cfg.conv_tol:
            converged = True
            break
        for k in range(K):
            W = expected_residual_outer(smoothed[k], ys[k], model, params)
            vals[k] = m_step(W, model.Rk(k + 1), vals[k], cfg)
    return smoothed, vals, EmorfDiagnostics(it, converged, tuple(range(model.m)))
