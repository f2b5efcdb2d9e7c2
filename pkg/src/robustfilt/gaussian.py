"""Gaussian inference primitives shared by every filter in the package.

Unscented transform, general Gaussian filter (GGF) predict/update, EKF
predict/update, the RTS backward pass and systematic resampling.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.linalg import solve

from .core import GaussianBelief, StateSpaceModel, make_rng, symmetrize_psd

Array = np.ndarray


@dataclass(frozen=True)
class UtParams:
    """Unscented-transform scaling parameters.

    The defaults ``(alpha, beta, kappa) = (1, 2, 0)`` give ``lambda = 0``.
    """

    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = 0.0

    def lam(self, n: int) -> float:
        return self.alpha ** 2 * (n + self.kappa) - n

    def weights(self, n: int) -> tuple[Array, Array]:
        """Mean and covariance weights for ``2n + 1`` sigma points."""
        lam = self.lam(n)
        if n + lam <= 0:
            raise ValueError("n + lambda must be positive")
        wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
        wc = wm.copy()
        wm[0] = lam / (n + lam)
        wc[0] = lam / (n + lam) + 1.0 - self.alpha ** 2 + self.beta
        return wm, wc


DEFAULT_UT = UtParams()


class SigmaPointSet(NamedTuple):
    points: Array        # (2n+1, n)
    mean_weights: Array  # (2n+1,)
    cov_weights: Array   # (2n+1,)


def matrix_sqrt(P: Array) -> Array:
    """Lower Cholesky factor of the PSD-repaired ``P``.

    Semi-definite inputs (e.g. an exactly known state) fall back to the
    symmetric eigen square root, which is also a valid factor ``S S^T = P``.
    """
    P = symmetrize_psd(P)
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(P)
        return V * np.sqrt(np.maximum(w, 0.0))


def sigma_points(belief: GaussianBelief, params: UtParams = DEFAULT_UT) -> SigmaPointSet:
    n = belief.n
    wm, wc = params.weights(n)
    S = matrix_sqrt(belief.cov) * np.sqrt(n + params.lam(n))
    X = np.empty((2 * n + 1, n))
    X[0] = belief.mean
    X[1:n + 1] = belief.mean + S.T
    X[n + 1:] = belief.mean - S.T
    return SigmaPointSet(X, wm, wc)


def unscented_transform(belief: GaussianBelief, fmap, params: UtParams = DEFAULT_UT,
                        additive_cov: Optional[Array] = None) -> tuple[Array, Array, Array]:
    """Moment-match ``fmap(x)`` for ``x ~ belief``.

    Parameters
    ----------
    belief : GaussianBelief
    fmap : callable
        Batched map ``(N, n) -> (N, d)``.
    params : UtParams
    additive_cov : (d, d) ndarray, optional
        Added to the transformed covariance.

    Returns
    -------
    mean : (d,) ndarray
    cov : (d, d) ndarray
    crosscov : (n, d) ndarray
        ``Cov[x, fmap(x)]``.
    """
    sp = sigma_points(belief, params)
    Z = np.asarray(fmap(sp.points), dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    mean = sp.mean_weights @ Z
    dZ = Z - mean
    dX = sp.points - belief.mean
    cov = (dZ * sp.cov_weights[:, None]).T @ dZ
    cross = (dX * sp.cov_weights[:, None]).T @ dZ
    if additive_cov is not None:
        cov = cov + additive_cov
    return mean, 0.5 * (cov + cov.T), cross


def ggf_predict(belief: GaussianBelief, model: StateSpaceModel, params: UtParams = DEFAULT_UT,
                k: int | None = None) -> GaussianBelief:
    """Prediction step: UT moments of the transition plus ``Q``."""
    mean, cov, _ = unscented_transform(belief, lambda X: model.transition_at(X, k), params, model.Qk(k))
    return GaussianBelief(mean, symmetrize_psd(cov))


class UpdateDetails(NamedTuple):
    belief: GaussianBelief
    gain: Array
    mu: Array          # predicted measurement mean
    U: Array           # predicted measurement covariance without noise
    C: Array           # state-measurement cross covariance


def ggf_update_details(belief: GaussianBelief, y: Array, model: StateSpaceModel,
                       R_eff: Optional[Array] = None, offset: Optional[Array] = None,
                       params: UtParams = DEFAULT_UT, *, R_inv: Optional[Array] = None,
                       moments: Optional[tuple[Array, Array, Array]] = None) -> UpdateDetails:
    """GGF update returning the gain and measurement moments as well.

    When ``R_inv`` is given the gain uses the inverse-noise form
    ``K = C (R^-1 - R^-1 (I + U R^-1)^-1 U R^-1)``, which never forms a noise
    covariance with huge entries. ``moments`` may carry precomputed
    ``(mu, U, C)`` for the prior to avoid repeating the UT.
    """
    y = np.asarray(y, float)
    if moments is None:
        mu, U, C = unscented_transform(belief, model.h, params)
    else:
        mu, U, C = moments
    m = mu.shape[0]
    if R_inv is not None:
        Ri = np.asarray(R_inv, float)
        inner = solve(np.eye(m) + U @ Ri, U @ Ri)
        K = C @ (Ri - Ri @ inner)
    else:
        R_eff = model.R if R_eff is None else np.asarray(R_eff, float)
        S = U + R_eff
        try:
            K = solve(S.T, C.T, assume_a="sym").T
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("singular innovation covariance") from exc
    innov = y - mu if offset is None else y - np.asarray(offset, float) - mu
    mean = belief.mean + K @ innov
    cov = symmetrize_psd(belief.cov - C @ K.T)
    return UpdateDetails(GaussianBelief(mean, cov), K, mu, U, C)


def ggf_update(belief: GaussianBelief, y: Array, model: StateSpaceModel,
               R_eff: Optional[Array] = None, offset: Optional[Array] = None,
               params: UtParams = DEFAULT_UT, *, R_inv: Optional[Array] = None) -> GaussianBelief:
    """General Gaussian filter update with effective noise ``R_eff``.

    Gain ``K = C (U + R_eff)^-1`` with innovation ``y - offset - mu`` and
    covariance ``P - C K^T`` (PSD-repaired).
    """
    return ggf_update_details(belief, y, model, R_eff, offset, params, R_inv=R_inv).belief


def ekf_predict(belief: GaussianBelief, model: StateSpaceModel, k: int | None = None) -> GaussianBelief:
    if model.F_jac is None:
        raise ValueError("transition Jacobian unavailable")
    F = np.atleast_2d(model.F_jac(belief.mean))
    mean = model.transition_at(belief.mean[None, :], k)[0]
    return GaussianBelief(mean, symmetrize_psd(F @ belief.cov @ F.T + model.Qk(k)))


def ekf_update(belief: GaussianBelief, y: Array, model: StateSpaceModel,
               R_eff: Optional[Array] = None) -> GaussianBelief:
    """EKF update linearizing ``h`` at the prior mean."""
    if model.H_jac is None:
        raise ValueError("observation Jacobian unavailable")
    H = np.atleast_2d(model.H_jac(belief.mean))
    R = model.R if R_eff is None else R_eff
    P = belief.cov
    S = H @ P @ H.T + R
    K = solve(S.T, (P @ H.T).T, assume_a="sym").T
    mean = belief.mean + K @ (np.asarray(y, float) - model.observe(belief.mean))
    return GaussianBelief(mean, symmetrize_psd(P - K @ S @ K.T))


def rts_backward(filtered: Sequence[GaussianBelief], predicted: Sequence[GaussianBelief],
                 model: StateSpaceModel, params: UtParams = DEFAULT_UT,
                 first_step: Optional[int] = None) -> list[GaussianBelief]:
    """Unscented RTS backward pass.

    Parameters
    ----------
    filtered : sequence of GaussianBelief, length K
        Filtered beliefs ``(x+_k, P+_k)``.
    predicted : sequence of GaussianBelief, length K-1 (a trailing K-th entry is ignored)
        ``predicted[k]`` is the one-step prediction made from ``filtered[k]``.
    model : StateSpaceModel
    params : UtParams
    first_step : int, optional
        Time index of ``filtered[0]``; needed only for time-varying transitions.

    Returns
    -------
    list of GaussianBelief
        Smoothed beliefs; the last equals the last filtered belief.
    """
    K = len(filtered)
    if len(predicted) < K - 1:
        raise ValueError("predicted sequence too short")
    out: list[GaussianBelief] = [None] * K  # type: ignore[list-item]
    out[-1] = filtered[-1]
    for k in range(K - 2, -1, -1):
        fk, pk = filtered[k], predicted[k]
        step = None if first_step is None else first_step + k + 1
        _, _, L = unscented_transform(fk, lambda X: model.transition_at(X, step), params)
        G = solve(pk.cov.T, L.T, assume_a="sym").T
        mean = fk.mean + G @ (out[k + 1].mean - pk.mean)
        cov = fk.cov + G @ (out[k + 1].cov - pk.cov) @ G.T
        out[k] = GaussianBelief(mean, symmetrize_psd(cov))
    return out


def normalize_log_weights(logw: Array) -> Array:
    """Normalize log-weights to the simplex with the max-shift trick."""
    logw = np.asarray(logw, float)
    mx = np.max(logw)
    if not np.isfinite(mx):
        raise FloatingPointError("all log-weights are -inf")
    w = np.exp(logw - mx)
    return w / w.sum()


def systematic_resample(weights: Array, seed=None) -> Array:
    """Systematic resampling.

    Parameters
    ----------
    weights : (N,) array_like
        Nonnegative weights summing to one (renormalized if off by <= 1e-9).
    seed : int or numpy Generator

    Returns
    -------
    (N,) int ndarray
        Indices; index ``i`` appears ``floor(N w_i)`` or ``floor(N w_i) + 1`` times.
    """
    w = np.asarray(weights, float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("all-zero weights")
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"weights sum to {total}, not 1")
    w = w / total
    N = w.shape[0]
    rng = make_rng(seed)
    u = (rng.random() + np.arange(N)) / N
    c = np.cumsum(w)
    c[-1] = 1.0
    idx = np.searchsorted(c, u, side="right")
    return np.minimum(idx, N - 1)


def ukf_run(model: StateSpaceModel, ys: Array, prior: GaussianBelief,
            params: UtParams = DEFAULT_UT, R_seq: Optional[Sequence[Array]] = None
            ) -> tuple[list[GaussianBelief], list[GaussianBelief]]:
    """Plain unscented Kalman filter over a measurement batch.

    Parameters
    ----------
    R_seq : sequence of (m, m) arrays, optional
        Per-step measurement covariance (e.g. a hard-rejection oracle).

    Returns
    -------
    filtered : list of GaussianBelief, length K
    predicted : list of GaussianBelief, length K
        ``predicted[k]`` is the prior used at step ``k``.
    """
    belief = prior
    filtered, predicted = [], []
    for k, y in enumerate(np.asarray(ys, float)):
        pred = ggf_predict(belief, model, params, k + 1)
        R = model.Rk(k + 1) if R_seq is None else R_seq[k]
        belief = ggf_update(pred, y, model, R, None, params)
        predicted.append(pred)
        filtered.append(belief)
    return filtered, predicted
