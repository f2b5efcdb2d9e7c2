"""Bayesian Cramér-Rao bounds for filtering and smoothing.

The filtering recursion works in information form

    J-_k = D22(1) - D21 (J+_{k-1} + D11)^-1 D12,
    J+_k = J-_k + D22(2),

with ``D11 = <F^T Q^-1 F>``, ``D12 = -<F^T> Q^-1``, ``D22(1) = Q^-1`` and the
measurement term ``D22(2)``. Expectations over the state are replaced by
averages over simulated trajectories. For a perfect rejector ``D22(2)``
uses the inverse noise covariance with rejected rows and columns zeroed.
For randomly biased measurements ``D22(2)`` is estimated by Monte Carlo
from the mixture likelihood.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import StateSpaceModel, make_rng, symmetrize_psd

Array = np.ndarray
logger = logging.getLogger(__name__)


class FisherTerms(NamedTuple):
    D11: Array
    D12: Array
    D22_1: Array
    D22_2: Array

    @property
    def D21(self) -> Array:
        return self.D12.T


def hard_rejection_r_inv(R: Array, keep: Optional[Array]) -> Array:
    """``R^-1`` restricted to kept dimensions, zeros in rejected rows and columns."""
    R = np.asarray(R, float)
    if keep is None:
        return np.linalg.inv(R)
    keep = np.asarray(keep, bool)
    out = np.zeros_like(R)
    idx = np.flatnonzero(keep)
    if idx.size:
        out[np.ix_(idx, idx)] = np.linalg.inv(R[np.ix_(idx, idx)])
    return out


def _batched_jac(jac, X: Array) -> Array:
    return np.stack([np.atleast_2d(jac(x)) for x in X])


def fisher_terms(model: StateSpaceModel, x_prev: Array, x_cur: Array, keep: Optional[Array] = None,
                 k: int | None = None) -> FisherTerms:
    """Sample-averaged Fisher blocks for the step ``x_prev -> x_cur``.

    Parameters
    ----------
    x_prev, x_cur : (Ns, n) arrays
        State samples at steps ``k-1`` and ``k``.
    keep : (m,) bool array, optional
        Perfect-rejector mask; ``None`` keeps every dimension.
    """
    if model.F_jac is None or model.H_jac is None:
        raise ValueError("Jacobians are required")
    Qi = np.linalg.inv(model.Qk(k))
    F = _batched_jac(model.F_jac, np.atleast_2d(x_prev))
    H = _batched_jac(model.H_jac, np.atleast_2d(x_cur))
    Ri = hard_rejection_r_inv(model.Rk(k), keep)
    D11 = np.mean(np.einsum("sij,jk,skl->sil", F.transpose(0, 2, 1), Qi, F), axis=0)
    D12 = -F.mean(axis=0).T @ Qi
    D22_2 = np.mean(np.einsum("sji,jk,skl->sil", H, Ri, H), axis=0)
    return FisherTerms(symmetrize_psd(D11), D12, Qi, symmetrize_psd(D22_2))


class FilterBound(NamedTuple):
    J_plus: list
    J_minus: list
    bcrb: list
    terms: list


def bcrb_filter(model: StateSpaceModel, x_samples: Array, J0: Array,
                keep_schedule: Optional[Array] = None,
                d22_2: Optional[Sequence[Array]] = None) -> FilterBound:
    """Filtering BCRB over ``K`` steps.

    Parameters
    ----------
    x_samples : (K+1, Ns, n) array
        State samples; index 0 holds samples of the initial state.
    J0 : (n, n) array
        Prior information of the initial state.
    keep_schedule : (K, m) bool array, optional
        Perfect-rejector masks per step.
    d22_2 : sequence of (n, n) arrays, optional
        Replacement measurement-information terms (e.g. from
        :func:`mc_fisher_bias_terms`).
    """
    xs = np.asarray(x_samples, float)
    K = xs.shape[0] - 1
    J = np.asarray(J0, float)
    Jp, Jm, B, terms = [], [], [], []
    for k in range(1, K + 1):
        keep = None if keep_schedule is None else keep_schedule[k - 1]
        t = fisher_terms(model, xs[k - 1], xs[k], keep, k)
        if d22_2 is not None:
            t = t._replace(D22_2=np.asarray(d22_2[k - 1], float))
        try:
            J_minus = t.D22_1 - t.D21 @ np.linalg.solve(J + t.D11, t.D12)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"singular information matrix at step {k}") from exc
        J_minus = symmetrize_psd(J_minus)
        J = symmetrize_psd(J_minus + t.D22_2)
        Jm.append(J_minus)
        Jp.append(J)
        B.append(symmetrize_psd(np.linalg.inv(J)))
        terms.append(t)
    return FilterBound(Jp, Jm, B, terms)


def bcrb_smoother(bound: FilterBound) -> tuple[list, list]:
    """Smoothing information and BCRB from a filtering pass.

    ``Js_k = J+_k + D11 - D12 (D22(1) + Js_{k+1} - J-_{k+1})^-1 D21`` with
    ``Js_K = J+_K``; the ``D`` blocks are those of the transition ``k -> k+1``.
    """
    K = len(bound.J_plus)
    Js = [None] * K
    Js[-1] = bound.J_plus[-1]
    for k in range(K - 2, -1, -1):
        t = bound.terms[k + 1]
        inner = t.D22_1 + Js[k + 1] - bound.J_minus[k + 1]
        try:
            corr = t.D12 @ np.linalg.solve(inner, t.D21)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"singular smoother inner matrix at step {k + 1}") from exc
        Js[k] = symmetrize_psd(bound.J_plus[k] + t.D11 - corr)
    return Js, [symmetrize_psd(np.linalg.inv(J)) for J in Js]


def mc_fisher_mixture(model: StateSpaceModel, x_next: Array, y_next: Array, offsets: Array,
                      covs: Array) -> tuple[Array, Array]:
    """Monte-Carlo Fisher information of a Gaussian-mixture likelihood.

    For each sample ``j`` the likelihood is ``(1/I) sum_i N(y_j | h(x_j) + offsets[j, i], covs[i])``
    and the score is ``sum_i softmax(phi)_i H^T covs[i]^-1 (y_j - h(x_j) - offsets[j, i])``.

    Parameters
    ----------
    x_next : (J, n), y_next : (J, m)
    offsets : (J, I, m) or (I, m)
    covs : (I, m, m)

    Returns
    -------
    estimate : (n, n) PSD matrix (mean of score outer products)
    stderr : (n, n) elementwise standard error
    """
    X = np.atleast_2d(x_next)
    Y = np.atleast_2d(y_next)
    Jn = X.shape[0]
    offsets = np.asarray(offsets, float)
    if offsets.ndim == 2:
        offsets = np.broadcast_to(offsets, (Jn,) + offsets.shape)
    covs = np.asarray(covs, float)
    if Jn < 2 or offsets.shape[1] < 1:
        raise ValueError("need at least two outer samples and one mixture component")
    Ci = np.linalg.inv(covs)
    _, logdet = np.linalg.slogdet(covs)
    H = _batched_jac(model.H_jac, X)
    resid = Y[:, None, :] - model.h(X)[:, None, :] - offsets          # (J, I, m)
    wr = np.einsum("ikl,jil->jik", Ci, resid)                       # C_i^-1 r
    phi = -0.5 * (np.sum(resid * wr, axis=-1) + logdet[None, :])      # (J, I)
    p = np.exp(phi - logsumexp(phi, axis=1, keepdims=True))
    g = np.einsum("jmn,jm->jn", H, np.einsum("ji,jim->jm", p, wr))    # (J, n)
    outer = g[:, :, None] * g[:, None, :]
    est = symmetrize_psd(outer.mean(axis=0))
    se = outer.std(axis=0, ddof=1) / np.sqrt(Jn)
    return est, se


@dataclass(frozen=True)
class RandomBiasConfig:
    """Per-dimension random bias: present w.p. ``lam``, ``o ~ U(0, xi)``, drift variance ``sigma_o``."""

    lam: float
    xi: float = 90.0
    sigma_o: float = 0.4

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.xi < 0 or self.sigma_o < 0:
            raise ValueError("xi and sigma_o must be nonnegative")

    def sample(self, rng: np.random.Generator, size: int, m: int) -> Array:
        J = rng.random((size, m)) < self.lam
        b = rng.uniform(0.0, self.xi, (size, m)) + np.sqrt(self.sigma_o) * rng.standard_normal((size, m))
        return np.where(J, b, 0.0)


def mc_fisher_bias_terms(model: StateSpaceModel, bias: RandomBiasConfig, x_prev: Array, x_next: Array,
                         phase: str, n_inner: int = 100, seed=None, k: int | None = None
                         ) -> tuple[Array, Array]:
    """Measurement information ``D22(2)`` under random measurement bias.

    Parameters
    ----------
    x_prev, x_next : (Nmc, n) arrays
        Paired state samples at consecutive steps (outer Monte-Carlo set).
    phase : {"nominal", "onset", "persist"}
        ``onset`` marginalizes a freshly drawn bias; ``persist`` conditions on
        the previous measurement, whose bias carries over with drift.
    n_inner : int
        Mixture-component samples (bias draws or indicator draws).

    Returns
    -------
    (estimate, stderr)
    """
    if n_inner < 10 or np.atleast_2d(x_next).shape[0] < 10:
        raise ValueError("at least 10 samples are required for each Monte-Carlo set")
    rng = make_rng(seed)
    X1 = np.atleast_2d(x_next)
    X0 = np.atleast_2d(x_prev)
    Jn, m = X1.shape[0], model.m
    R = model.Rk(k)
    Lr = np.linalg.cholesky(R)
    r1 = rng.standard_normal((Jn, m)) @ Lr.T
    if phase == "nominal":
        y = model.h(X1) + r1
        return mc_fisher_mixture(model, X1, y, np.zeros((1, m)), R[None])
    if phase == "onset":
        y = model.h(X1) + bias.sample(rng, Jn, m) + r1
        comps = bias.sample(rng, n_inner, m)
        return mc_fisher_mixture(model, X1, y, comps, np.broadcast_to(R, (n_inner, m, m)))
    if phase == "persist":
        present = rng.random((Jn, m)) < bias.lam
        o = rng.uniform(0.0, bias.xi, (Jn, m))
        sd = np.sqrt(bias.sigma_o)
        b0 = np.where(present, o + sd * rng.standard_normal((Jn, m)), 0.0)
        b1 = np.where(present, o + sd * rng.standard_normal((Jn, m)), 0.0)
        y0 = model.h(X0) + b0 + rng.standard_normal((Jn, m)) @ Lr.T
        y1 = model.h(X1) + b1 + r1
        Jmask = (rng.random((n_inner, m)) < bias.lam).astype(float)     # (I, m)
        d0 = y0 - model.h(X0)                                            # (J, m)
        offsets = Jmask[None, :, :] * d0[:, None, :]
        extra = R + 2.0 * bias.sigma_o * np.eye(m)
        covs = np.stack([R + np.diag(jm) @ extra @ np.diag(jm) for jm in Jmask])
        return mc_fisher_mixture(model, X1, y1, offsets, covs)
    raise ValueError(f"unknown phase {phase!r}")
