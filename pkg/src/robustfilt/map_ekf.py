"""MAP-based EKF tolerating an outlier in at most one measurement dimension.

The prior over the measurement noise is a mixture of ``m + 1`` Gaussians:
the nominal component (index 0) and, for each dimension ``i``, a component
whose variance in dimension ``i`` is inflated by ``V^i``. Each component
gives an EKF posterior mode; the mode with the highest posterior mixture
density at its own mean is returned.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .core import GaussianBelief, StateSpaceModel, symmetrize_psd
from .gaussian import ekf_predict

Array = np.ndarray


@dataclass(frozen=True)
class OutlierHypothesisPrior:
    """Mixture prior over which (if any) dimension holds an outlier.

    Parameters
    ----------
    pi : (m + 1,) array_like
        ``pi[0]`` is the no-outlier probability, ``pi[i]`` the probability of
        an outlier in dimension ``i - 1`` (0-based measurement index).
    V : sequence of m (m, m) matrices
        ``V[i]`` is diagonal with a single nonnegative entry at ``(i, i)``.
    """

    pi: Array
    V: tuple

    def __post_init__(self):
        pi = np.asarray(self.pi, float)
        V = tuple(np.atleast_2d(np.asarray(v, float)) for v in self.V)
        m = len(V)
        if pi.shape != (m + 1,):
            raise ValueError(f"pi must have length m + 1 = {m + 1}")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise ValueError("pi must be a probability vector")
        for i, v in enumerate(V):
            if v.shape != (m, m):
                raise ValueError(f"V[{i}] must be {m}x{m}")
            off = v.copy()
            off[i, i] = 0.0
            if np.any(off != 0.0) or v[i, i] < 0:
                raise ValueError(f"V[{i}] must be nonzero only at ({i}, {i}) with a nonnegative value")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "V", V)

    @classmethod
    def from_variances(cls, pi: Sequence[float], sigma2: Sequence[float]) -> "OutlierHypothesisPrior":
        sigma2 = np.asarray(sigma2, float)
        m = sigma2.shape[0]
        V = []
        for i in range(m):
            v = np.zeros((m, m))
            v[i, i] = sigma2[i]
            V.append(v)
        return cls(np.asarray(pi, float), tuple(V))

    @property
    def m(self) -> int:
        return len(self.V)


class Hypothesis(NamedTuple):
    mean: Array
    cov: Array
    log_evidence: float   # log N(y | ybar, S^i) + log pi(i)
    gain: Array


def _log_gauss(x: Array, mean: Array, cov: Array) -> float:
    d = x - mean
    c, low = cho_factor(cov, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(c)))
    return float(-0.5 * (d @ cho_solve((c, low), d) + logdet + d.size * np.log(2 * np.pi)))


def hypothesis_posteriors(belief: GaussianBelief, y: Array, model: StateSpaceModel,
                          prior: OutlierHypothesisPrior) -> list[Hypothesis]:
    """EKF posterior for each outlier hypothesis ``i = 0..m``.

    All modes share the linearization at the prior mean; mode ``i`` uses the
    innovation covariance ``H P H^T + R + V^i`` with ``V^0 = 0``.
    """
    if model.H_jac is None:
        raise ValueError("observation Jacobian unavailable")
    if prior.m != model.m:
        raise ValueError("prior dimension does not match the model")
    y = np.asarray(y, float)
    H = np.atleast_2d(model.H_jac(belief.mean))
    P = belief.cov
    ybar = model.observe(belief.mean)
    PHt = P @ H.T
    S0 = H @ PHt + model.R
    out = []
    for i in range(model.m + 1):
        S = S0 if i == 0 else S0 + prior.V[i - 1]
        S = 0.5 * (S + S.T)
        try:
            K = np.linalg.solve(S, PHt.T).T
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"singular innovation covariance for mode {i}") from exc
        mean = belief.mean + K @ (y - ybar)
        cov = symmetrize_psd(P - K @ S @ K.T)
        with np.errstate(divide="ignore"):
            lp = np.log(prior.pi[i])
        ll = _log_gauss(y, ybar, S) + lp if np.isfinite(lp) else -np.inf
        out.append(Hypothesis(mean, cov, ll, K))
    return out


def mixture_log_density(x: Array, hyps: Sequence[Hypothesis]) -> float:
    """Log of the (unnormalized) posterior mixture density evaluated at ``x``."""
    terms = []
    for h in hyps:
        if not np.isfinite(h.log_evidence):
            terms.append(-np.inf)
            continue
        try:
            terms.append(_log_gauss(x, h.mean, h.cov) + h.log_evidence)
        except np.linalg.LinAlgError:
            # degenerate covariance: point mass, contributes only at its mean
            terms.append(np.inf if np.allclose(x, h.mean) else -np.inf)
    return float(logsumexp(terms))


def map_ekf_step(belief: GaussianBelief, y: Array, model: StateSpaceModel,
                 prior: OutlierHypothesisPrior) -> tuple[GaussianBelief, int]:
    """Select the mixture mode with the largest posterior density.

    Returns the selected ``(mean, cov)`` and its hypothesis index
    (0 = no outlier, ``i`` = outlier in measurement dimension ``i - 1``).
    Ties go to the smallest index.
    """
    hyps = hypothesis_posteriors(belief, y, model, prior)
    scores = np.array([
        mixture_log_density(h.mean, hyps) if np.isfinite(h.log_evidence) else -np.inf
        for h in hyps
    ])
    j = int(np.argmax(scores))  # argmax returns the first maximizer
    return GaussianBelief(hyps[j].mean, hyps[j].cov), j


def map_ekf_run(model: StateSpaceModel, ys: Array, prior_belief: GaussianBelief,
                prior: OutlierHypothesisPrior) -> tuple[list[GaussianBelief], Array]:
    """Run EKF prediction plus :func:`map_ekf_step` over a measurement batch."""
    belief = prior_belief
    beliefs, modes = [], []
    for k, y in enumerate(np.asarray(ys, float), start=1):
        belief = ekf_predict(belief, model, k)
        belief, j = map_ekf_step(belief, y, model, prior)
        beliefs.append(belief)
        modes.append(j)
    return beliefs, np.asarray(modes)
