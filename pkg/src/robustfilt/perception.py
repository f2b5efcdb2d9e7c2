"""Robust reweighting heuristics wrapped around weighted non-minimal solvers.

A :class:`ResidualProblem` supplies a weighted least-squares solver and a
map from an estimate to whitened residuals. Index 0 is the regularizing
term and always carries weight 1. Three heuristics are provided:

``EROR``
    Student-t style weights ``1 / (1 + r^2 / mu)`` with ``mu`` a centre of the
    largest and smallest squared residuals (floored at ``chi``). The default
    centre is geometric; the arithmetic one keeps every weight above 1/3.
``ESOR``
    Logistic weights ``1 / (1 + exp((r^2 - rho^2) / 2))`` with ``rho^2`` the
    weighted mean squared residual (floored at ``gamma``).
``ASOR``
    Bernoulli-Gamma indicator model whose outlier scale ``b`` is learnt.

Horn's closed-form absolute orientation serves as the inner solver for
point-cloud registration.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.special import expit, gammaln
from scipy.stats import chi2

Array = np.ndarray
logger = logging.getLogger(__name__)

KINDS = ("EROR", "ESOR", "ASOR")
_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class ResidualProblem:
    """Weighted estimation problem.

    Attributes
    ----------
    solve : callable
        ``weights (m+1,) -> x_hat``; weighted non-minimal solver.
    residuals : callable
        ``x_hat -> r (m+1,)``, whitened so that ``r_i^2`` is the precision-weighted term.
    m : int
        Number of measurement terms (excluding the regularizer).
    """

    solve: Callable[[Array], object]
    residuals: Callable[[object], Array]
    m: int


@dataclass(frozen=True)
class HeuristicParams:
    kind: str = "ESOR"
    chi: float = float(chi2.ppf(0.999, 3))
    gamma: float = float(chi2.ppf(0.999, 3))
    a: float = 0.5
    A: float = 1e4
    B: float = 1e3
    b_hat0: float = 1e4
    theta: float = 0.5
    conv_tol: float = 1e-5
    max_iters: int = 1000
    adaptive: bool = True   # EROR only: False keeps mu = chi fixed (experimental plain ROR)
    eror_center: str = "geometric"   # EROR only: "geometric" or "arithmetic" mean of max/min r^2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.chi <= 0 or self.gamma <= 0:
            raise ValueError("chi and gamma must be positive")
        if self.A <= 1:
            raise ValueError("A must exceed 1")
        if self.a <= 0 or self.B <= 0 or self.b_hat0 <= 0:
            raise ValueError("a, B and b_hat0 must be positive")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.eror_center not in ("geometric", "arithmetic"):
            raise ValueError("eror_center must be 'geometric' or 'arithmetic'")


@dataclass
class HeuristicState:
    """Internal parameters carried between weight updates."""

    mu: float = np.nan
    rho2: float = np.nan
    b_hat: float = np.nan
    omega: Optional[Array] = None
    log_zeta: float = np.nan
    alpha: float = np.nan

    @classmethod
    def initial(cls, params: HeuristicParams) -> "HeuristicState":
        st = cls(b_hat=params.b_hat0)
        if params.kind == "ASOR":
            st.alpha = params.a + 0.5
            st.log_zeta = float(np.log(1.0 / params.theta - 1.0) + gammaln(st.alpha) - gammaln(params.a))
        return st


def weight_update(params: HeuristicParams, residuals_sq: Array, weights: Array,
                  state: HeuristicState) -> tuple[Array, HeuristicState]:
    """One parametric and weight update.

    Parameters
    ----------
    residuals_sq : (m+1,) array
        Current squared residuals, index 0 the regularizer.
    weights : (m+1,) array
        Weights used to produce ``residuals_sq`` (ESOR's centroid uses them).
    """
    r2 = np.asarray(residuals_sq, float)
    if np.any(r2 < 0):
        raise ValueError("squared residuals must be nonnegative")
    meas = r2[1:]
    w = np.ones_like(r2)
    if params.kind == "EROR":
        if params.adaptive:
            if not meas.size:
                mu = params.chi
            elif params.eror_center == "geometric":
                mu = max(float(np.sqrt(meas.max() * meas.min())), params.chi)
            else:
                mu = max(0.5 * (meas.max() + meas.min()), params.chi)
        else:
            mu = params.chi
        state.mu = mu
        w[1:] = 1.0 / (1.0 + meas / mu)
    elif params.kind == "ESOR":
        wt = np.asarray(weights, float)
        rho2 = max(float(wt @ r2 / wt.sum()), params.gamma)
        state.rho2 = rho2
        # floored so that far outliers keep a strictly positive weight
        w[1:] = np.maximum(expit(-0.5 * (meas - rho2)), _TINY)
    else:
        beta = 0.5 * meas + state.b_hat
        log_odds = state.log_zeta + params.a * np.log(state.b_hat) - state.alpha * np.log(beta) + 0.5 * meas
        omega = expit(-log_odds)
        A_bar = params.A - 1.0 + params.a * np.sum(1.0 - omega)
        B_bar = params.B + np.sum((1.0 - omega) * state.alpha / beta)
        b_new = A_bar / B_bar
        if not b_new > 0:
            raise AssertionError("b_hat must stay positive")
        state.b_hat = float(b_new)
        state.omega = omega
        w[1:] = omega + (1.0 - omega) * state.alpha / beta
    return w, state


class SolveResult(NamedTuple):
    x: object
    weights: Array
    iterations: int
    converged: bool


def robust_solve(problem: ResidualProblem, params: HeuristicParams) -> SolveResult:
    """Alternate solve, residual, parameter and weight updates until converged.

    Convergence is declared when the relative change of ``sum_i w_i r_i^2``
    drops below ``conv_tol``. EROR and ESOR also stop when the measurement
    weights almost vanish (sum below ``1e-3 m``). ASOR weights are small in
    absolute terms by design, so that exit does not apply to it.
    """
    w = np.ones(problem.m + 1)
    state = HeuristicState.initial(params)
    prev_cost = None
    x = None
    converged = False
    it = 0
    for it in range(1, params.max_iters + 1):
        x = problem.solve(w)
        r2 = np.asarray(problem.residuals(x), float) ** 2
        cost = float(w @ r2)
        if prev_cost is not None:
            if cost == 0.0 or abs(cost - prev_cost) / max(cost, 1e-300) < params.conv_tol:
                converged = True
                break
        elif cost == 0.0:
            converged = True
            break
        prev_cost = cost
        w, state = weight_update(params, r2, w, state)
        if params.kind != "ASOR" and w[1:].sum() < 1e-3 * problem.m:
            logger.info("weights vanished after %d iterations", it)
            break
    return SolveResult(x, w, it, converged)


def horn_solve(P: Array, Q: Array, weights: Optional[Array] = None) -> tuple[Array, Array]:
    """Weighted absolute orientation minimizing ``sum w_i ||q_i - R p_i - t||^2``.

    Parameters
    ----------
    P, Q : (3, N) arrays
    weights : (N,) nonnegative array, optional

    Returns
    -------
    R : (3, 3) proper rotation
    t : (3,) translation
    """
    P = np.asarray(P, float)
    Q = np.asarray(Q, float)
    if P.shape != Q.shape or P.shape[0] != 3 or P.shape[1] < 3:
        raise ValueError("P and Q must both be 3 x N with N >= 3")
    w = np.ones(P.shape[1]) if weights is None else np.asarray(weights, float)
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative with positive mass")
    w = w / w.sum()
    pc = P @ w
    qc = Q @ w
    Pd, Qd = P - pc[:, None], Q - qc[:, None]
    H = (Pd * w) @ Qd.T
    U, s, Vt = np.linalg.svd(H)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise np.linalg.LinAlgError("degenerate point configuration (weighted covariance rank < 2)")
    if s[2] <= 1e-12 * s[0]:
        logger.debug("planar point configuration; rotation still determined")
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    return R, qc - R @ pc


def rotation_error_deg(R_est: Array, R_true: Array) -> float:
    c = (np.trace(R_true.T @ R_est) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


class RegistrationResult(NamedTuple):
    R: Array
    t: Array
    weights: Array
    iterations: int
    rotation_error_deg: Optional[float]
    translation_error: Optional[float]


def register_point_clouds(P: Array, Q: Array, params: HeuristicParams = HeuristicParams(),
                          noise_sigma: float = 1e-3, R_true: Optional[Array] = None,
                          t_true: Optional[Array] = None) -> RegistrationResult:
    """Robust registration of corresponding 3-D points with Horn's solver.

    Residual ``i`` is ``||q_i - R p_i - t|| / noise_sigma``; there is no
    regularizing term, so residual 0 is identically zero.
    """
    P = np.asarray(P, float)
    Q = np.asarray(Q, float)
    N = P.shape[1]

    def solve(w):
        return horn_solve(P, Q, w[1:])

    def residuals(x):
        R, t = x
        r = np.linalg.norm(Q - (R @ P + t[:, None]), axis=0) / noise_sigma
        return np.concatenate([[0.0], r])

    res = robust_solve(ResidualProblem(solve, residuals, N), params)
    R, t = res.x
    rot = rotation_error_deg(R, R_true) if R_true is not None else None
    tr = float(np.linalg.norm(t - t_true)) if t_true is not None else None
    return RegistrationResult(R, t, res.weights, res.iterations, rot, tr)


def random_rotation(rng: np.random.Generator) -> Array:
    """Uniformly distributed rotation from a normalized random quaternion."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    a, b, c, d = q
    return np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a - b * b + c * c - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a - b * b - c * c + d * d],
    ])


def synthetic_registration(m: int, outlier_ratio: float, rng: np.random.Generator,
                           noise_sigma: float = 1e-3, t_max: float = 3.0
                           ) -> tuple[Array, Array, Array, Array, Array]:
    """Random cloud in ``[-0.5, 0.5]^3``, transformed and corrupted.

    Outlier targets are drawn uniformly inside a ball of diameter ``sqrt(3)``
    centred on the transformed cloud. Returns ``(P, Q, R, t, outlier_mask)``.
    """
    P = rng.uniform(-0.5, 0.5, (3, m))
    R = random_rotation(rng)
    t = rng.standard_normal(3)
    t *= rng.uniform(0, t_max) / np.linalg.norm(t)
    Q = R @ P + t[:, None] + noise_sigma * rng.standard_normal((3, m))
    n_out = int(round(outlier_ratio * m))
    mask = np.zeros(m, bool)
    mask[rng.choice(m, n_out, replace=False)] = True
    d = rng.standard_normal((3, n_out))
    d *= (np.sqrt(3) / 2) * rng.random(n_out) ** (1 / 3) / np.linalg.norm(d, axis=0)
    Q[:, mask] = t[:, None] + d
    return P, Q, R, t, mask


def load_correspondences(path: str | Path) -> tuple[Array, Array]:
    """Read ``px py pz qx qy qz`` lines (``#`` comments) into two ``3 x N`` arrays."""
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 6:
        raise ValueError("each correspondence line needs six numbers")
    return data[:, :3].T.copy(), data[:, 3:].T.copy()
