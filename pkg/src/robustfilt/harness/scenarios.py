"""Simulation scenarios: maneuvering targets, TDOA ranging, 1-D growth, CV tracking.

Every builder returns a :class:`Scenario` holding the model, a clean
trajectory, the filter prior and any scenario-specific extras (process
noise sampler, particle-filter settings).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple, Optional

import numpy as np

from ..core import GaussianBelief, StateSpaceModel, Trajectory, make_rng, simulate
from ..robust_pf import AbnormalityConfig, ThetaPrior

Array = np.ndarray

SCENARIOS = ("turn-range-bearing", "turn-tdoa", "turn-range", "growth-1d", "cv-range-bearing")


@dataclass
class ScenarioConfig:
    """Scenario selection plus overrides of its base parameters.

    ``params`` keys depend on the scenario; see :data:`DEFAULTS`.
    """

    name: str
    K: int = 100
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.name!r}; choose from {SCENARIOS}")
        if self.K < 1:
            raise ValueError("K must be positive")
        unknown = set(self.params) - set(DEFAULTS[self.name])
        if unknown:
            raise ValueError(f"unknown parameters for {self.name}: {sorted(unknown)}")

    def get(self, key: str) -> Any:
        return self.params.get(key, DEFAULTS[self.name][key])


DEFAULTS: dict[str, dict[str, Any]] = {
    "turn-range-bearing": dict(x0=[-10000.0, 10.0, 5000.0, -5.0, -0.0524], zeta=1.0, eta1=0.1,
                               eta2=1.75e-4, sigma_theta=3.5e-3, sigma_rho=10.0, m=6, p0_scale=100.0),
    "turn-tdoa": dict(x0=[0.0, 1.0, 0.0, -1.0, -0.0524], zeta=1.0, eta1=0.1, eta2=1.75e-4,
                      sigma2=10.0, sensors=10),
    "turn-range": dict(x0=[0.0, 10.0, 0.0, -5.0, 3.0 * np.pi / 180.0], zeta=1.0, eta1=0.1,
                       eta2=1.75e-4, r_var=4.0, m=4),
    "growth-1d": dict(x0_mean=0.1, x0_var=np.sqrt(2.0), gamma_shape=3.0, gamma_scale=2.0, r_var=5.0),
    "cv-range-bearing": dict(x0_mean=[80.0, 5.0, 0.0, 5.0], x0_var=[25.0, 25.0, 1.0, 1.0], dt=1.0,
                             r_var=[8.0, 0.002]),
}


class Scenario(NamedTuple):
    model: StateSpaceModel
    truth: Trajectory
    prior: GaussianBelief        # filter initialization
    x0: Array                    # true initial state
    extras: dict


# ---------------------------------------------------------------- turn model

def turn_noise_cov(zeta: float, eta1: float, eta2: float) -> Array:
    M = np.array([[zeta ** 3 / 3.0, zeta ** 2 / 2.0], [zeta ** 2 / 2.0, zeta]])
    Q = np.zeros((5, 5))
    Q[:2, :2] = eta1 * M
    Q[2:4, 2:4] = eta1 * M
    Q[4, 4] = eta2
    return Q


def _turn_coeffs(w: Array, T: float):
    """``sin(wT)/w``, ``(1 - cos(wT))/w`` and their w-derivatives, stable near w = 0."""
    small = np.abs(w) < 1e-6
    ws = np.where(small, 1.0, w)
    s, c = np.sin(ws * T), np.cos(ws * T)
    A = np.where(small, T - w ** 2 * T ** 3 / 6.0, s / ws)
    B = np.where(small, w * T ** 2 / 2.0, (1.0 - c) / ws)
    dA = np.where(small, -w * T ** 3 / 3.0, (T * c * ws - s) / ws ** 2)
    dB = np.where(small, T ** 2 / 2.0, (T * s * ws - (1.0 - c)) / ws ** 2)
    return A, B, dA, dB, np.sin(w * T), np.cos(w * T)


def turn_transition(zeta: float) -> Callable[[Array], Array]:
    def f(X: Array) -> Array:
        X = np.atleast_2d(X)
        a, va, b, vb, w = X.T
        A, B, _, _, s, c = _turn_coeffs(w, zeta)
        return np.column_stack([a + A * va - B * vb, c * va - s * vb,
                                b + B * va + A * vb, s * va + c * vb, w])
    return f


def turn_jacobian(zeta: float) -> Callable[[Array], Array]:
    def F(x: Array) -> Array:
        a, va, b, vb, w = np.asarray(x, float)
        A, B, dA, dB, s, c = (float(v) for v in _turn_coeffs(np.array(w), zeta))
        T = zeta
        return np.array([
            [1.0, A, 0.0, -B, dA * va - dB * vb],
            [0.0, c, 0.0, -s, -T * s * va - T * c * vb],
            [0.0, B, 1.0, A, dB * va + dA * vb],
            [0.0, s, 0.0, c, T * c * va - T * s * vb],
            [0.0, 0.0, 0.0, 0.0, 1.0],
        ])
    return F


# ------------------------------------------------------------ sensor models

def bearing_sensors(count: int) -> Array:
    j = np.arange(1, count + 1)
    return np.column_stack([350.0 * (j - 1), 350.0 * (j % 2)])


def range_sensors(count: int) -> Array:
    j = np.arange(1, count + 1)
    return np.column_stack([350.0 * (j - 1), 350.0 * ((j - 1) % 2)])


def _pos(X: Array, ia: int = 0, ib: int = 2) -> tuple[Array, Array]:
    X = np.atleast_2d(X)
    return X[:, ia], X[:, ib]


def bearings(X: Array, S: Array) -> Array:
    a, b = _pos(X)
    return np.arctan2(b[:, None] - S[:, 1], a[:, None] - S[:, 0])


def ranges(X: Array, S: Array, ia: int = 0, ib: int = 2) -> Array:
    a, b = _pos(X, ia, ib)
    return np.hypot(a[:, None] - S[:, 0], b[:, None] - S[:, 1])


def _bearing_jac(x: Array, S: Array, n: int = 5) -> Array:
    dx, dy = x[0] - S[:, 0], x[2] - S[:, 1]
    r2 = dx ** 2 + dy ** 2
    H = np.zeros((S.shape[0], n))
    H[:, 0] = -dy / r2
    H[:, 2] = dx / r2
    return H


def _range_jac(x: Array, S: Array, n: int = 5, ia: int = 0, ib: int = 2) -> Array:
    dx, dy = x[ia] - S[:, 0], x[ib] - S[:, 1]
    r = np.hypot(dx, dy)
    H = np.zeros((S.shape[0], n))
    H[:, ia] = dx / r
    H[:, ib] = dy / r
    return H


def tdoa_cov(sigma2: Array) -> Array:
    """Fully populated TDOA covariance: ``sigma_1^2`` everywhere plus ``sigma_{j+1}^2`` on the diagonal."""
    s = np.asarray(sigma2, float)
    return s[0] * np.ones((s.size - 1, s.size - 1)) + np.diag(s[1:])


# ------------------------------------------------------------- builders

def _turn_base(cfg: ScenarioConfig):
    zeta = cfg.get("zeta")
    Q = turn_noise_cov(zeta, cfg.get("eta1"), cfg.get("eta2"))
    return zeta, Q, turn_transition(zeta), turn_jacobian(zeta)


def _draw_prior(x0: Array, P0: Array, rng: np.random.Generator) -> GaussianBelief:
    w, V = np.linalg.eigh(P0)
    L = V * np.sqrt(np.maximum(w, 0.0))
    return GaussianBelief(x0 + L @ rng.standard_normal(x0.size), P0)


def _turn_range_bearing(cfg: ScenarioConfig, seed: int) -> Scenario:
    zeta, Q, f, F = _turn_base(cfg)
    m = int(cfg.get("m"))
    if m % 2 or m < 2:
        raise ValueError("m must be a positive even number")
    Sb, Sr = bearing_sensors(m // 2), range_sensors(m // 2)
    R = np.diag([cfg.get("sigma_theta") ** 2] * (m // 2) + [cfg.get("sigma_rho") ** 2] * (m // 2))
    model = StateSpaceModel(
        5, m, f, lambda X: np.hstack([bearings(X, Sb), ranges(X, Sr)]), Q, R,
        F_jac=F, H_jac=lambda x: np.vstack([_bearing_jac(x, Sb), _range_jac(x, Sr)]),
        name="turn-range-bearing")
    x0 = np.asarray(cfg.get("x0"), float)
    rng = make_rng([seed, 1])
    traj = simulate(model, x0, cfg.K, seed)
    prior = _draw_prior(x0, cfg.get("p0_scale") * Q, rng)
    return Scenario(model, traj, prior, x0, {"pos_idx": (0, 2), "n_bearing": m // 2})


def _turn_tdoa(cfg: ScenarioConfig, seed: int) -> Scenario:
    zeta, Q, f, F = _turn_base(cfg)
    ns = int(cfg.get("sensors"))
    if ns < 2:
        raise ValueError("TDOA needs at least two sensors")
    S = range_sensors(ns)
    s2 = np.broadcast_to(np.asarray(cfg.get("sigma2"), float), (ns,)).copy()
    R = tdoa_cov(s2)

    def h(X):
        r = ranges(X, S)
        return r[:, :1] - r[:, 1:]

    def H(x):
        J = _range_jac(x, S)
        return J[:1] - J[1:]

    model = StateSpaceModel(5, ns - 1, f, h, Q, R, F_jac=F, H_jac=H, name="turn-tdoa")
    x0 = np.asarray(cfg.get("x0"), float)
    traj = simulate(model, x0, cfg.K, seed)
    prior = _draw_prior(x0, Q, make_rng([seed, 1]))
    return Scenario(model, traj, prior, x0, {"pos_idx": (0, 2), "sigma2": s2})


def _turn_range(cfg: ScenarioConfig, seed: int) -> Scenario:
    zeta, Q, f, F = _turn_base(cfg)
    m = int(cfg.get("m"))
    S = range_sensors(m)
    R = cfg.get("r_var") * np.eye(m)
    model = StateSpaceModel(5, m, f, lambda X: ranges(X, S), Q, R, F_jac=F,
                            H_jac=lambda x: _range_jac(x, S), name="turn-range")
    x0 = np.asarray(cfg.get("x0"), float)
    traj = simulate(model, x0, cfg.K, seed)
    return Scenario(model, traj, GaussianBelief(x0, Q), x0, {"pos_idx": (0, 2)})


def growth_model(gamma_shape: float = 3.0, gamma_scale: float = 2.0, r_var: float = 5.0) -> StateSpaceModel:
    """Scalar growth model with time-varying drift ``1 + sin(0.04 pi k)``."""
    def f_at(X, k):
        return 1.0 + np.sin(0.04 * np.pi * k) + 0.5 * np.asarray(X, float)

    q_var = gamma_shape * gamma_scale ** 2
    return StateSpaceModel(
        1, 1, lambda X: 0.5 * np.asarray(X, float), lambda X: 0.2 * np.asarray(X, float) ** 2,
        np.array([[q_var]]), np.array([[r_var]]),
        F_jac=lambda x: np.array([[0.5]]), H_jac=lambda x: np.array([[0.4 * x[0]]]),
        name="growth-1d", f_at=f_at)


def gamma_sampler(shape: float, scale: float):
    def sample(rng: np.random.Generator, N: int) -> Array:
        if shape <= 0 or scale <= 0:
            return np.zeros((N, 1))
        return rng.gamma(shape, scale, (N, 1))
    return sample


def _growth(cfg: ScenarioConfig, seed: int) -> Scenario:
    shape, scale, r_var = cfg.get("gamma_shape"), cfg.get("gamma_scale"), cfg.get("r_var")
    model = growth_model(shape, scale, r_var)
    rng = make_rng(seed)
    x = cfg.get("x0_mean") + np.sqrt(cfg.get("x0_var")) * rng.standard_normal()
    x0 = np.array([x])
    sampler = gamma_sampler(shape, scale)
    X = np.empty((cfg.K, 1))
    for k in range(1, cfg.K + 1):
        x = model.transition_at(np.array([[x]]), k)[0, 0] + sampler(rng, 1)[0, 0]
        X[k - 1] = x
    Y = model.h(X) + np.sqrt(r_var) * rng.standard_normal((cfg.K, 1))
    prior = GaussianBelief([cfg.get("x0_mean")], [[cfg.get("x0_var")]])
    pf = AbnormalityConfig(U=[500.0 ** 2 * 5.0], Upsilon=[0.01], Delta=[0.25], c=[-1000.0], d=[1000.0])
    extras = {"process_sampler": sampler, "pf_config": pf,
              "prior_theta": ThetaPrior(np.zeros(1), 1e-3 * np.eye(1)), "pos_idx": None}
    return Scenario(model, Trajectory(X, Y), prior, x0, extras)


def cv_model(dt: float = 1.0, r_var=(8.0, 0.002)) -> StateSpaceModel:
    """Constant-velocity target with range/bearing from the origin; state ``[a, b, va, vb]``."""
    A = np.array([[1, 0, dt, 0], [0, 1, 0, dt], [0, 0, 1, 0], [0, 0, 0, 1]], float)
    G = np.array([[dt ** 2 / 2, 0], [0, dt ** 2 / 2], [dt, 0], [0, dt]])

    def h(X):
        X = np.atleast_2d(X)
        return np.column_stack([np.hypot(X[:, 0], X[:, 1]), np.arctan2(X[:, 1], X[:, 0])])

    def H(x):
        r2 = x[0] ** 2 + x[1] ** 2
        r = np.sqrt(r2)
        return np.array([[x[0] / r, x[1] / r, 0, 0], [-x[1] / r2, x[0] / r2, 0, 0]])

    return StateSpaceModel(4, 2, lambda X: np.atleast_2d(X) @ A.T, h, G @ G.T, np.diag(r_var),
                           F_jac=lambda x: A, H_jac=H, name="cv-range-bearing")


def _cv(cfg: ScenarioConfig, seed: int) -> Scenario:
    r_var = np.asarray(cfg.get("r_var"), float)
    model = cv_model(cfg.get("dt"), r_var)
    P0 = np.diag(cfg.get("x0_var"))
    m0 = np.asarray(cfg.get("x0_mean"), float)
    x0 = _draw_prior(m0, P0, make_rng([seed, 1])).mean
    traj = simulate(model, x0, cfg.K, seed)
    pf = AbnormalityConfig(U=500.0 * r_var, Upsilon=[4.0, 0.001], Delta=[0.01, 1e-8],
                           c=[-1000.0, -np.pi], d=[1000.0, np.pi])
    extras = {"pf_config": pf, "prior_theta": ThetaPrior(np.zeros(2), 1e-3 * np.eye(2)),
              "pos_idx": (0, 1)}
    return Scenario(model, traj, GaussianBelief(m0, P0), x0, extras)


_BUILDERS = {
    "turn-range-bearing": _turn_range_bearing,
    "turn-tdoa": _turn_tdoa,
    "turn-range": _turn_range,
    "growth-1d": _growth,
    "cv-range-bearing": _cv,
}


def make_scenario(cfg: ScenarioConfig, seed: int) -> Scenario:
    """Build the model and a clean trajectory for ``cfg`` (reproducible per seed)."""
    return _BUILDERS[cfg.name](cfg, seed)
