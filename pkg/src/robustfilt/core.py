"""Shared state-space abstractions, PSD utilities and clean-trajectory simulation.

Conventions used throughout the package
---------------------------------------
* Maps ``f`` and ``h`` are *batched*: they accept an array of shape ``(N, n)``
  and return ``(N, n)`` / ``(N, m)``. :class:`StateSpaceModel` wraps them so
  that a single 1-D state can be passed as well.
* Measurement and state dimensions are indexed from 0 in the API.
* Random numbers come from :func:`make_rng`, a Philox (counter-based)
  generator keyed by an integer seed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

Array = np.ndarray
BatchMap = Callable[[Array], Array]


def make_rng(seed: int | np.random.SeedSequence | None) -> np.random.Generator:
    """Return a counter-based (Philox) generator for ``seed``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def symmetrize_psd(M: Array, *, tol_log: float = 1e-8) -> Array:
    """Symmetrize a square matrix and clamp its eigenvalues at zero.

    Parameters
    ----------
    M : (d, d) array_like
        Square matrix.
    tol_log : float
        Clamped eigenvalue mass above ``tol_log * ||M||`` is logged at debug level.

    Returns
    -------
    (d, d) ndarray
        ``(M + M.T) / 2`` with negative eigenvalues set to zero.

    Raises
    ------
    ValueError
        If ``M`` is not square.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    S = 0.5 * (M + M.T)
    if S.size == 0:
        return S
    w, V = np.linalg.eigh(S)
    if w[0] >= 0.0:
        return S
    clamp = -w[w < 0].sum()
    scale = np.linalg.norm(S)
    if clamp > tol_log * max(scale, 1e-300):
        logger.debug("symmetrize_psd clamped eigenvalue mass %.3e (norm %.3e)", clamp, scale)
    w = np.maximum(w, 0.0)
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


def is_psd(M: Array, rtol: float = 1e-9) -> bool:
    """True when ``M`` is symmetric (relative ``rtol``) with eigenvalues >= -rtol*||M||."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        return False
    scale = max(np.linalg.norm(M), 1e-300)
    if np.linalg.norm(M - M.T) > rtol * scale:
        return False
    return bool(np.linalg.eigvalsh(0.5 * (M + M.T))[0] >= -rtol * scale)


@dataclass(frozen=True)
class GaussianBelief:
    """Gaussian belief ``N(mean, cov)``.

    Attributes
    ----------
    mean : (n,) ndarray
    cov : (n, n) ndarray
    """

    mean: Array
    cov: Array

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float)).copy()
        if mean.ndim != 1:
            raise ValueError("mean must be a vector")
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise ValueError(f"cov shape {cov.shape} inconsistent with mean length {n}")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def n(self) -> int:
        return self.mean.shape[0]

    def check(self, rtol: float = 1e-9) -> bool:
        """Verify symmetry and positive semi-definiteness of ``cov``."""
        return is_psd(self.cov, rtol)


@dataclass(frozen=True)
class StateSpaceModel:
    """Additive-noise nonlinear state-space model.

    ``x_k = f(x_{k-1}) + q_{k-1}``,  ``y_k = h(x_k) + r_k`` with
    ``q ~ N(0, Q)`` and ``r ~ N(0, R)``.

    Parameters
    ----------
    n, m : int
        State and measurement dimensions.
    f, h : callable
        Batched transition and observation maps (see module notes).
    Q, R : ndarray
        Process and measurement noise covariances. ``R`` may be full.
    F_jac, H_jac : callable, optional
        Jacobians of ``f`` and ``h`` evaluated at a single state.
    Q_at, R_at : callable, optional
        Per-step overrides ``k -> matrix``; when absent the constant matrices apply.
    f_at : callable, optional
        Time-varying transition ``(X, k) -> X'`` for the step into ``x_k``;
        used by :meth:`transition_at` and the simulators when present.
    name : str
        Label used in reports.
    """

    n: int
    m: int
    f: BatchMap
    h: BatchMap
    Q: Array
    R: Array
    F_jac: Optional[Callable[[Array], Array]] = None
    H_jac: Optional[Callable[[Array], Array]] = None
    Q_at: Optional[Callable[[int], Array]] = None
    R_at: Optional[Callable[[int], Array]] = None
    name: str = "model"
    f_at: Optional[Callable[[Array, int], Array]] = None

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if self.n < 1 or self.m < 1:
            raise ValueError("dimensions must be positive")
        if Q.shape != (self.n, self.n):
            raise ValueError(f"Q has shape {Q.shape}, expected {(self.n, self.n)}")
        if R.shape != (self.m, self.m):
            raise ValueError(f"R has shape {R.shape}, expected {(self.m, self.m)}")
        for name, M in (("Q", Q), ("R", R)):
            if not is_psd(M, 1e-9):
                raise ValueError(f"{name} is not symmetric positive semi-definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    # -- map wrappers accepting single or batched states --------------------
    def transition(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.asarray(self.f(x[None, :]), dtype=float)[0]
        return np.asarray(self.f(x), dtype=float)

    def observe(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.asarray(self.h(x[None, :]), dtype=float)[0]
        return np.asarray(self.h(x), dtype=float)

    def transition_at(self, X: Array, k: int | None) -> Array:
        """Batched transition into step ``k`` (falls back to ``f``)."""
        if self.f_at is None or k is None:
            return np.asarray(self.f(X), dtype=float)
        return np.asarray(self.f_at(X, k), dtype=float)

    def Qk(self, k: int | None = None) -> Array:
        return self.Q if (self.Q_at is None or k is None) else np.asarray(self.Q_at(k), float)

    def Rk(self, k: int | None = None) -> Array:
        return self.R if (self.R_at is None or k is None) else np.asarray(self.R_at(k), float)

    def with_noise(self, Q: Array | None = None, R: Array | None = None) -> "StateSpaceModel":
        """Copy of the model with replaced noise covariances."""
        return StateSpaceModel(
            self.n, self.m, self.f, self.h,
            self.Q if Q is None else Q, self.R if R is None else R,
            self.F_jac, self.H_jac, self.Q_at, self.R_at, self.name, self.f_at,
        )

    @property
    def has_jacobians(self) -> bool:
        return self.F_jac is not None and self.H_jac is not None


def linear_model(A: Array, H: Array, Q: Array, R: Array, b: Array | None = None,
                 name: str = "linear") -> StateSpaceModel:
    """Build a linear Gaussian model ``x' = A x + b``, ``y = H x``."""
    A = np.atleast_2d(np.asarray(A, float))
    H = np.atleast_2d(np.asarray(H, float))
    b = np.zeros(A.shape[0]) if b is None else np.asarray(b, float)
    return StateSpaceModel(
        n=A.shape[0], m=H.shape[0],
        f=lambda X: X @ A.T + b,
        h=lambda X: X @ H.T,
        Q=Q, R=R,
        F_jac=lambda x: A, H_jac=lambda x: H,
        name=name,
    )


@dataclass(frozen=True)
class CorruptionEvent:
    """Single injected abnormality: 1-based ``step``, 0-based ``dim``."""

    step: int
    dim: int
    kind: str
    value: float


@dataclass
class Trajectory:
    """Ground-truth states with (possibly corrupted) measurements.

    Attributes
    ----------
    states : (K, n) ndarray
    measurements : (K, m) ndarray
    corruption_log : list of CorruptionEvent
    flags : (K, m) bool ndarray or None
        Marks entries that are missing (see the harness corruption modes).
    """

    states: Array
    measurements: Array
    corruption_log: list = field(default_factory=list)
    flags: Optional[Array] = None

    def __post_init__(self):
        self.states = np.asarray(self.states, float)
        self.measurements = np.asarray(self.measurements, float)
        if self.states.shape[0] != self.measurements.shape[0]:
            raise ValueError("states and measurements must have equal row counts")
        K, m = self.measurements.shape
        for ev in self.corruption_log:
            if not (1 <= ev.step <= K and 0 <= ev.dim < m):
                raise ValueError(f"corruption event out of range: {ev}")

    @property
    def K(self) -> int:
        return self.states.shape[0]


def _noise_factor(C: Array) -> Array:
    """Matrix L with L L^T = C for PSD C (eigen-based, robust to singular C)."""
    w, V = np.linalg.eigh(symmetrize_psd(C))
    return V * np.sqrt(np.maximum(w, 0.0))


def simulate(model: StateSpaceModel, x0: Sequence[float], K: int, seed: int) -> Trajectory:
    """Simulate ``K`` steps of the model starting from ``x0``.

    The first returned state is ``x_1 = f(x_0) + q_0``. Noise draws use
    :func:`make_rng` so identical seeds give bit-identical output.

    Parameters
    ----------
    model : StateSpaceModel
    x0 : (n,) array_like
    K : int
        Number of steps, at least 1.
    seed : int

    Returns
    -------
    Trajectory
    """
    x = np.asarray(x0, dtype=float)
    if x.shape != (model.n,):
        raise ValueError(f"x0 must have length {model.n}")
    if K < 1:
        raise ValueError("K must be >= 1")
    rng = make_rng(seed)
    X = np.empty((K, model.n))
    Y = np.empty((K, model.m))
    const_noise = model.Q_at is None and model.R_at is None
    if const_noise:
        LQ, LR = _noise_factor(model.Q), _noise_factor(model.R)
    for k in range(K):
        if not const_noise:
            LQ, LR = _noise_factor(model.Qk(k + 1)), _noise_factor(model.Rk(k + 1))
        x = model.transition_at(x[None, :], k + 1)[0] + LQ @ rng.standard_normal(model.n)
        X[k] = x
        Y[k] = model.observe(x) + LR @ rng.standard_normal(model.m)
    return Trajectory(X, Y)
