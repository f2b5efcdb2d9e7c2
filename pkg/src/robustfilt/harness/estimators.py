"""Uniform wrappers turning each filter into ``(scenario, corruption, seed) -> (K, n) estimates``."""
from __future__ import annotations

from typing import Callable

import numpy as np

from ..bdm import BdmConfig, BiasBelief, bdm_run
from ..bounds import hard_rejection_r_inv
from ..emorf import EmorfConfig, emorf_run, emors_run
from ..gaussian import ggf_predict, ggf_update, ukf_run
from ..map_ekf import OutlierHypothesisPrior, map_ekf_run
from ..robust_pf import robust_pf_run
from ..sor import SorConfig, sor_run
from .corrupt import Corruption
from .scenarios import Scenario

Array = np.ndarray
Estimator = Callable[[Scenario, Corruption, int, dict], Array]


def _means(beliefs) -> Array:
    return np.array([b.mean for b in beliefs])


def _ukf(sc: Scenario, co: Corruption, seed: int, opts: dict) -> Array:
    return _means(ukf_run(sc.model, co.measurements, sc.prior)[0])


def _perfect_ukf(sc: Scenario, co: Corruption, seed: int, opts: dict) -> Array:
    """UKF that drops exactly the corrupted dimensions (oracle)."""
    belief, out = sc.prior, []
    for k, y in enumerate(co.measurements, start=1):
        belief = ggf_predict(belief, sc.model, k=k)
        Ri = hard_rejection_r_inv(sc.model.Rk(k), ~co.outlier_mask[k - 1])
        belief = ggf_update(belief, y, sc.model, R_inv=Ri)
        out.append(belief.mean)
    return np.array(out)


def _sor(sc, co, seed, opts):
    cfg = SorConfig(epsilon=opts.get("epsilon", 1e-6), theta=opts.get("theta", 0.5))
    return _means(sor_run(sc.model, co.measurements, sc.prior, cfg)[0])


def _emorf(sc, co, seed, opts):
    cfg = EmorfConfig(epsilon=opts.get("epsilon", 1e-6), theta=opts.get("theta", 0.5))
    return _means(emorf_run(sc.model, co.measurements, sc.prior, cfg)[0])


def _emors(sc, co, seed, opts):
    cfg = EmorfConfig(epsilon=opts.get("epsilon", 1e-6), theta=opts.get("theta", 0.5))
    return _means(emors_run(sc.model, co.measurements, sc.prior, cfg)[0])


def _bdm(sc, co, seed, opts):
    m = sc.model.m
    bias0 = BiasBelief(np.zeros(m), opts.get("sigma0", 1e-3) * np.eye(m))
    cfg = BdmConfig(theta_prior=opts.get("theta", 0.5))
    return _means(bdm_run(sc.model, co.measurements, sc.prior, bias0, cfg)[0])


def _map_ekf(sc, co, seed, opts):
    m = sc.model.m
    p0 = opts.get("pi0", 0.5)
    pi = np.r_[p0, np.full(m, (1.0 - p0) / m)]
    prior = OutlierHypothesisPrior.from_variances(pi, opts.get("inflation", 1000.0) * np.diag(sc.model.R))
    return _means(map_ekf_run(sc.model, co.measurements, sc.prior, prior)[0])


def _pf(mode: str) -> Estimator:
    def run(sc, co, seed, opts):
        res = robust_pf_run(
            sc.model, co.measurements, sc.prior, sc.extras.get("pf_config"),
            N=int(opts.get("N", 1000)), seed=[seed, 11], mode=mode,
            prior_theta=sc.extras.get("prior_theta"),
            process_sampler=sc.extras.get("process_sampler"),
            ideal_shift=co.shift, ideal_var=co.extra_var)
        return res.estimates
    return run


ESTIMATORS: dict[str, Estimator] = {
    "ukf": _ukf,
    "perfect-ukf": _perfect_ukf,
    "sor": _sor,
    "emorf": _emorf,
    "emors": _emors,
    "bdm": _bdm,
    "map-ekf": _map_ekf,
    "pf-robust": _pf("robust"),
    "pf-bootstrap": _pf("bootstrap"),
    "pf-ideal": _pf("ideal"),
}


def get_estimator(name: str) -> Estimator:
    try:
        return ESTIMATORS[name]
    except KeyError:
        raise ValueError(f"unknown estimator {name!r}; choose from {sorted(ESTIMATORS)}") from None
