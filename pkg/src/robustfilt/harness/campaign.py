"""Monte-Carlo campaigns: paired replicates, per-step CSV output and a JSON summary."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
import time
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from ..core import make_rng
from .config import CampaignConfig
from .corrupt import Corruption, corrupt
from .estimators import get_estimator
from .metrics import mse_state, rmse_pos, rmse_series, rmse_state, summarize
from .scenarios import Scenario, make_scenario

logger = logging.getLogger(__name__)
Array = np.ndarray


def replicate_seeds(seed: int, runs: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(runs, dtype=np.uint32)]


def build_replicate(cfg: CampaignConfig, rep_seed: int) -> tuple[Scenario, Corruption]:
    """Scenario plus corrupted measurements for one replicate (shared by all estimators)."""
    sc = make_scenario(cfg.scenario, rep_seed)
    params = {k: v for k, v in cfg.corruption.items() if k != "mode"}
    mode = cfg.corruption.get("mode", "none")
    if mode == "tdoa-outlier" and "sigma2" not in params and "sigma2" in sc.extras:
        params["sigma2"] = sc.extras["sigma2"]
    co = corrupt(sc.truth.measurements, mode, seed=[rep_seed, 7], R=sc.model.R, **params)
    return sc, co


def measurement_hash(Y: Array) -> str:
    return hashlib.sha256(np.ascontiguousarray(Y, dtype=np.float64).tobytes()).hexdigest()


def write_step_csv(path: Path, truth: Array, estimates: dict, flags: Array) -> None:
    K, n = truth.shape
    header = ["k"] + [f"truth_{i + 1}" for i in range(n)]
    for name in estimates:
        header += [f"est_{name}_{i + 1}" for i in range(n)]
    header += [f"flag_{j + 1}" for j in range(flags.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(K):
            row = [k + 1] + [repr(float(v)) for v in truth[k]]
            for est in estimates.values():
                row += [repr(float(v)) for v in est[k]] if est is not None else ["nan"] * n
            row += [int(f) for f in flags[k]]
            w.writerow(row)


def run_campaign(cfg: CampaignConfig, out: Optional[str | Path] = None, quiet: bool = True) -> dict:
    """Run every estimator on identical corrupted data for each replicate.

    Returns the summary dictionary (also written to ``summary.json`` when an
    output directory is given). Failures of one estimator in one replicate
    are recorded and do not stop the campaign.
    """
    out = Path(out or cfg.out) if (out or cfg.out) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    seeds = replicate_seeds(cfg.seed, cfg.runs)
    truths, ests = [], {name: [] for name in cfg.estimators}
    timing = {name: [] for name in cfg.estimators}
    failures: list = []
    hashes = []
    pos_idx = None
    for r, rs in enumerate(seeds):
        sc, co = build_replicate(cfg, rs)
        pos_idx = sc.extras.get("pos_idx")
        truths.append(sc.truth.states)
        hashes.append(measurement_hash(co.measurements))
        rep_est = {}
        for name in cfg.estimators:
            t0 = time.perf_counter()
            try:
                est = get_estimator(name)(sc, co, rs, cfg.options)
            except Exception as exc:  # isolate failures per run
                logger.warning("estimator %s failed on replicate %d: %s", name, r, exc)
                failures.append({"replicate": r, "estimator": name, "error": repr(exc)})
                est = np.full_like(sc.truth.states, np.nan)
            timing[name].append(time.perf_counter() - t0)
            ests[name].append(est)
            rep_est[name] = est
        if out is not None:
            write_step_csv(out / f"replicate_{r:03d}.csv", sc.truth.states, rep_est, co.flags)
        if not quiet:
            print(f"replicate {r + 1}/{cfg.runs} done")
    T = np.array(truths)
    methods = {}
    for name in cfg.estimators:
        E = np.array(ests[name])
        rec = {"rmse_state": rmse_state(T, E).tolist(), "mse_state": mse_state(T, E).tolist(),
               "rmse_series": rmse_series(T, E).tolist(),
               "time_s": timing[name]}
        if pos_idx is not None:
            rec["rmse_pos"] = rmse_pos(T, E, pos_idx).tolist()
            rec["trmse_pos"] = float(rmse_series(T, E, pos_idx).mean())
        rec["trmse"] = float(np.mean(rec["rmse_series"]))
        rec["aggregates"] = {key: summarize(rec[key]) for key in ("rmse_state", "mse_state", "rmse_pos")
                             if key in rec}
        rec["mean_time_s"] = float(np.mean(timing[name]))
        methods[name] = rec
    summary = {
        "scenario": {"name": cfg.scenario.name, "K": cfg.scenario.K, "params": cfg.scenario.params},
        "corruption": cfg.corruption, "estimators": cfg.estimators, "options": cfg.options,
        "runs": cfg.runs, "seed": cfg.seed, "replicate_seeds": seeds,
        "measurement_hashes": hashes, "methods": methods, "failures": failures,
        "versions": {"python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
    }
    if out is not None:
        with open(out / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, default=_json_default)
        with open(out / "rmse_long.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "replicate", "k", "rmse"])
            for name in cfg.estimators:
                for r, E in enumerate(ests[name]):
                    se = np.sqrt(np.sum((T[r] - E) ** 2, axis=1))
                    for k, v in enumerate(se, start=1):
                        w.writerow([name, r, k, repr(float(v))])
    return summary


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)
