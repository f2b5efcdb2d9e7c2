"""Command-line entry point: ``robustfilt <subcommand> [options]``.

Subcommands
-----------
simulate   clean and corrupted trajectory of one replicate to CSV
filter     Monte-Carlo campaign with filtering estimators
smooth     Monte-Carlo campaign with the EMORS smoother (plus any configured estimators)
bench      Monte-Carlo campaign exactly as configured
bounds     filtering/smoothing BCRB of the perfect rejector for a scenario
register   robust 3-D registration, synthetic benchmark or a correspondence file
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..bounds import bcrb_filter, bcrb_smoother
from ..core import make_rng, simulate
from ..perception import (HeuristicParams, load_correspondences, register_point_clouds,
                          synthetic_registration)
from .campaign import build_replicate, run_campaign
from .config import CampaignConfig, config_from_dict, load_config
from .scenarios import SCENARIOS, ScenarioConfig, make_scenario

logger = logging.getLogger("robustfilt")

FILTERS = ("ukf", "sor", "emorf")


def _load(args) -> CampaignConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = config_from_dict({"scenario": {"name": args.scenario, "K": args.K}})
    if args.seed is not None:
        cfg.seed = args.seed
    if args.runs is not None:
        if args.runs < 1:
            raise ValueError("--runs must be positive")
        cfg.runs = args.runs
    if args.out is not None:
        cfg.out = args.out
    return cfg


def _emit(args, payload: dict) -> None:
    if not args.quiet:
        print(json.dumps(payload, indent=2))


def _brief(summary: dict) -> dict:
    return {name: {"median_rmse_state": rec["aggregates"]["rmse_state"]["median"],
                   "trmse": rec["trmse"], "mean_time_s": rec["mean_time_s"]}
            for name, rec in summary["methods"].items()}


def cmd_simulate(args) -> int:
    cfg = _load(args)
    sc, co = build_replicate(cfg, cfg.seed)
    out = Path(cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    K, n = sc.truth.states.shape
    m = co.measurements.shape[1]
    path = out / "trajectory.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k"] + [f"truth_{i + 1}" for i in range(n)] + [f"clean_{j + 1}" for j in range(m)]
                   + [f"y_{j + 1}" for j in range(m)] + [f"flag_{j + 1}" for j in range(m)])
        for k in range(K):
            w.writerow([k + 1] + [repr(float(v)) for v in sc.truth.states[k]]
                       + [repr(float(v)) for v in sc.truth.measurements[k]]
                       + [repr(float(v)) for v in co.measurements[k]] + [int(f) for f in co.flags[k]])
    with open(out / "corruption_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "dim", "kind", "value"])
        for ev in co.log:
            w.writerow([ev.step, ev.dim, ev.kind, repr(float(ev.value))])
    _emit(args, {"trajectory": str(path), "events": len(co.log)})
    return 0


def _campaign(args, names: Optional[Sequence[str]] = None) -> int:
    cfg = _load(args)
    if names is not None:
        cfg.estimators = list(dict.fromkeys(names))
        cfg.__post_init__()
    summary = run_campaign(cfg, cfg.out, quiet=args.quiet)
    _emit(args, {"methods": _brief(summary), "failures": summary["failures"]})
    return 1 if summary["failures"] else 0


def cmd_filter(args) -> int:
    names = args.estimators.split(",") if args.estimators else None
    if names is None and not args.config:
        names = list(FILTERS)
    return _campaign(args, names)


def cmd_smooth(args) -> int:
    base = args.estimators.split(",") if args.estimators else (None if args.config else ["emorf"])
    if base is None:
        base = _load(args).estimators
    return _campaign(args, list(base) + ["emors"])


def cmd_bench(args) -> int:
    return _campaign(args, None)


def cmd_bounds(args) -> int:
    cfg = _load(args)
    sc0 = make_scenario(cfg.scenario, cfg.seed)
    model = sc0.model
    rng = make_rng([cfg.seed, 3])
    Ns = args.samples
    L = np.linalg.cholesky(sc0.prior.cov + 1e-12 * np.eye(model.n))
    xs = np.empty((cfg.scenario.K + 1, Ns, model.n))
    for s in range(Ns):
        x0 = sc0.prior.mean + L @ rng.standard_normal(model.n)
        xs[0, s] = x0
        xs[1:, s] = simulate(model, x0, cfg.scenario.K, int(rng.integers(2 ** 31))).states
    keep = None
    if cfg.corruption.get("mode", "none") != "none":
        keep = ~build_replicate(cfg, cfg.seed)[1].outlier_mask
    bound = bcrb_filter(model, xs, np.linalg.inv(sc0.prior.cov), keep_schedule=keep)
    _, Bs = bcrb_smoother(bound)
    out = Path(cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bcrb.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "trace_filter", "trace_smoother"])
        for k, (bf, bs) in enumerate(zip(bound.bcrb, Bs), start=1):
            w.writerow([k, repr(float(np.trace(bf))), repr(float(np.trace(bs)))])
    _emit(args, {"mean_trace_filter": float(np.mean([np.trace(b) for b in bound.bcrb])),
                 "mean_trace_smoother": float(np.mean([np.trace(b) for b in Bs]))})
    return 0


def cmd_register(args) -> int:
    kinds = args.heuristics.split(",")
    if args.input:
        P, Q = load_correspondences(args.input)
        res = {}
        for kind in kinds:
            r = register_point_clouds(P, Q, HeuristicParams(kind=kind), noise_sigma=args.noise)
            res[kind] = {"R": r.R.tolist(), "t": r.t.tolist(), "iterations": r.iterations}
        _emit(args, res)
        return 0
    runs = args.runs or 20
    seed = args.seed if args.seed is not None else 0
    ratios = [float(v) for v in args.ratios.split(",")]
    rows = []
    for ratio in ratios:
        for run in range(runs):
            P, Q, R, t, _ = synthetic_registration(args.m, ratio, make_rng([seed, run, int(ratio * 1000)]),
                                                   noise_sigma=args.noise)
            for kind in kinds:
                t0 = time.perf_counter()
                r = register_point_clouds(P, Q, HeuristicParams(kind=kind), args.noise, R, t)
                rows.append((ratio, run, kind, r.rotation_error_deg, r.translation_error,
                             time.perf_counter() - t0))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "registration.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ratio", "run", "heuristic", "rot_err_deg", "trans_err", "time_s"])
            w.writerows(rows)
    med = {}
    for ratio in ratios:
        for kind in kinds:
            sel = [r for r in rows if r[0] == ratio and r[2] == kind]
            med[f"{kind}@{ratio}"] = {"median_rot_deg": float(np.median([r[3] for r in sel])),
                                      "median_trans": float(np.median([r[4] for r in sel]))}
    _emit(args, med)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML campaign file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--runs", type=int, help="Monte-Carlo replicates")
    common.add_argument("--quiet", action="store_true", help="suppress progress and summaries")

    p = argparse.ArgumentParser(prog="robustfilt", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    def scen(sp):
        sp.add_argument("--scenario", default="turn-range-bearing", choices=SCENARIOS,
                        help="scenario when no --config is given")
        sp.add_argument("-K", type=int, default=100, help="steps when no --config is given")
        return sp

    scen(sub.add_parser("simulate", parents=[common], help="write one corrupted trajectory"))
    f = scen(sub.add_parser("filter", parents=[common], help="filtering campaign"))
    f.add_argument("--estimators", help="comma-separated estimator names")
    s = scen(sub.add_parser("smooth", parents=[common], help="smoothing campaign"))
    s.add_argument("--estimators", help="comma-separated estimators to compare against")
    scen(sub.add_parser("bench", parents=[common], help="campaign as configured"))
    b = scen(sub.add_parser("bounds", parents=[common], help="BCRB of the perfect rejector"))
    b.add_argument("--samples", type=int, default=100, help="Monte-Carlo trajectories")
    r = sub.add_parser("register", parents=[common], help="robust point-cloud registration")
    r.add_argument("--input", help="correspondence file (px py pz qx qy qz per line)")
    r.add_argument("--heuristics", default="EROR,ESOR,ASOR")
    r.add_argument("--ratios", default="0.0,0.3,0.5,0.7")
    r.add_argument("-m", type=int, default=100, help="correspondences per synthetic run")
    r.add_argument("--noise", type=float, default=1e-3, help="inlier noise standard deviation")
    return p


_COMMANDS = {"simulate": cmd_simulate, "filter": cmd_filter, "smooth": cmd_smooth, "bench": cmd_bench,
             "bounds": cmd_bounds, "register": cmd_register}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, np.linalg.LinAlgError) as exc:
        print(f"robustfilt: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
