"""Campaign configuration files (TOML).

Schema, all tables flat::

    [scenario]
    name = "turn-range-bearing"   # see scenarios.SCENARIOS
    K = 200
    # any scenario parameter override, e.g. sigma_rho = 10.0

    [corruption]
    mode = "gmm-outlier"          # see corrupt.MODES
    lam = 0.3
    gamma = [100.0, 1000.0]

    [estimators]
    names = ["ukf", "sor"]
    # shared estimator options, e.g. N = 2000, epsilon = 1e-6

    [campaign]
    runs = 25
    seed = 1
    out = "results"               # optional output directory
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .corrupt import MODES
from .estimators import ESTIMATORS
from .scenarios import ScenarioConfig


@dataclass
class CampaignConfig:
    scenario: ScenarioConfig
    corruption: dict = field(default_factory=lambda: {"mode": "none"})
    estimators: list = field(default_factory=lambda: ["ukf"])
    options: dict = field(default_factory=dict)
    runs: int = 1
    seed: int = 0
    out: Optional[str] = None

    def __post_init__(self):
        mode = self.corruption.get("mode", "none")
        if mode not in MODES:
            raise ValueError(f"unknown corruption mode {mode!r}")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad:
            raise ValueError(f"unknown estimators {bad}")
        if self.runs < 1:
            raise ValueError("runs must be positive")


def config_from_dict(d: dict) -> CampaignConfig:
    known = {"scenario", "corruption", "estimators", "campaign"}
    extra = set(d) - known
    if extra:
        raise ValueError(f"unknown config tables {sorted(extra)}")
    sc = dict(d.get("scenario", {}))
    if "name" not in sc:
        raise ValueError("[scenario] needs a name")
    name = sc.pop("name")
    K = int(sc.pop("K", 100))
    est = dict(d.get("estimators", {}))
    names = list(est.pop("names", ["ukf"]))
    camp = d.get("campaign", {})
    return CampaignConfig(
        scenario=ScenarioConfig(name, K, sc),
        corruption=dict(d.get("corruption", {"mode": "none"})),
        estimators=names, options=est,
        runs=int(camp.get("runs", 1)), seed=int(camp.get("seed", 0)), out=camp.get("out"))


def load_config(path: str | Path) -> CampaignConfig:
    with open(path, "rb") as fh:
        return config_from_dict(tomllib.load(fh))
