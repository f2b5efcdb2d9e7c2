"""Simulation, corruption, metrics and Monte-Carlo campaign tooling."""
from .campaign import run_campaign
from .config import CampaignConfig, config_from_dict, load_config
from .corrupt import MODES, Corruption, corrupt
from .estimators import ESTIMATORS, get_estimator
from .metrics import mse_state, rmse_pos, rmse_series, rmse_state, trmse, trmse_pos
from .scenarios import SCENARIOS, Scenario, ScenarioConfig, make_scenario

__all__ = ["run_campaign", "CampaignConfig", "config_from_dict", "load_config", "MODES", "Corruption",
           "corrupt", "ESTIMATORS", "get_estimator", "mse_state", "rmse_pos", "rmse_series", "rmse_state",
           "trmse", "trmse_pos", "SCENARIOS", "Scenario", "ScenarioConfig", "make_scenario"]
