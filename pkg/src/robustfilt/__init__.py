"""Outlier- and bias-robust Bayesian filtering, smoothing and bounds."""
from .core import (CorruptionEvent, GaussianBelief, StateSpaceModel, Trajectory, linear_model,
                   make_rng, simulate)
from .gaussian import UtParams, ggf_predict, ggf_update, rts_backward, ukf_run
from .sor import SorConfig, sor_run
from .emorf import EmorfConfig, emorf_run, emors_run
from .map_ekf import OutlierHypothesisPrior, map_ekf_run
from .bdm import BdmConfig, BiasBelief, bdm_run
from .robust_pf import AbnormalityConfig, robust_pf_run
from .perception import HeuristicParams, register_point_clouds, robust_solve
from .bounds import bcrb_filter, bcrb_smoother

__version__ = "0.1.0"

__all__ = ["CorruptionEvent", "GaussianBelief", "StateSpaceModel", "Trajectory", "linear_model", "make_rng",
           "simulate", "UtParams", "ggf_predict", "ggf_update", "rts_backward", "ukf_run", "SorConfig",
           "sor_run", "EmorfConfig", "emorf_run", "emors_run", "OutlierHypothesisPrior", "map_ekf_run",
           "BdmConfig", "BiasBelief", "bdm_run", "AbnormalityConfig", "robust_pf_run", "HeuristicParams",
           "register_point_clouds", "robust_solve", "bcrb_filter", "bcrb_smoother"]
