"""Marginal structural models with partially observed time-varying
confounders, plus a simulation laboratory for comparing missing-data
strategies."""

from .data import PanelDataset, complete_case_mask, load_panel_csv, pattern_of, write_panel_csv
from .dgp import DGPCoefficients, ScenarioConfig, apply_missingness, generate_full, true_effects
from .msm import EffectEstimates, WeightVector, balance_diagnostics, fit_msm, treatment_weights

__version__ = "0.1.0"

__all__ = [
    "DGPCoefficients",
    "EffectEstimates",
    "PanelDataset",
    "ScenarioConfig",
    "WeightVector",
    "apply_missingness",
    "balance_diagnostics",
    "complete_case_mask",
    "fit_msm",
    "generate_full",
    "load_panel_csv",
    "pattern_of",
    "treatment_weights",
    "true_effects",
    "write_panel_csv",
]
