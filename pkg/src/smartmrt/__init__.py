"""Hybrid SMART-MRT estimation.

Two-step weighted-and-replicated estimator for trials that embed a
micro-randomized treatment inside a sequential multiple assignment design,
with sandwich inference, reference estimators, a simulator with known
ground truth, and a benchmark harness.
"""

from .baselines import BaselineFit, baseline_contrast, fit_wcls, fit_wr
from .design import DesignSpec, DtrRegime, Trajectory, TrialData
from .errors import (ContrastError, NumericalError, PositivityError, RankDeficientError,
                     SmartMrtError, ValidationError)
from .estimator import FitResult, fit_hybrid, fit_rows
from .inference import Contrast, make_contrast
from .io import read_trial_csv, write_trial_csv
from .model import ModelSpec, example1_spec, mbridge_spec, stage_split_spec
from .rows import replicate
from .sim import SimConfig, simulate, simulate_one
from .truth import true_effect_analytic, true_effect_mc

__all__ = [
    "BaselineFit", "baseline_contrast", "fit_wcls", "fit_wr",
    "DesignSpec", "DtrRegime", "Trajectory", "TrialData",
    "ContrastError", "NumericalError", "PositivityError", "RankDeficientError",
    "SmartMrtError", "ValidationError",
    "FitResult", "fit_hybrid", "fit_rows",
    "Contrast", "make_contrast",
    "read_trial_csv", "write_trial_csv",
    "ModelSpec", "example1_spec", "mbridge_spec", "stage_split_spec",
    "replicate",
    "SimConfig", "simulate", "simulate_one",
    "true_effect_analytic", "true_effect_mc",
]
__version__ = "0.1.0"
