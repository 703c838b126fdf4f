"""Caplet calibration by differential evolution under common random numbers."""
from .config import CalibrationConfig, ConfigError, load_config, params_from_config, parse_config, result_report, setting_config, write_report
from .de import DEResult, DESettings, differential_evolution, reflect
from .problem import (
    PENALTY,
    CalibrationProblem,
    CalibrationResult,
    Objective,
    SimSettings,
    best_seed_calibrate,
    bootstrap_calibrate,
    de_optimize,
    derive_seeds,
    inverse_variance_weights,
    validate_candidate,
)

__all__ = [
    "PENALTY",
    "CalibrationConfig",
    "CalibrationProblem",
    "CalibrationResult",
    "ConfigError",
    "DEResult",
    "DESettings",
    "Objective",
    "SimSettings",
    "best_seed_calibrate",
    "bootstrap_calibrate",
    "de_optimize",
    "derive_seeds",
    "differential_evolution",
    "inverse_variance_weights",
    "load_config",
    "params_from_config",
    "parse_config",
    "reflect",
    "result_report",
    "setting_config",
    "validate_candidate",
    "write_report",
]
