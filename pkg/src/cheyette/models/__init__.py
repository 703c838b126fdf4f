"""Catalogue of one-factor Cheyette SLV settings."""
from .dynamics import CurveContext, cheyette_drift, local_vol, sv_multiplier, sv_step_terms
from .native import NativePaths, native_simulate
from .scripts import builtin_script, script_environment, script_params
from .settings import (
    CALIBRATED_PARAMS,
    FIXED_PARAMS,
    GOOD_FIT,
    PARAM_BOUNDS,
    PWLIN_KNOT_MULTIPLIERS,
    SETTING_NAMES,
    LocalVolForm,
    ModelParams,
    ModelSetting,
    RiskNeutral,
    TForward,
    apply_values,
    default_params,
    feller_max_eta,
    free_values,
    setting,
    table_params,
    validate_params,
)

__all__ = [
    "CALIBRATED_PARAMS",
    "FIXED_PARAMS",
    "GOOD_FIT",
    "PARAM_BOUNDS",
    "PWLIN_KNOT_MULTIPLIERS",
    "SETTING_NAMES",
    "CurveContext",
    "LocalVolForm",
    "ModelParams",
    "ModelSetting",
    "NativePaths",
    "RiskNeutral",
    "TForward",
    "apply_values",
    "builtin_script",
    "cheyette_drift",
    "default_params",
    "feller_max_eta",
    "free_values",
    "local_vol",
    "native_simulate",
    "script_environment",
    "script_params",
    "setting",
    "sv_multiplier",
    "sv_step_terms",
    "table_params",
    "validate_params",
]
