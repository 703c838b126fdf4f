"""JSON calibration configs and result reports.

A config looks like::

    {
      "setting": "LinXLV + QDLNSV",
      "knots": [0.0166, 0.0175, 0.0184],          # PwLinBRLV only, optional
      "fixed": {"lam": 0.025},                     # overrides of the tabulated fixed values
      "bounds": {"a": [-0.1, 0.1], "b": [-0.1, 0.1]},   # defaults to the tabulated box
      "curves": {"forecasting": "f.csv", "discounting": "d.csv"},
      "quotes": "quotes.csv",
      "weights": null,
      "simulation": {"n_paths": 65536, "validation_paths": 65536, "dt_max": 0.041666666666666664,
                     "antithetic": true, "backend": "numba"},
      "de": {"population": 24, "max_generations": 60, "stagnation": 10, "stagnation_rtol": 0.01},
      "replications": 3,
      "seed": 0,
      "mode": "best_seed",                         # or "bootstrap"
      "threshold": null                            # bootstrap flagging threshold
    }

Relative paths resolve against the config file's directory.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

from ..curves import Curve, read_curve
from ..engine.simulate import Schedule
from ..models.settings import (
    PARAM_BOUNDS,
    SETTING_NAMES,
    LocalVolForm,
    ModelParams,
    ModelSetting,
    default_params,
    setting as tabulated_setting,
)
from ..pricing import atm_strike, format_diff_table, read_quotes
from .de import DESettings
from .problem import CalibrationProblem, CalibrationResult, SimSettings


class ConfigError(ValueError):
    """The calibration config is malformed or inconsistent."""


@dataclass
class CalibrationConfig:
    problems: list
    de: DESettings
    replications: int
    seed: int
    mode: str
    threshold: float | None
    source: dict


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def build_setting(name: str, knots=None, atm: float | None = None) -> ModelSetting:
    if name in SETTING_NAMES:
        s = tabulated_setting(name, atm)
    else:
        s = ModelSetting.from_name(name)
    if knots:
        s = ModelSetting(LocalVolForm(s.local_vol.kind, tuple(float(k) for k in knots)), s.sv)
    return s


def _de_settings(d: dict) -> DESettings:
    known = {f.name for f in fields(DESettings)}
    bad = set(d) - known
    if bad:
        raise ConfigError(f"unknown DE settings: {', '.join(sorted(bad))}")
    kw = dict(d)
    if "f_range" in kw:
        kw["f_range"] = tuple(kw["f_range"])
    return DESettings(**kw)


def parse_config(cfg: dict, base: Path | str = ".") -> CalibrationConfig:
    base = Path(base)
    try:
        name = cfg["setting"]
        curves = cfg["curves"]
        fcurve = read_curve(_resolve(base, curves["forecasting"]), "forecasting")
        dcurve = read_curve(_resolve(base, curves["discounting"]), "discounting")
        quotes = read_quotes(_resolve(base, cfg["quotes"]))
    except KeyError as exc:
        raise ConfigError(f"config lacks {exc}") from None
    try:
        sim = SimSettings(**cfg.get("simulation", {}))
        de = _de_settings(cfg.get("de", {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    mats = sorted({(q.maturity, q.tenor) for q in quotes})
    T1, tenor = mats[0]
    setting = build_setting(name, cfg.get("knots"), atm_strike(fcurve, T1, T1 + tenor))
    base_params = default_params(name) if name in SETTING_NAMES else ModelParams(lam=cfg.get("fixed", {}).get("lam", 0.03))
    fixed = dict(cfg.get("fixed", {}))
    try:
        base_params = base_params.replace(**{k: (tuple(v) if k == "a_knots" else v) for k, v in fixed.items()})
    except TypeError as exc:
        raise ConfigError(f"bad fixed parameter: {exc}") from None
    bounds = cfg.get("bounds") or PARAM_BOUNDS.get(name)
    if not bounds:
        raise ConfigError("no bounds given and no tabulated default for this setting")
    bounds = {k: tuple(v) for k, v in bounds.items()}
    for k, (lo, hi) in bounds.items():
        if not lo < hi:
            raise ConfigError(f"bounds of '{k}' need lower < upper, got [{lo}, {hi}]")
    mode = cfg.get("mode", "best_seed")
    if mode not in ("best_seed", "bootstrap"):
        raise ConfigError(f"unknown mode {mode!r}")
    if mode == "best_seed" and len(mats) != 1:
        raise ConfigError("best_seed mode takes quotes of a single maturity; use mode 'bootstrap'")
    weights = cfg.get("weights")
    problems = []
    for m, tn in mats:
        qs = [q for q in quotes if (q.maturity, q.tenor) == (m, tn)]
        w = None
        if weights is not None:
            if len(mats) > 1:
                raise ConfigError("weights are only supported for single-maturity configs")
            w = weights
        try:
            problems.append(CalibrationProblem(setting, base_params, bounds, qs, fcurve, dcurve, w, sim))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return CalibrationConfig(
        problems=problems,
        de=de,
        replications=int(cfg.get("replications", de.replications)),
        seed=int(cfg.get("seed", 0)),
        mode=mode,
        threshold=cfg.get("threshold"),
        source=cfg,
    )


def load_config(path: str | Path) -> CalibrationConfig:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(cfg, path.parent)


def _jsonable(v: Any):
    if isinstance(v, Schedule):
        return {"breaks": list(v.breaks), "values": [_jsonable(x) for x in v.values]}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if hasattr(v, "item"):
        return v.item()
    return v


def result_report(results: list[CalibrationResult]) -> dict:
    """Structured report: parameters, diff table, fit flag and optimizer trace per maturity."""
    out = []
    for r in results:
        out.append(
            {
                "maturity": r.maturity,
                "values": _jsonable(r.values),
                "params": _jsonable(asdict(r.params)),
                "objective": r.objective,
                "validated_objective": r.validated_objective,
                "good_fit": r.good_fit,
                "flagged": r.flagged,
                "stop_reason": r.stop_reason,
                "n_evals": r.n_evals,
                "seeds": r.seeds,
                "diffs": [asdict(d) for d in r.diffs],
                "ensemble_diffs": [asdict(d) for d in r.ensemble_diffs] if r.ensemble_diffs else None,
                "replications": _jsonable(r.replications),
                "trace": [list(t) for t in r.trace],
            }
        )
    return {"results": out, "good_fit": all(r.good_fit for r in results)}


def write_report(results: list[CalibrationResult], path: str | Path) -> list[Path]:
    """JSON report plus one diff table per maturity; returns the written paths."""
    path = Path(path)
    rep = result_report(results)
    path.write_text(json.dumps(rep, indent=2, sort_keys=True, default=float) + "\n")
    written = [path]
    for i, r in enumerate(results):
        tp = path.with_name(f"{path.stem}_diffs_{i}.csv")
        tp.write_text(format_diff_table(r.diffs))
        written.append(tp)
    return written


def setting_config(name: str, params: ModelParams, knots=()) -> dict:
    """Model setting and parameters as a config section (JSON-ready)."""
    return {"setting": name, "knots": list(knots), "params": _jsonable(asdict(params))}


def params_from_config(d: dict) -> tuple[ModelSetting, ModelParams]:
    """Inverse of :func:`setting_config`."""
    try:
        name = d["setting"]
        raw = dict(d["params"])
    except KeyError as exc:
        raise ConfigError(f"parameter file lacks {exc}") from None
    s = build_setting(name, d.get("knots") or None)

    def value(v):
        if isinstance(v, dict) and "breaks" in v:
            return Schedule(tuple(v["breaks"]), tuple(value(x) for x in v["values"]))
        if isinstance(v, list):
            return tuple(value(x) for x in v)
        return v

    known = set(ModelParams.field_names())
    bad = set(raw) - known
    if bad:
        raise ConfigError(f"unknown model parameters: {', '.join(sorted(bad))}")
    try:
        p = ModelParams(**{k: value(v) for k, v in raw.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return s, p
