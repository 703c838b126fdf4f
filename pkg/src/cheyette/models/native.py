"""Hand-written Euler steppers for the tabulated settings.

These do not go through the scripting layer at all; they exist to cross-check
the builtin scripts path by path. Conventions match the scripts: increments
read start-of-step values, the local volatility is evaluated at the start of
the step, CIR variance is fully truncated in its own coefficients, and the
rate drifts carry the raw variance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..curves import Curve
from ..engine.simulate import Schedule
from .dynamics import CurveContext, cheyette_drift, local_vol, sv_multiplier, sv_step_terms
from .settings import ModelParams, ModelSetting, RiskNeutral


def _params_at(p: ModelParams, t: float) -> ModelParams:
    kw = {}
    for name in ModelParams.field_names():
        v = getattr(p, name)
        if isinstance(v, Schedule):
            kw[name] = v.at(t)
        elif name == "a_knots":
            kw[name] = tuple(x.at(t) if isinstance(x, Schedule) else x for x in v)
    return p.replace(**kw) if kw else p


@dataclass
class NativePaths:
    times: np.ndarray
    x: np.ndarray  # (n_steps + 1, n_paths)
    y: np.ndarray
    sv: np.ndarray | None  # variance z (CIR) or volatility (QDLNSV)
    lnmma: np.ndarray | None

    def at(self, t: float, name: str = "x"):
        i = int(np.argmin(np.abs(self.times - t)))
        return getattr(self, name)[i]


def native_simulate(
    setting: ModelSetting,
    params: ModelParams,
    measure,
    times,
    z: np.ndarray,
    fcurve: Curve,
    dcurve: Curve | None = None,
) -> NativePaths:
    """Simulate on ``times`` with full-batch normals ``z`` of shape (steps, brownians, paths)."""
    times = np.asarray(times, dtype=float)
    n_steps = times.size - 1
    z = np.asarray(z, dtype=float)
    n = z.shape[2]
    if z.shape[0] < n_steps or z.shape[1] != setting.n_brownians:
        raise ValueError("normals do not match the grid and setting")
    sv = setting.sv
    ctx = CurveContext(fcurve, params.lam, params.delta)
    rn = isinstance(measure, RiskNeutral)

    x = np.zeros(n)
    y = np.zeros(n)
    s = np.full(n, params.z0 if setting.is_cir else params.vtheta0) if sv != "NoSV" else None
    lnm = np.zeros(n) if rn else None
    xs, ys, ss, ms = [x], [y], [s], [lnm]
    for k in range(n_steps):
        t0, t1 = times[k], times[k + 1]
        dt = t1 - t0
        sq = np.sqrt(dt)
        p = _params_at(params, t0)
        dW = sq * z[k, 0]
        dZ = sq * z[k, 1] if sv != "NoSV" else 0.0
        lv = local_vol(setting.local_vol, p, t0, x, y, ctx)
        if sv in ("CIRSV", "CorCIRSV"):
            state = {"z": s}
            var_factor = s
        elif sv == "QDLNSV":
            state = {"v": s}
            var_factor = s * s
        else:
            state = {}
            var_factor = 1.0
        mult = sv_multiplier(sv, state)
        drift_x = cheyette_drift(measure, p.lam, x, y, lv * mult, None, t0, total_variance=lv * lv * var_factor)
        x_new = x + drift_x * dt + lv * mult * dW
        y_new = y + (lv * lv * var_factor - 2.0 * p.lam * y) * dt
        if sv != "NoSV":
            drift_s, load_w, load_z = sv_step_terms(sv, p, measure, t0, state, lv)
            s = s + drift_s * dt + load_w * dW + load_z * dZ
        if rn:
            lnm = lnm + (dcurve.inst_forward(t0) + x) * dt
        x, y = x_new, y_new
        xs.append(x)
        ys.append(y)
        ss.append(s)
        ms.append(lnm)
    return NativePaths(
        times,
        np.array(xs),
        np.array(ys),
        np.array(ss) if sv != "NoSV" else None,
        np.array(ms) if rn else None,
    )
