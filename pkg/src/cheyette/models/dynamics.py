"""Local volatility, stochastic-volatility coefficients and the Cheyette drift."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..curves import Curve, g_fn, h_fn
from .settings import LocalVolForm, Measure, ModelParams, TForward


@dataclass(frozen=True)
class CurveContext:
    """What the local-vol forms need from the market: f(0, .) and lambda."""

    fcurve: Curve
    lam: float
    delta: float = 0.25

    def initfwd(self, t):
        return self.fcurve.inst_forward(t)


def _pwlin(x, a_knots, knots):
    """Continuous piecewise-linear interpolation, flat beyond the end knots."""
    x = np.asarray(x, dtype=float)
    n = len(knots)
    out = np.where(x < knots[0], a_knots[0] * np.ones_like(x), 0.0)
    for i in range(n - 1):
        slope = (a_knots[i + 1] - a_knots[i]) / (knots[i + 1] - knots[i])
        seg = a_knots[i] + slope * (x - knots[i] * np.ones_like(x))
        out = out + np.where((x >= knots[i]) & (x < knots[i + 1]), seg, 0.0)
    out = out + np.where(x >= knots[-1], a_knots[-1] * np.ones_like(x), 0.0)
    return out


def local_vol(form: LocalVolForm, params: ModelParams, t, x, y, ctx: CurveContext):
    """Local volatility sigma(t, x, y) in rate units."""
    kind = form.kind
    if kind == "LinSRLV":
        return params.a + params.b * (ctx.initfwd(t) + x)
    if kind == "LinXLV":
        return params.a + params.b * x
    fwd = ctx.initfwd(np.asarray(t) + ctx.delta) + h_fn(ctx.lam, ctx.delta) * (x + g_fn(ctx.lam, ctx.delta) * y)
    if kind == "LinBRLV":
        return params.a + params.b * fwd
    if not form.knots:
        raise ValueError("PwLinBRLV local vol needs knots")
    return _pwlin(fwd, params.a_knots, form.knots)


def cheyette_drift(measure: Measure, lam: float, x, y, sigma_total, T_horizon: float | None, t, total_variance=None):
    """Drift of x: y - lam x, less G(T - t) sigma^2 under the T-forward measure.

    ``total_variance`` replaces ``sigma_total**2`` when given (the CIR
    scripts carry the untruncated variance in the drift).
    """
    base = y - lam * x
    if isinstance(measure, TForward):
        T = measure.measT if T_horizon is None else T_horizon
        var = sigma_total * sigma_total if total_variance is None else total_variance
        return base - g_fn(lam, T - t) * var
    return base


def sv_step_terms(sv: str, params: ModelParams, measure: Measure, t, state, localvol_value, T_horizon=None):
    """(drift, loading on dW, loading on dZ) of the SV state for one Euler step.

    ``state`` holds ``z`` (variance) for the CIR forms or ``v`` (volatility)
    for QDLNSV. CIR forms use full truncation: the variance enters the
    mean reversion and diffusion through max(z, 0).
    """
    tf = isinstance(measure, TForward)
    T = (measure.measT if tf else None) if T_horizon is None else T_horizon
    if sv == "NoSV":
        return 0.0, 0.0, 0.0
    if sv in ("CIRSV", "CorCIRSV"):
        zp = np.maximum(state["z"], 0.0)
        drift = params.theta * (params.z0 - zp)
        vol = np.sqrt(zp)
        if sv == "CIRSV":
            return drift, 0.0, params.eta * vol
        beta, eps = params.cir_split()
        if tf:
            drift = drift - g_fn(params.lam, T - t) * localvol_value * beta * zp
        return drift, beta * vol, eps * vol
    if sv == "QDLNSV":
        v = state["v"]
        drift = (params.kappa1 + params.kappa2 * v) * (params.theta_vol - v)
        if tf:
            drift = drift - g_fn(params.lam, T - t) * localvol_value * params.beta * v * v
        return drift, params.beta * v, params.eps * v
    raise ValueError(f"unknown SV form {sv!r}")


def sv_multiplier(sv: str, state):
    """Multiplicative factor on the local vol: sqrt(z+) for CIR, v for QDLNSV, 1 otherwise."""
    if sv in ("CIRSV", "CorCIRSV"):
        return np.sqrt(np.maximum(state["z"], 0.0))
    if sv == "QDLNSV":
        return state["v"]
    return 1.0
