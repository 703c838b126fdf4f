import math

import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from cheyette.curves import Curve, g_fn
from cheyette.dsl import ExternFunction, check, parse, print_script
from cheyette.engine.rng import InjectedNormals, normal_block
from cheyette.engine.simulate import SimConfig, compile_program, simulate
from cheyette.models import (
    CALIBRATED_PARAMS,
    PARAM_BOUNDS,
    SETTING_NAMES,
    CurveContext,
    LocalVolForm,
    ModelParams,
    ModelSetting,
    RiskNeutral,
    TForward,
    builtin_script,
    cheyette_drift,
    default_params,
    feller_max_eta,
    local_vol,
    native_simulate,
    script_environment,
    script_params,
    setting,
    sv_step_terms,
    table_params,
    validate_params,
)

FLAT2 = CurveContext(Curve.flat(0.02, label="forecasting"), 0.03)


def test_local_vol_examples():
    p = ModelParams(lam=0.03, a=0.00762, b=-0.15945)
    v = local_vol(LocalVolForm("LinBRLV"), p, 1.0, 0.0, 0.0, FLAT2)
    assert v == pytest.approx(0.00762 - 0.15945 * 0.02, rel=1e-12)
    assert v == pytest.approx(0.0044310, abs=1e-7)
    assert local_vol(LocalVolForm("LinXLV"), p, 1.0, 0.0, 0.0, FLAT2) == 0.00762
    form = LocalVolForm("PwLinBRLV", (0.019, 0.02, 0.021))
    pk = ModelParams(lam=0.03, a_knots=(0.006, 0.0036, 0.0051))
    # benchmark forward = 0.02 + h(delta) x with y = 0; pick x to hit targets
    h = math.exp(-0.03 * 0.25)
    assert local_vol(form, pk, 1.0, np.array([-0.005 / h]), 0.0, FLAT2)[0] == 0.006
    assert local_vol(form, pk, 1.0, np.array([0.0]), 0.0, FLAT2)[0] == pytest.approx(0.0036, abs=1e-15)
    assert local_vol(form, pk, 1.0, np.array([0.01]), 0.0, FLAT2)[0] == 0.0051


def test_local_vol_srlv():
    p = ModelParams(lam=0.03, a=0.01, b=0.2)
    assert local_vol(LocalVolForm("LinSRLV"), p, 0.5, 0.003, 0.0, FLAT2) == pytest.approx(0.01 + 0.2 * 0.023)


@given(st.lists(st.floats(0.0, 0.05), min_size=2, max_size=6), st.floats(0.005, 0.05), st.floats(0.0005, 0.01))
@hsettings(max_examples=80, deadline=None)
def test_pwlin_continuous_at_knots(avals, k0, step):
    knots = tuple(k0 + i * step for i in range(len(avals)))
    form = LocalVolForm("PwLinBRLV", knots)
    p = ModelParams(lam=0.03, a_knots=tuple(avals))
    ctx = CurveContext(Curve.flat(0.0, label="forecasting"), 0.03, 0.25)
    h = math.exp(-0.03 * 0.25)
    slope = max(abs(b - a) for a, b in zip(avals, avals[1:])) / step
    for k, a in zip(knots, avals):
        xs = np.array([k - 1e-13, k, k + 1e-13]) / h
        vals = local_vol(form, p, 0.0, xs, 0.0, ctx)
        assert np.allclose(vals, a, rtol=0, atol=slope * 1e-12 + 1e-14)


@given(st.floats(-0.05, 0.05), st.floats(0.0, 1e-3), st.floats(0.0, 5.0), st.floats(0.001, 0.02))
@hsettings(max_examples=60, deadline=None)
def test_constant_forms_agree(x, y, t, a):
    p = ModelParams(lam=0.03, a=a, b=0.0)
    vals = [local_vol(LocalVolForm(k), p, t, x, y, FLAT2) for k in ("LinSRLV", "LinBRLV", "LinXLV")]
    assert vals[0] == vals[1] == vals[2] == a


def test_sv_step_terms_examples():
    p = ModelParams(lam=0.03, theta=0.2, eta=0.5, z0=1.0)
    drift, w, z = sv_step_terms("CIRSV", p, RiskNeutral(), 0.0, {"z": 1.0}, 0.01)
    assert drift == 0.0 and w == 0.0 and z == 0.5
    assert sv_step_terms("CIRSV", p, TForward(2.0), 0.3, {"z": 1.7}, 0.01) == sv_step_terms(
        "CIRSV", p, RiskNeutral(), 0.3, {"z": 1.7}, 0.01
    )
    q = ModelParams(lam=0.025, kappa1=0.25, kappa2=0.25, beta=0.1, eps=0.5)
    assert sv_step_terms("QDLNSV", q, RiskNeutral(), 0.0, {"v": 1.0}, 0.01)[0] == 0.0
    # rho = 0 makes CorCIRSV coincide with CIRSV
    c = ModelParams(lam=0.03, theta=0.2, eta=0.4, rho=0.0)
    for meas in (RiskNeutral(), TForward(1.25)):
        d1, w1, z1 = sv_step_terms("CorCIRSV", c, meas, 0.5, {"z": 0.8}, 0.01)
        d2, w2, z2 = sv_step_terms("CIRSV", c, meas, 0.5, {"z": 0.8}, 0.01)
        assert (d1, w1, z1) == (d2, w2, z2)


def test_sv_full_truncation_never_negative_loading():
    p = ModelParams(lam=0.03, theta=0.2, eta=0.6)
    drift, _, load = sv_step_terms("CIRSV", p, RiskNeutral(), 0.0, {"z": np.array([-0.3, 0.0, 0.4])}, 0.01)
    assert np.all(load >= 0)
    assert drift[0] == pytest.approx(0.2)


def test_cheyette_drift_examples():
    assert cheyette_drift(RiskNeutral(), 0.03, 0.0, 0.0, 0.02, None, 0.0) == 0.0
    tf = cheyette_drift(TForward(1.25), 0.03, 0.01, 0.0001, 0.008, None, 1.25)
    assert tf == cheyette_drift(RiskNeutral(), 0.03, 0.01, 0.0001, 0.008, None, 1.25)
    v = cheyette_drift(TForward(2.0), 0.03, 0.01, 0.0001, 0.008, None, 1.0)
    assert v == pytest.approx(0.0001 - 0.0003 - g_fn(0.03, 1.0) * 6.4e-5, rel=1e-14)
    assert v == pytest.approx(-0.000263, abs=5e-7)


def test_feller_max_eta():
    assert feller_max_eta(0.2, 1.0) == pytest.approx(math.sqrt(0.4))
    assert round(feller_max_eta(0.2, 1.0), 2) == 0.63
    assert feller_max_eta(0.5, 1.0) == 1.0
    assert feller_max_eta(0.2, 0.0) == 0.0


def test_validate_params():
    s = setting("LinBRLV + CIRSV")
    validate_params(s, default_params("LinBRLV + CIRSV", {"eta": 0.63}))
    with pytest.raises(ValueError, match="Feller"):
        validate_params(s, default_params("LinBRLV + CIRSV", {"eta": 0.64}))
    with pytest.raises(ValueError):
        validate_params(setting("LinBRLV + CorCIRSV"), default_params("LinBRLV + CorCIRSV", {"rho": 1.0}))
    with pytest.raises(ValueError):
        LocalVolForm("PwLinBRLV", (0.02, 0.01))
    with pytest.raises(ValueError):
        LocalVolForm("PwLinBRLV", (0.02,))
    with pytest.raises(ValueError):
        ModelSetting("LinBRLV", "Heston")
    with pytest.raises(ValueError):
        TForward(0.0)
    pw = setting("PwLinBRLV + CIRSV", 0.02)
    with pytest.raises(ValueError):
        validate_params(pw, default_params("PwLinBRLV + CIRSV", {"a1": -0.01, "a2": 0.01, "a3": 0.01}))


def test_setting_names_and_knots():
    assert len(SETTING_NAMES) == 8
    pw = setting("PwLinBRLV + CIRSV", 0.02)
    assert pw.local_vol.knots == pytest.approx((0.019, 0.02, 0.021))
    assert setting("LinBRLV").sv == "NoSV"
    assert ModelSetting.from_name("LinXLV+QDLNSV").name == "LinXLV + QDLNSV"


def test_builtin_script_examples(pwlin_script, linx_script):
    s2 = builtin_script(setting("PwLinBRLV + CIRSV", 0.02), TForward(1.25))
    assert "d_ratevariance" in s2 and "positivepart(ratevariance)" in s2
    s3 = builtin_script(setting("LinXLV + QDLNSV"), TForward(1.25))
    assert "d_W*d_Z = rho" in s3
    s1 = builtin_script(setting("LinBRLV"), TForward(1.25))
    assert "d_Z" not in s1
    # structural match with the reference caplet scripts
    assert print_script(parse(s2)) == print_script(parse(pwlin_script))
    assert print_script(parse(s3)) == print_script(parse(linx_script))


def test_builtin_script_rejects_unknown():
    with pytest.raises(ValueError):
        builtin_script(ModelSetting(LocalVolForm("LinXLV"), "CIRSV"), TForward(1.0))
    with pytest.raises(TypeError):
        builtin_script(setting("LinBRLV"), "annuity")


def test_script_params_normalisation():
    p = table_params("LinBRLV + CIRSV").replace(z0=2.0)
    with pytest.raises(ValueError):
        script_params(setting("LinBRLV + CIRSV"), p, TForward(1.25), 1.0)


def _dsl_vs_native(name, measure, n_paths=64, dt=1 / 96):
    fc, dc = Curve.flat(0.0175, label="forecasting"), Curve.flat(0.015)
    T1, d = 1.0, 0.25
    st_ = setting(name, 0.0175)
    p = table_params(name)
    prog = check(parse(builtin_script(st_, measure)), script_environment(st_, measure, [0.015, 0.02], T1, d))
    plan = compile_program(prog, dt)
    z = normal_block(11, plan.n_steps, st_.n_brownians, n_paths)
    cfg = SimConfig(
        n_paths=n_paths,
        params=script_params(st_, p, measure, 1.004),
        externs={"initfwd": ExternFunction.from_curve(fc), "discfwd": ExternFunction.from_curve(dc)},
        normals=InjectedNormals(z),
        record_states=True,
    )
    out = simulate(plan, cfg)
    nat = native_simulate(st_, p, measure, plan.grid.times, z, fc, dc)
    pairs = [(out.states["ratex"], nat.x), (out.states["ratey"], nat.y)]
    sv = {"CIRSV": "ratevariance", "CorCIRSV": "ratevariance", "QDLNSV": "sigma"}.get(st_.sv)
    if sv:
        pairs.append((out.states[sv], nat.sv))
    if nat.lnmma is not None:
        pairs.append((out.states["lnmma"], nat.lnmma))
    return max(float(np.max(np.abs(a - b))) for a, b in pairs)


@pytest.mark.parametrize("name", SETTING_NAMES)
def test_builtin_script_matches_native_stepper(name):
    for measure in (TForward(1.25), RiskNeutral()):
        assert _dsl_vs_native(name, measure) <= 1e-12


def test_corcir_with_zero_rho_matches_cir_pathwise():
    fc, dc = Curve.flat(0.0175, label="forecasting"), Curve.flat(0.015)
    p = default_params("LinBRLV + CorCIRSV", {"a": 0.008, "b": -0.1, "eta": 0.4, "rho": 0.0})
    z = normal_block(2, 48, 2, 200)
    times = np.linspace(0, 1, 49)
    a = native_simulate(setting("LinBRLV + CorCIRSV"), p, TForward(1.25), times, z, fc, dc)
    b = native_simulate(setting("LinBRLV + CIRSV"), p, TForward(1.25), times, z, fc, dc)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.sv, b.sv)


def test_table_fixtures_consistent():
    for name in SETTING_NAMES:
        box = PARAM_BOUNDS[name]
        vals = CALIBRATED_PARAMS[name]
        assert set(vals) == set(box)
        for k, v in vals.items():
            lo, hi = box[k]
            assert lo <= v <= hi, (name, k)
        if "eta" in box:
            assert box["eta"][1] <= feller_max_eta(0.2, 1.0)
