import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import ndtri

from cheyette.curves import Curve
from cheyette.dsl import CorrelationError, Environment, ExternFunction, check, parse
from cheyette.engine.codegen import CodegenError, generate_code, program_fingerprint, run_generated, write_generated
from cheyette.engine.grid import build_grid
from cheyette.engine.rng import (
    InjectedNormals,
    PhiloxNormals,
    inverse_normal_cdf,
    normal_at,
    normal_block,
    normal_step,
    philox4x32,
    uniforms,
)
from cheyette.engine.simulate import PlanError, Schedule, SimConfig, SimulationError, compile_program, mc_estimate, simulate
from cheyette.models import SETTING_NAMES, RiskNeutral, TForward, builtin_script, script_environment, script_params, setting, table_params

# -- random numbers -------------------------------------------------------------

# Published Random123 known-answer vectors for Philox4x32-10.
PHILOX_KAT = [
    ((0, 0, 0, 0, 0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 6, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    (
        (0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344, 0xA4093822, 0x299F31D0),
        (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1),
    ),
]


@pytest.mark.parametrize("inp,out", PHILOX_KAT)
def test_philox_known_answers(inp, out):
    assert tuple(int(v) for v in philox4x32(*inp)) == out


def test_uniforms_open_interval():
    u = uniforms(7, 200_000)
    assert u.min() > 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 5 * math.sqrt(1 / 12 / u.size)


def test_inverse_normal_cdf_accuracy():
    p = np.concatenate([np.logspace(-300, -1, 400), np.linspace(0.01, 0.99, 999), 1 - np.logspace(-16, -1, 200)])
    ours = np.array([inverse_normal_cdf(x) for x in p])
    assert np.allclose(ours, ndtri(p), rtol=1e-13, atol=1e-13)


def test_normals_keyed_by_coordinates():
    blk = normal_block(5, 3, 2, 10)
    assert blk[2, 1, 7] == normal_at(5, 7, 2, 1)
    assert np.array_equal(normal_step(5, 1, 2, 10), blk[1])
    # splitting the batch reproduces the same draws
    tail = normal_block(5, 3, 2, 4, path_start=6)
    assert np.array_equal(tail, blk[:, :, 6:])
    assert not np.array_equal(normal_block(6, 3, 2, 10), blk)


def test_normal_moments():
    z = normal_block(3, 1, 1, 1 << 18).ravel()
    n = z.size
    assert abs(z.mean()) < 4 / math.sqrt(n)
    assert abs(z.var() - 1) < 4 * math.sqrt(2 / n)
    assert abs(np.mean(z ** 3)) < 4 * math.sqrt(15 / n)


def test_seed_range():
    with pytest.raises(ValueError):
        PhiloxNormals(-1)
    with pytest.raises(ValueError):
        InjectedNormals(np.zeros((2, 2)))


# -- grid ------------------------------------------------------------------------


def test_grid_examples():
    g = build_grid([1.0], 1 / 96)
    assert g.n_steps == 96 and np.allclose(np.diff(g.times), 1 / 96)
    assert g.times[-1] == 1.0
    g = build_grid([1.0, 0.3], 0.25)
    assert 0.3 in g.times and np.max(np.diff(g.times)) <= 0.25 + 1e-15
    assert g.index(0.3) in g.marked
    g0 = build_grid([0.0], 0.1)
    assert g0.n_steps == 0
    with pytest.raises(ValueError):
        build_grid([1.0], 0.0)


@given(st.lists(st.floats(0.0, 5.0), min_size=1, max_size=6), st.floats(0.01, 0.5))
@settings(max_examples=80, deadline=None)
def test_grid_properties(times, dt_max):
    g = build_grid(times, dt_max)
    assert g.times[0] == 0.0
    assert np.all(np.diff(g.times) > 0)
    if g.n_steps:
        assert np.max(np.diff(g.times)) <= dt_max * (1 + 1e-9)
    for t in times:
        assert g.index(t) >= 0


# -- compile / simulate ----------------------------------------------------------

ENV = Environment(parameters={"batchsize", "a", "b", "rho"})
LINEAR = "d_x = a*d_t + b*d_W\ninit: x = zeros([batchsize])\n1.0: px pays x[1.0] nodiscount\n"


def test_compile_rejects_bad_correlation():
    text = "d_x = d_W\nd_y = d_Z\nd_W*d_Z = 1.5\ninit: x = zeros([batchsize])\ninit: y = zeros([batchsize])\n1.0: p pays x[1.0] nodiscount"
    with pytest.raises(CorrelationError):
        compile_program(check(parse(text), Environment(parameters={"batchsize"})))


def test_compile_rejects_empty_payoffs():
    prog = check(parse("d_x = d_W\ninit: x = zeros([batchsize])"), Environment(parameters={"batchsize"}))
    with pytest.raises(PlanError):
        compile_program(prog)


def test_observation_at_zero_needs_no_steps():
    prog = check(parse("d_x = d_W\ninit: x = ones([batchsize])\n0.0: p pays 3*x[0.0] nodiscount"), Environment(parameters={"batchsize"}))
    plan = compile_program(prog)
    assert plan.n_steps == 0
    out = simulate(plan, SimConfig(n_paths=4))
    assert np.array_equal(out.samples["p"], np.full(4, 3.0))


def test_arithmetic_brownian_motion_exact():
    plan = compile_program(check(parse(LINEAR), ENV), 0.25)
    z = normal_block(1, 4, 1, 8)
    out = simulate(plan, SimConfig(n_paths=8, params={"a": 0.1, "b": 0.2}, normals=InjectedNormals(z)))
    want = 0.1 + 0.2 * 0.5 * z.sum(axis=0)[0]
    assert out.samples["px"] == pytest.approx(want, abs=1e-15)


def test_zero_normals_deterministic_linbrlv():
    fc, dc = Curve.flat(0.02, label="forecasting"), Curve.flat(0.02)
    s = setting("LinBRLV")
    p = table_params("LinBRLV").replace(a=0.01, b=0.0)
    prog = check(parse(builtin_script(s, RiskNeutral())), script_environment(s, RiskNeutral(), [0.02], 1.0, 0.25))
    plan = compile_program(prog, 1 / 8)
    z = np.zeros((plan.n_steps, 1, 3))
    cfg = SimConfig(3, params=script_params(s, p, RiskNeutral(), 1.005),
                    externs={"initfwd": ExternFunction.from_curve(fc), "discfwd": ExternFunction.from_curve(dc)},
                    normals=InjectedNormals(z), record_states=True)
    out = simulate(plan, cfg)
    y = out.states["ratey"][:, 0]
    dt = 1 / 8
    for k in range(plan.n_steps):
        assert y[k + 1] == pytest.approx(y[k] + (0.01 ** 2 - 2 * 0.03 * y[k]) * dt, rel=1e-14)
    assert y[1] == pytest.approx(0.01 ** 2 * dt, rel=1e-14)
    assert np.all(out.states["ratex"][:, 0] == out.states["ratex"][:, 1])


def test_zero_vol_payoffs_are_intrinsic():
    plan = compile_program(check(parse(LINEAR.replace("nodiscount", "nodiscount\n1.0: c pays positivepart(x[1.0] - 0.05) nodiscount")), ENV), 0.1)
    out = simulate(plan, SimConfig(n_paths=6, seed=3, params={"a": 0.08, "b": 0.0}))
    assert np.all(out.samples["c"] == out.samples["c"][0])
    assert out.samples["c"][0] == pytest.approx(0.03, abs=1e-15)
    assert mc_estimate(out.samples["c"]) == (out.samples["c"][0], 0.0)


def test_cir_full_truncation_keeps_volatility_real():
    eta = math.sqrt(0.4)
    text = ("d_v = theta*(oneslike(v) - positivepart(v))*d_t + eta*vol*d_Z\nvol = sqrt(positivepart(v))\n"
            "init: v = ones([batchsize])\n1.0: p pays vol[1.0] nodiscount")
    prog = check(parse(text), Environment(parameters={"batchsize", "theta", "eta"}))
    plan = compile_program(prog, 1 / 96)
    cfg = SimConfig(100_000, seed=2, params={"theta": 0.2, "eta": eta}, record_states=True)
    out = simulate(plan, cfg)
    vol = out.states["vol"]
    assert np.all(np.isfinite(vol)) and np.all(vol >= 0)
    assert np.all(vol ** 2 == np.maximum(out.states["v"], 0) ** 1) or np.allclose(vol ** 2, np.maximum(out.states["v"], 0), rtol=1e-14)


def test_non_finite_state_is_reported():
    text = "d_x = ln(x)*d_t + 0.0*d_W\ninit: x = zeros([batchsize])\n1.0: p pays x[1.0] nodiscount"
    plan = compile_program(check(parse(text), Environment(parameters={"batchsize"})), 0.5)
    with pytest.raises(SimulationError) as info:
        with np.errstate(all="ignore"):
            simulate(plan, SimConfig(n_paths=2))
    assert info.value.variable == "x" and info.value.step is not None
    assert "x" in str(info.value)


def test_simulation_is_deterministic():
    plan = compile_program(check(parse(LINEAR), ENV), 0.1)
    cfg = SimConfig(n_paths=64, seed=9, antithetic=True, params={"a": 0.0, "b": 1.0})
    a, b = simulate(plan, cfg), simulate(plan, cfg)
    assert np.array_equal(a.samples["px"], b.samples["px"])


def test_antithetic_halves_mirror():
    plan = compile_program(check(parse(LINEAR), ENV), 0.1)
    out = simulate(plan, SimConfig(n_paths=64, seed=9, antithetic=True, params={"a": 0.0, "b": 1.0}))
    x = out.samples["px"]
    assert np.array_equal(x[32:], -x[:32])
    m, se = mc_estimate(x, antithetic=True)
    assert abs(m) < 1e-15 and se == 0.0
    with pytest.raises(ValueError):
        SimConfig(n_paths=63, antithetic=True)


def test_parametric_batch_matches_fixed_runs():
    plan = compile_program(check(parse(LINEAR), ENV), 0.1)
    a = np.array([0.0, 0.1, 0.2, 0.3])
    out = simulate(plan, SimConfig(n_paths=4, seed=1, params={"a": a, "b": 0.5}))
    for i in range(4):
        one = simulate(plan, SimConfig(n_paths=4, seed=1, params={"a": float(a[i]), "b": 0.5}))
        assert out.samples["px"][i] == one.samples["px"][i]
    with pytest.raises(ValueError):
        SimConfig(n_paths=4, params={"a": np.zeros(3)})


def test_schedule_parameters():
    plan = compile_program(check(parse(LINEAR), ENV), 0.1, breakpoints=(0.5,))
    sched = Schedule((0.5,), (1.0, 3.0))
    out = simulate(plan, SimConfig(n_paths=2, params={"a": sched, "b": 0.0}))
    assert out.samples["px"][0] == pytest.approx(0.5 * 1.0 + 0.5 * 3.0, rel=1e-14)
    with pytest.raises(ValueError):
        Schedule((0.5,), (1.0,))


# -- estimator --------------------------------------------------------------------


def test_mc_estimate_examples():
    assert mc_estimate(np.full(5, 2.5)) == (2.5, 0.0)
    assert mc_estimate([0.0, 2.0]) == (1.0, 1.0)
    assert mc_estimate([1.0, 3.0, 3.0, 1.0], antithetic=True) == (2.0, 0.0)
    with pytest.raises(ValueError):
        mc_estimate([1.0])


@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=40).filter(lambda v: len(v) % 2 == 0))
@settings(max_examples=150, deadline=None)
def test_antithetic_mean_equals_plain_mean(vals):
    x = np.array(vals)
    m_anti, se_anti = mc_estimate(x, antithetic=True)
    m_plain, _ = mc_estimate(x)
    assert m_anti == m_plain
    assert se_anti >= 0


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=50))
@settings(max_examples=150, deadline=None)
def test_standard_error_definition(vals):
    x = np.array(vals)
    m, se = mc_estimate(x)
    assert m == pytest.approx(np.mean(x), rel=1e-12, abs=1e-9)
    assert se == pytest.approx(np.std(x, ddof=1) / math.sqrt(x.size), rel=1e-9, abs=1e-9)


# -- code generation -----------------------------------------------------------------


def _builtin_plan(name, measure, dt=1 / 48):
    s = setting(name, 0.0175)
    prog = check(parse(builtin_script(s, measure)), script_environment(s, measure, [0.015, 0.0175, 0.02], 1.0, 0.25))
    fc, dc = Curve.flat(0.0175, label="forecasting"), Curve.flat(0.015)
    return s, compile_program(prog, dt), {"initfwd": ExternFunction.from_curve(fc), "discfwd": ExternFunction.from_curve(dc)}


@pytest.mark.parametrize("name", SETTING_NAMES)
def test_numpy_profile_bit_identical(name):
    for measure in (TForward(1.25), RiskNeutral()):
        s, plan, ext = _builtin_plan(name, measure)
        cfg = SimConfig(256, seed=4, antithetic=True, params=script_params(s, table_params(name), measure, 1.004), externs=ext)
        ref = simulate(plan, cfg)
        got = run_generated(generate_code(plan, "numpy").load(), cfg)
        for k, v in ref.samples.items():
            assert np.array_equal(v, got["samples"][k])


def test_numba_profile_bit_identical():
    name = "LinXLV + QDLNSV"
    s, plan, ext = _builtin_plan(name, TForward(1.25))
    cfg = SimConfig(256, seed=4, antithetic=True, params=script_params(s, table_params(name), TForward(1.25), 1.004), externs=ext)
    ref = simulate(plan, cfg)
    got = run_generated(generate_code(plan, "numba").load(), cfg)
    for k, v in ref.samples.items():
        assert np.array_equal(v, got["samples"][k])


def test_generated_source_is_reproducible(tmp_path, linx_script):
    s = setting("LinXLV + QDLNSV")
    prog = check(parse(linx_script), script_environment(s, TForward(1.25), [0.015, 0.02], 1.0, 0.25))
    for profile in ("numpy", "numba"):
        a = generate_code(prog, profile)
        b = generate_code(check(parse(linx_script), script_environment(s, TForward(1.25), [0.015, 0.02], 1.0, 0.25)), profile)
        assert a.source == b.source
        assert a.program_hash == program_fingerprint(prog)
    code = generate_code(prog, "numpy")
    assert "_normals(seed, _NSTEPS, 2, _nd)" in code.source
    man = write_generated(code, tmp_path / "gen.py", timestamp="2026-01-01T00:00:00Z")
    on_disk = json.loads((tmp_path / "gen.py.manifest.json").read_text())
    assert on_disk == man and on_disk["profile"] == "numpy" and on_disk["program_hash"] == code.program_hash
    assert (tmp_path / "gen.py").read_text() == code.source


def test_program_without_draws():
    prog = check(parse("v = 2*t\ninit: v = zeros([batchsize])\n1.0: p pays v[1.0] nodiscount"), Environment(parameters={"batchsize"}))
    for profile in ("numpy", "numba"):
        code = generate_code(prog, profile, dt_max=0.25)
        assert "= _normals(" not in code.source
        out = code.load().run(4, {})
        assert np.array_equal(out["samples"]["p"], np.full(4, 2.0))


def test_unsupported_builtin_in_profile():
    from cheyette.dsl import register_builtin, unregister_builtin

    register_builtin("cube", lambda x: x ** 3, arity=1, numpy_src="({0})**3")
    try:
        prog = check(parse("d_x = cube(a)*d_W\ninit: x = zeros([batchsize])\n1.0: p pays x[1.0] nodiscount"), Environment(parameters={"a", "batchsize"}))
        generate_code(prog, "numpy")
        with pytest.raises(CodegenError, match="cube"):
            generate_code(prog, "numba")
    finally:
        unregister_builtin("cube")
    with pytest.raises(CodegenError):
        generate_code(prog, "fortran")
