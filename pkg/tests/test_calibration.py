import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cheyette.calibration import (
    PENALTY,
    CalibrationProblem,
    ConfigError,
    DESettings,
    Objective,
    SimSettings,
    best_seed_calibrate,
    bootstrap_calibrate,
    derive_seeds,
    differential_evolution,
    inverse_variance_weights,
    load_config,
    params_from_config,
    parse_config,
    reflect,
    result_report,
    setting_config,
    validate_candidate,
    write_report,
)
from cheyette.curves import write_curve
from cheyette.engine.simulate import Schedule
from cheyette.models.settings import PARAM_BOUNDS, apply_values, default_params, setting
from cheyette.pricing import CapletPricer, Quote, atm_strike, write_quotes

FAST = SimSettings(n_paths=1 << 11, validation_paths=1 << 11, dt_max=0.25, backend="numpy")
SMALL_DE = DESettings(population=8, max_generations=6, stagnation=3, stagnation_rtol=0.01)


def synth_quotes(curves, name, values, T1=1.0, tenor=0.25, offsets=(-0.005, 0.0, 0.005), n_paths=1 << 11, seed=7, sim=FAST):
    fc, dc = curves
    s = setting(name, atm_strike(fc, T1, T1 + tenor))
    p = apply_values(default_params(name), values)
    k = atm_strike(fc, T1, T1 + tenor) + np.array(offsets)
    strip = CapletPricer(s, fc, dc, T1, T1 + tenor, k, dt_max=sim.dt_max, backend=sim.backend).price(p, n_paths, seed)
    return [Quote(T1, tenor, r.spec.strike, r.price) for r in strip.caplets]


def brlv_problem(curves, quotes=None, sim=FAST, weights=None):
    fc, dc = curves
    quotes = quotes or synth_quotes(curves, "LinBRLV", {"a": 0.005, "b": 0.1})
    return CalibrationProblem(setting("LinBRLV"), default_params("LinBRLV"), PARAM_BOUNDS["LinBRLV"], quotes, fc, dc, weights, sim)


# -- objective -----------------------------------------------------------------


def test_objective_zero_at_generating_params(curves):
    prob = brlv_problem(curves)
    obj = Objective(prob, seed=7)
    assert obj([0.005, 0.1]) == 0.0


def test_objective_deterministic(curves):
    obj = Objective(brlv_problem(curves), seed=3)
    x = [0.006, -0.2]
    assert obj(x) == obj(x)
    val, res = obj.evaluate(x)
    assert val == obj(x) and len(res) == 3


def test_objective_single_quote_residual(curves):
    fc, dc = curves
    (q,) = synth_quotes(curves, "LinBRLV", {"a": 0.005, "b": 0.0}, offsets=(0.0,))
    shifted = Quote(q.maturity, q.tenor, q.strike, q.price + 1e-4)
    prob = brlv_problem(curves, [shifted], weights=[2.0])
    obj = Objective(prob, seed=7)
    assert obj([0.005, 0.0]) == pytest.approx(2.0 * 1e-8, rel=1e-9)


def test_objective_zero_weights(curves):
    prob = brlv_problem(curves, weights=[0.0, 0.0, 0.0])
    assert Objective(prob, seed=1)([0.01, 0.3]) == 0.0


def test_objective_penalises_out_of_box(curves):
    obj = Objective(brlv_problem(curves), seed=1)
    v = obj([0.03, 0.0])
    assert v > PENALTY
    assert obj([0.06, 0.0]) > v
    assert obj.evaluate([0.03, 0.0])[1] is None


def test_eta_box_capped_at_feller(curves):
    fc, dc = curves
    name = "LinBRLV + CIRSV"
    with pytest.raises(ValueError, match="Feller"):
        CalibrationProblem(setting(name), default_params(name), {"eta": (0.1, 0.7)}, synth_quotes(curves, "LinBRLV", {"a": 0.005}), fc, dc, None, FAST)


def test_objective_penalises_failed_candidates(curves):
    prob = brlv_problem(curves)

    def broken(values):
        raise ValueError("no such parameters")

    obj = Objective(prob, seed=1, transform=broken)
    assert obj.evaluate([0.005, 0.1]) == (PENALTY, None)


def test_problem_validation(curves):
    fc, dc = curves
    q = synth_quotes(curves, "LinBRLV", {"a": 0.005})
    with pytest.raises(ValueError):
        CalibrationProblem(setting("LinBRLV"), default_params("LinBRLV"), {}, q, fc, dc)
    with pytest.raises(ValueError):
        CalibrationProblem(setting("LinBRLV"), default_params("LinBRLV"), {"a": (0.01, 0.001)}, q, fc, dc)
    with pytest.raises(ValueError):
        CalibrationProblem(setting("LinBRLV"), default_params("LinBRLV"), {"a": (0.001, 0.01)}, q, fc, dc, weights=[1.0])
    with pytest.raises(ValueError):
        SimSettings(n_paths=3)


def test_inverse_variance_weights():
    assert inverse_variance_weights([2e-6, 1e-6, 4e-6]) == (0.25, 1.0, 0.0625)
    with pytest.raises(ValueError):
        inverse_variance_weights([1e-6, 0.0])
    with pytest.raises(ValueError):
        inverse_variance_weights([])


# -- differential evolution -------------------------------------------------------


def sphere(x):
    return float(np.sum(np.asarray(x) ** 2))


def rastrigin(x):
    x = np.asarray(x)
    return float(10 * x.size + np.sum(x**2 - 10 * np.cos(2 * np.pi * x)))


def test_de_sphere():
    r = differential_evolution(sphere, [(-5, 5)] * 2, DESettings(max_generations=300, tol=1e-10), seed=1)
    assert r.fun < 1e-8 and r.stop_reason == "tol"


def test_de_trace_non_increasing():
    r = differential_evolution(rastrigin, [(-5.12, 5.12)] * 3, DESettings(max_generations=50), seed=4)
    vals = [v for _, v in r.trace]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    assert len(vals) == r.generations + 1 and r.fun == vals[-1]


def test_de_reproducible():
    a = differential_evolution(rastrigin, [(-5.12, 5.12)] * 2, DESettings(max_generations=30), seed=9)
    b = differential_evolution(rastrigin, [(-5.12, 5.12)] * 2, DESettings(max_generations=30), seed=9)
    assert a.fun == b.fun and np.array_equal(a.x, b.x)


def test_de_stagnation_stop():
    r = differential_evolution(lambda x: 1.0, [(0, 1)], DESettings(stagnation=5), seed=0)
    assert r.stop_reason == "stagnation" and r.generations == 5


def test_de_stays_in_box():
    seen = []

    def f(x):
        seen.append(np.array(x))
        return float(np.sum(x))

    lo, hi = np.array([0.2, -3.0]), np.array([0.5, -1.0])
    differential_evolution(f, list(zip(lo, hi)), DESettings(max_generations=40), seed=2)
    pts = np.array(seen)
    assert np.all(pts >= lo) and np.all(pts <= hi)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=3, max_size=3), st.integers(0, 2**31))
def test_reflect_lands_in_box(v, seed):
    lo, hi = np.array([-1.0, 0.0, 2.0]), np.array([1.0, 0.5, 3.0])
    out = reflect(np.array(v), lo, hi, np.random.default_rng(seed))
    assert np.all(out >= lo) and np.all(out <= hi)


def test_de_settings_validation():
    with pytest.raises(ValueError):
        DESettings(f_range=(0.9, 0.4))
    with pytest.raises(ValueError):
        DESettings(population=3)
    with pytest.raises(ValueError):
        DESettings(cr_init=0.0)
    with pytest.raises(ValueError):
        differential_evolution(sphere, [(1, 0)])
    assert DESettings().pop_size(2) == 30 and DESettings(population=10).pop_size(4) == 10


# -- best seed and bootstrap ---------------------------------------------------------


def test_derive_seeds_distinct():
    seeds, v = derive_seeds(5, 3)
    assert len(set(seeds + [v])) == 4
    assert derive_seeds(5, 3) == (seeds, v)


def test_best_seed_picks_smallest_validated(curves):
    prob = brlv_problem(curves)
    r = best_seed_calibrate(prob, SMALL_DE, 3, seed=11)
    vals = [rep["validated_objective"] for rep in r.replications]
    assert len(vals) == 3 and r.validated_objective == min(vals)
    assert r.seeds["validation"] == derive_seeds(11, 3)[1]
    assert len(r.diffs) == 3 and len(r.ensemble_diffs) == 3
    assert r.n_evals >= 3 * 8


def test_best_seed_single_replication_matches_validation(curves):
    prob = brlv_problem(curves)
    r = best_seed_calibrate(prob, SMALL_DE, 1, seed=2)
    seeds, vseed = derive_seeds(2, 1)
    assert r.seeds["calibration"] == seeds[0]
    v, _ = validate_candidate(prob, r.params, vseed)
    assert v == r.validated_objective
    with pytest.raises(ValueError):
        best_seed_calibrate(prob, SMALL_DE, 0)


def test_best_seed_recovers_brlv(curves):
    prob = brlv_problem(curves)
    de = DESettings(population=12, max_generations=40, stagnation=10, stagnation_rtol=0.01)
    r = best_seed_calibrate(prob, de, 2, seed=0)
    assert r.values["a"] == pytest.approx(0.005, rel=0.1)


def test_bootstrap_single_maturity_equals_best_seed(curves):
    prob = brlv_problem(curves)
    (b,) = bootstrap_calibrate([prob], SMALL_DE, seed=4)
    r = best_seed_calibrate(prob, SMALL_DE, seed=4)
    assert b.values["segments"] == [r.values] and b.objective == r.objective


def test_bootstrap_freezes_earlier_segments(curves):
    fc, dc = curves
    name = "LinBRLV"
    p1 = brlv_problem(curves, synth_quotes(curves, name, {"a": 0.005, "b": 0.1}, T1=0.5))
    p2 = brlv_problem(curves, synth_quotes(curves, name, {"a": 0.007, "b": 0.1}, T1=1.0))
    res = bootstrap_calibrate([p1, p2], SMALL_DE, seed=0, threshold=0.0)
    first, second = res
    assert second.values["segments"][0] == first.values["segments"][0]
    assert second.values["breaks"] == [0.5]
    assert first.flagged and second.flagged  # nothing reaches a zero objective
    # the second fit re-simulates the frozen first segment exactly
    a = second.params.a
    assert isinstance(a, Schedule) and a.values[0] == first.values["segments"][0]["a"]


def test_bootstrap_order_and_names(curves):
    p1 = brlv_problem(curves, synth_quotes(curves, "LinBRLV", {"a": 0.005}, T1=1.0))
    p2 = brlv_problem(curves, synth_quotes(curves, "LinBRLV", {"a": 0.005}, T1=0.5))
    with pytest.raises(ValueError):
        bootstrap_calibrate([p1, p2], SMALL_DE)
    with pytest.raises(ValueError):
        bootstrap_calibrate([], SMALL_DE)


def test_feller_bound_never_exceeded(curves):
    fc, dc = curves
    name = "LinBRLV + CIRSV"
    q = synth_quotes(curves, name, {"a": 0.005, "b": 0.1, "eta": 0.4})
    prob = CalibrationProblem(setting(name), default_params(name), PARAM_BOUNDS[name], q, fc, dc, None, FAST)
    obj = Objective(prob, seed=0, record=True)
    differential_evolution(obj, prob.box, SMALL_DE, seed=0)
    etas = np.array(obj.history)[:, prob.names.index("eta")]
    assert etas.max() <= math.sqrt(2 * 0.2 * 1.0)


# -- configs and reports -------------------------------------------------------------


def write_config(tmp_path, curves, extra=None, quotes=None):
    fc, dc = curves
    (tmp_path / "f.csv").write_text(write_curve(fc))
    (tmp_path / "d.csv").write_text(write_curve(dc))
    write_quotes(quotes or synth_quotes(curves, "LinBRLV", {"a": 0.005, "b": 0.1}), tmp_path / "q.csv")
    cfg = {
        "setting": "LinBRLV",
        "curves": {"forecasting": "f.csv", "discounting": "d.csv"},
        "quotes": "q.csv",
        "simulation": {"n_paths": 2048, "validation_paths": 2048, "dt_max": 0.25, "backend": "numpy"},
        "de": {"population": 8, "max_generations": 4},
        "replications": 2,
    }
    cfg.update(extra or {})
    path = tmp_path / "cal.json"
    path.write_text(json.dumps(cfg))
    return path


def test_config_round_trip(tmp_path, curves):
    cfg = load_config(write_config(tmp_path, curves, {"fixed": {"lam": 0.04}}))
    (prob,) = cfg.problems
    assert prob.base_params.lam == 0.04 and prob.names == ("a", "b")
    assert cfg.replications == 2 and cfg.mode == "best_seed" and cfg.de.population == 8
    r = best_seed_calibrate(prob, cfg.de, cfg.replications, cfg.seed)
    paths = write_report([r], tmp_path / "rep.json")
    rep = json.loads(paths[0].read_text())
    assert rep["results"][0]["values"].keys() == {"a", "b"}
    assert len(rep["results"][0]["diffs"]) == 3 and paths[1].exists()
    assert result_report([r])["good_fit"] == r.good_fit


def test_config_errors(tmp_path, curves):
    with pytest.raises(ConfigError, match="lower < upper"):
        load_config(write_config(tmp_path, curves, {"bounds": {"a": [0.01, 0.001]}}))
    with pytest.raises(ConfigError, match="unknown DE"):
        load_config(write_config(tmp_path, curves, {"de": {"popsize": 3}}))
    with pytest.raises(ConfigError, match="mode"):
        load_config(write_config(tmp_path, curves, {"mode": "annealing"}))
    with pytest.raises(ConfigError, match="lacks"):
        parse_config({"setting": "LinBRLV"}, tmp_path)
    two = synth_quotes(curves, "LinBRLV", {"a": 0.005}, T1=0.5) + synth_quotes(curves, "LinBRLV", {"a": 0.005}, T1=1.0)
    with pytest.raises(ConfigError, match="bootstrap"):
        load_config(write_config(tmp_path, curves, quotes=two))
    cfg = load_config(write_config(tmp_path, curves, {"mode": "bootstrap"}, quotes=two))
    assert [p.maturity for p in cfg.problems] == [0.5, 1.0]


def test_params_file_round_trip():
    p = apply_values(default_params("PwLinBRLV + CIRSV"), {"a1": 0.1, "a2": 0.2, "a3": 0.3, "eta": 0.5})
    d = json.loads(json.dumps(setting_config("PwLinBRLV + CIRSV", p, knots=(0.01, 0.02, 0.03))))
    s, q = params_from_config(d)
    assert q == p and s.local_vol.knots == (0.01, 0.02, 0.03)
    sch = p.replace(a=Schedule((0.5,), (0.001, 0.002)))
    s2, q2 = params_from_config(json.loads(json.dumps(setting_config("LinBRLV", sch))))
    assert q2.a == sch.a
    with pytest.raises(ConfigError):
        params_from_config({"setting": "LinBRLV", "params": {"alpha": 1}})
