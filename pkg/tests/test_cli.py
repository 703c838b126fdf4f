import json

import numpy as np
import pytest

from cheyette.calibration import setting_config
from cheyette.cli import main
from cheyette.curves import write_curve
from cheyette.models.scripts import script_environment, script_params
from cheyette.models.settings import TForward, apply_values, default_params, setting, table_params
from cheyette.pricing import atm_strike, read_quotes

from conftest import DATA

STRIKES = [0.0166, 0.0175, 0.0184]


@pytest.fixture
def workdir(tmp_path, curves):
    fc, dc = curves
    (tmp_path / "f.csv").write_text(write_curve(fc))
    (tmp_path / "d.csv").write_text(write_curve(dc))
    return tmp_path


def env_file(path, name, with_values=True):
    s = setting(name, 0.0175)
    measure = TForward(1.25)
    env = script_environment(s, measure, STRIKES, 1.0, 0.25)
    d = {"constants": env.constants, "parameters": sorted(env.parameters), "functions": dict(env.functions)}
    if with_values:
        d["values"] = script_params(s, table_params(name), measure, 1.0)
    path.write_text(json.dumps(d))
    return path


def params_file(path, name, values=None):
    p = table_params(name) if values is None else apply_values(default_params(name), values)
    path.write_text(json.dumps(setting_config(name, p)))
    return path


def curve_args(d):
    return ["--forecasting", str(d / "f.csv"), "--discounting", str(d / "d.csv")]


# -- check ------------------------------------------------------------------------


def test_check_reference_script(tmp_path, capsys):
    env = env_file(tmp_path / "env.json", "LinXLV + QDLNSV")
    assert main(["check", str(DATA / "linx_qdlnsv_caplets.chs"), "--env", str(env)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("ok:") and "brownians: W, Z" in out and "payoffs: 3" in out


def test_check_empty_script(tmp_path, capsys):
    (tmp_path / "empty.chs").write_text("# nothing here\n")
    assert main(["check", str(tmp_path / "empty.chs")]) == 2
    assert "no system lines" in capsys.readouterr().err


def test_check_undefined_symbol(tmp_path, capsys):
    env = json.loads(env_file(tmp_path / "env.json", "PwLinBRLV + CIRSV", False).read_text())
    env["parameters"].remove("volofvar")
    (tmp_path / "env.json").write_text(json.dumps(env))
    assert main(["check", str(DATA / "pwlin_cir_caplets.chs"), "--env", str(tmp_path / "env.json")]) == 2
    assert "volofvar" in capsys.readouterr().err


def test_missing_file_is_runtime_failure(tmp_path, capsys):
    assert main(["check", str(tmp_path / "nope.chs")]) == 1
    pq = params_file(tmp_path / "p.json", "LinBRLV", {"a": 0.005})
    (tmp_path / "d.csv").write_text("t,df\n1,0.98\n")
    rc = main(["synth-market", "--params", str(pq), "--maturity", "1", "--strikes", "0.0175", "--out", str(tmp_path / "q.csv"), "--forecasting", str(tmp_path / "missing.csv"), "--discounting", str(tmp_path / "d.csv")])
    assert rc == 1


# -- synth-market, price ------------------------------------------------------------


def test_synth_market_and_price(workdir, capsys):
    pq = params_file(workdir / "p.json", "LinBRLV", {"a": 0.005, "b": 0.1})
    q = workdir / "q.csv"
    base = ["--paths", "4096", "--dt", "0.25", "--backend", "numpy"] + curve_args(workdir)
    rc = main(["synth-market", "--params", str(pq), "--maturity", "1", "--strikes", ",".join(map(str, STRIKES)), "--floorlets", "--out", str(q), "--manifest", str(workdir / "m1.json")] + base)
    assert rc == 0
    quotes = read_quotes(q)
    assert len(quotes) == 6 and {x.omega for x in quotes} == {1, -1}
    first = q.read_bytes()
    main(["synth-market", "--params", str(pq), "--maturity", "1", "--strikes", ",".join(map(str, STRIKES)), "--floorlets", "--out", str(q)] + base)
    assert q.read_bytes() == first
    out = workdir / "diff.csv"
    assert main(["price", "--params", str(pq), "--quotes", str(q), "--out", str(out), "--manifest", str(workdir / "m2.json")] + base) == 0
    assert "6/6 quotes within 2 SE; good fit: yes" in capsys.readouterr().out
    man = json.loads((workdir / "m2.json").read_text())
    assert man["command"] == "price" and man["outputs"] == [str(out)] and man["seeds"] == {"seed": 0}
    first = out.read_bytes()
    main(["price", "--params", str(pq), "--quotes", str(q), "--out", str(out)] + base)
    assert out.read_bytes() == first


def test_price_rejects_bad_params(workdir, capsys):
    pq = params_file(workdir / "p.json", "LinBRLV + CIRSV", {"a": 0.005, "eta": 0.9})
    (workdir / "q.csv").write_text("maturity,tenor,strike,price,omega\n1,0.25,0.0175,0.0005,1\n")
    rc = main(["price", "--params", str(pq), "--quotes", str(workdir / "q.csv"), "--out", str(workdir / "o.csv")] + curve_args(workdir))
    assert rc == 2 and "error" in capsys.readouterr().err


# -- calibrate ------------------------------------------------------------------------


def test_calibrate_small_config(workdir, capsys):
    pq = params_file(workdir / "p.json", "LinBRLV", {"a": 0.005, "b": 0.1})
    main(["synth-market", "--params", str(pq), "--maturity", "1", "--strikes", ",".join(map(str, STRIKES)), "--out", str(workdir / "q.csv"), "--paths", "2048", "--dt", "0.25", "--backend", "numpy"] + curve_args(workdir))
    cfg = {
        "setting": "LinBRLV",
        "curves": {"forecasting": "f.csv", "discounting": "d.csv"},
        "quotes": "q.csv",
        "simulation": {"n_paths": 2048, "validation_paths": 2048, "dt_max": 0.25, "backend": "numpy"},
        "de": {"population": 8, "max_generations": 5},
        "replications": 2,
    }
    (workdir / "cal.json").write_text(json.dumps(cfg))
    rep = workdir / "rep.json"
    assert main(["calibrate", str(workdir / "cal.json"), "--out", str(rep), "--manifest", str(workdir / "m.json")]) == 0
    assert "T1=1: objective" in capsys.readouterr().out
    report = json.loads(rep.read_text())
    assert len(report["results"]) == 1 and len(report["results"][0]["replications"]) == 2
    man = json.loads((workdir / "m.json").read_text())
    assert all((workdir / o).exists() for o in man["outputs"])
    first = rep.read_text()
    main(["calibrate", str(workdir / "cal.json"), "--out", str(rep)])
    assert rep.read_text() == first


def test_calibrate_bad_bounds(workdir, capsys):
    (workdir / "q.csv").write_text("maturity,tenor,strike,price,omega\n1,0.25,0.0175,0.0005,1\n")
    cfg = {"setting": "LinBRLV", "curves": {"forecasting": "f.csv", "discounting": "d.csv"}, "quotes": "q.csv", "bounds": {"a": [0.01, 0.001]}}
    (workdir / "cal.json").write_text(json.dumps(cfg))
    assert main(["calibrate", str(workdir / "cal.json"), "--out", str(workdir / "r.json")]) == 2
    assert "lower < upper" in capsys.readouterr().err


# -- codegen -------------------------------------------------------------------------


@pytest.mark.parametrize("profile", ["numpy", "numba"])
def test_codegen_verify(tmp_path, capsys, profile):
    env = env_file(tmp_path / "env.json", "LinXLV + QDLNSV")
    out = tmp_path / "gen.py"
    args = ["codegen", str(DATA / "linx_qdlnsv_caplets.chs"), "--env", str(env), "--profile", profile, "--out", str(out), "--dt", "0.25", "--verify"]
    assert main(args + ["--manifest", str(tmp_path / "m.json")]) == 0
    assert "verified against the interpreter" in capsys.readouterr().out
    first = out.read_bytes()
    assert main(args) == 0
    assert out.read_bytes() == first
    man = json.loads((tmp_path / "m.json").read_text())
    assert all(p for p in man["outputs"]) and (tmp_path / "gen.py.manifest.json").exists()


def test_codegen_needs_values_to_verify(tmp_path, capsys):
    env = env_file(tmp_path / "env.json", "LinXLV + QDLNSV", with_values=False)
    rc = main(["codegen", str(DATA / "linx_qdlnsv_caplets.chs"), "--env", str(env), "--out", str(tmp_path / "g.py"), "--verify"])
    assert rc == 2 and "values" in capsys.readouterr().err


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0 and "cheyette" in capsys.readouterr().out
