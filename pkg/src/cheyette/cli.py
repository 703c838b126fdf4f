"""Command-line entry point: ``cheyette <command> ...``.

Exit codes: 0 success, 1 runtime or I/O failure, 2 validation or parse failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .curves import Curve, CurveDomainError, read_curve
from .dsl import Environment, ExternFunction, ScriptError, check, parse
from .dsl.errors import CorrelationError
from .engine.codegen import CodegenError, generate_code, write_generated
from .engine.grid import DEFAULT_DT_MAX
from .engine.rng import InjectedNormals, normal_block
from .engine.simulate import PlanError, SimConfig, compile_program, simulate
from .models.settings import RiskNeutral, TForward, validate_params
from .pricing import (
    CapletPricer,
    Quote,
    format_diff_table,
    format_quotes,
    good_fit,
    price_diff_table,
    read_quotes,
)

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


class UsageError(ValueError):
    pass


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _write_manifest(args, command: str, outputs: list, seeds: dict, started: float, configs: list) -> None:
    path = getattr(args, "manifest", None)
    if not path:
        return
    man = {
        "command": command,
        "argv": sys.argv[1:],
        "config_paths": [str(c) for c in configs if c],
        "seeds": seeds,
        "toolkit_version": __version__,
        "wall_time_s": round(time.time() - started, 3),
        "outputs": [str(o) for o in outputs],
    }
    missing = [o for o in outputs if not Path(o).exists()]
    if missing:
        raise OSError(f"manifest names missing outputs: {missing}")
    Path(path).write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")


# -- environments ---------------------------------------------------------------


def load_env(path: str | None) -> tuple[Environment, dict, dict]:
    """Environment plus optional run-time parameter values and extern functions.

    The file is JSON with keys ``constants`` (name -> number or list),
    ``parameters`` (list of names), ``functions`` (name -> arity) and, for
    verification runs, ``values`` (name -> number) and ``externs``
    (name -> {"flat": rate} or {"curve": path}).
    """
    if path is None:
        return Environment(), {}, {}
    p = Path(path)
    d = json.loads(p.read_text())
    env = Environment(
        constants=dict(d.get("constants", {})),
        parameters=frozenset(d.get("parameters", [])),
        functions={k: int(v) for k, v in d.get("functions", {}).items()},
    )
    externs = {}
    for name, spec in d.get("externs", {}).items():
        if "flat" in spec:
            externs[name] = ExternFunction.from_curve(Curve.flat(float(spec["flat"])))
        elif "curve" in spec:
            cp = Path(spec["curve"])
            externs[name] = ExternFunction.from_curve(read_curve(cp if cp.is_absolute() else p.parent / cp))
        else:
            raise UsageError(f"extern '{name}' needs 'flat' or 'curve'")
    return env, dict(d.get("values", {})), externs


def _load_program(script_path: str, env_path: str | None):
    text = Path(script_path).read_text()
    env, values, externs = load_env(env_path)
    return check(parse(text), env), values, externs


# -- commands ---------------------------------------------------------------------


def cmd_check(args) -> int:
    prog, _, _ = _load_program(args.script, args.env)
    print(f"ok: {args.script}")
    print(f"  variables: {', '.join(prog.variables)}")
    print(f"  brownians: {', '.join(prog.brownians) or '-'}")
    print(f"  parameters: {', '.join(prog.free_params) or '-'}")
    print(f"  payoffs: {len(prog.payoffs)}")
    print(f"  observation times: {', '.join('%.17g' % t for t in prog.observation_times)}")
    return EXIT_OK


def _read_curves(args) -> tuple[Curve, Curve]:
    return read_curve(args.forecasting, "forecasting"), read_curve(args.discounting, "discounting")


def _load_params(path: str):
    from .calibration.config import params_from_config

    return params_from_config(json.loads(Path(path).read_text()))


def cmd_price(args) -> int:
    started = time.time()
    fc, dc = _read_curves(args)
    setting, params = _load_params(args.params)
    validate_params(setting, params)
    quotes = read_quotes(args.quotes)
    groups: dict = {}
    for q in quotes:
        groups.setdefault((q.maturity, q.tenor), []).append(q)
    rows = []
    for (T1, tenor), qs in sorted(groups.items()):
        measure = RiskNeutral() if args.measure == "riskneutral" else TForward(T1 + tenor)
        strikes = sorted({q.strike for q in qs})
        floors = any(q.omega == -1 for q in qs)
        pr = CapletPricer(setting, fc, dc, T1, T1 + tenor, strikes, measure, args.dt, floors, args.backend)
        strip = pr.price(params, args.paths, args.seed, not args.no_antithetic)
        by = {(r.spec.strike, 1): r for r in strip.caplets}
        by.update({(r.spec.strike, -1): r for r in strip.floorlets})
        rows += price_diff_table([by[(q.strike, q.omega)] for q in qs], qs)
    Path(args.out).write_text(format_diff_table(rows))
    fit = good_fit(rows)
    print(f"{sum(r.within_2se for r in rows)}/{len(rows)} quotes within 2 SE; good fit: {'yes' if fit else 'no'}")
    _write_manifest(args, "price", [args.out], {"seed": args.seed}, started, [args.params, args.quotes])
    return EXIT_OK


def cmd_synth_market(args) -> int:
    started = time.time()
    fc, dc = _read_curves(args)
    setting, params = _load_params(args.params)
    validate_params(setting, params)
    strikes = [float(k) for k in args.strikes.split(",")]
    T1, tenor = args.maturity, args.tenor
    measure = TForward(T1 + tenor)
    pr = CapletPricer(setting, fc, dc, T1, T1 + tenor, strikes, measure, args.dt, args.floorlets, args.backend)
    strip = pr.price(params, args.paths, args.seed, True)
    quotes = [Quote(T1, tenor, r.spec.strike, r.price, 1) for r in strip.caplets]
    quotes += [Quote(T1, tenor, r.spec.strike, r.price, -1) for r in strip.floorlets]
    Path(args.out).write_text(format_quotes(quotes))
    print(f"wrote {len(quotes)} quotes to {args.out}")
    _write_manifest(args, "synth-market", [args.out], {"seed": args.seed}, started, [args.params])
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .calibration import best_seed_calibrate, bootstrap_calibrate, load_config, write_report

    started = time.time()
    cfg = load_config(args.config)
    if cfg.mode == "bootstrap":
        de = cfg.de if cfg.replications == cfg.de.replications else _with_reps(cfg.de, cfg.replications)
        results = bootstrap_calibrate(cfg.problems, de, cfg.seed, cfg.threshold)
    else:
        results = [best_seed_calibrate(cfg.problems[0], cfg.de, cfg.replications, cfg.seed)]
    written = write_report(results, args.out)
    for r in results:
        vals = ", ".join(f"{k}={v:.6g}" for k, v in r.values.items() if isinstance(v, float))
        print(f"T1={r.maturity:g}: objective {r.objective:.6g}, good fit: {'yes' if r.good_fit else 'no'}{'; ' + vals if vals else ''}")
    _write_manifest(args, "calibrate", written, {"seed": cfg.seed}, started, [args.config])
    return EXIT_OK


def _with_reps(de, n):
    from dataclasses import replace

    return replace(de, replications=n)


def _verify(prog, code, values: dict, externs: dict, dt_max: float, n_paths: int = 256) -> float:
    """Largest absolute sample difference between interpreter and generated module."""
    plan = compile_program(prog, dt_max)
    z = normal_block(20240601, plan.n_steps, len(prog.brownians), n_paths)
    cfg = SimConfig(n_paths=n_paths, params=values, externs=externs, normals=InjectedNormals(z))
    ref = simulate(plan, cfg)
    mod = code.load()
    got = mod.run(n_paths, values, 0, False, externs, z if prog.brownians else None)
    err = 0.0
    for k, v in ref.samples.items():
        err = max(err, float(np.max(np.abs(v - got["samples"][k]))))
    return err


def cmd_codegen(args) -> int:
    started = time.time()
    prog, values, externs = _load_program(args.script, args.env)
    code = generate_code(prog, args.profile, args.dt)
    write_generated(code, args.out)
    print(f"wrote {args.out} ({args.profile}, program {code.program_hash[:12]})")
    if args.verify:
        if not values and prog.free_params:
            raise UsageError("verification needs parameter 'values' in the environment file")
        err = _verify(prog, code, values, externs, args.dt)
        tol = 0.0 if args.profile == "numpy" else 1e-12
        if err > tol:
            _err(f"generated code differs from the interpreter by {err:.3g}")
            return EXIT_RUNTIME
        print(f"verified against the interpreter: max difference {err:.3g}")
    outputs = [args.out, args.out + ".manifest.json"]
    _write_manifest(args, "codegen", outputs, {}, started, [args.script, args.env])
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cheyette", description="Cheyette SLV simulation, pricing and calibration toolkit")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def manifest(p):
        p.add_argument("--manifest", help="write a JSON run manifest here")

    def curves(p):
        p.add_argument("--forecasting", required=True, help="forecasting curve file")
        p.add_argument("--discounting", required=True, help="discounting curve file")

    def sim(p, paths):
        p.add_argument("--paths", type=int, default=paths)
        p.add_argument("--dt", type=float, default=DEFAULT_DT_MAX, help="maximum time step (years)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--backend", choices=("interpreter", "numpy", "numba"), default="numba")

    p = sub.add_parser("check", help="parse and check a script")
    p.add_argument("script")
    p.add_argument("--env", help="environment JSON (constants, parameters, functions)")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("price", help="price quoted caplets and write a model-vs-market table")
    p.add_argument("--params", required=True, help="model setting and parameters JSON")
    p.add_argument("--quotes", required=True, help="market quote CSV")
    p.add_argument("--out", required=True, help="output diff table CSV")
    p.add_argument("--measure", choices=("tforward", "riskneutral"), default="tforward")
    p.add_argument("--no-antithetic", action="store_true")
    curves(p)
    sim(p, 1 << 16)
    manifest(p)
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("calibrate", help="calibrate a setting to caplet quotes")
    p.add_argument("config", help="calibration config JSON")
    p.add_argument("--out", required=True, help="report JSON (diff tables are written alongside)")
    manifest(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("codegen", help="generate a straight-line simulation module")
    p.add_argument("script")
    p.add_argument("--env", help="environment JSON")
    p.add_argument("--profile", choices=("numpy", "numba"), default="numpy")
    p.add_argument("--out", required=True)
    p.add_argument("--dt", type=float, default=DEFAULT_DT_MAX)
    p.add_argument("--verify", action="store_true", help="compare against the interpreter on a small batch")
    manifest(p)
    p.set_defaults(func=cmd_codegen)

    p = sub.add_parser("synth-market", help="generate synthetic caplet quotes from a model")
    p.add_argument("--params", required=True)
    p.add_argument("--maturity", type=float, required=True)
    p.add_argument("--tenor", type=float, default=0.25)
    p.add_argument("--strikes", required=True, help="comma-separated strikes")
    p.add_argument("--floorlets", action="store_true", help="also quote floorlets")
    p.add_argument("--out", required=True)
    curves(p)
    sim(p, 1 << 20)
    manifest(p)
    p.set_defaults(func=cmd_synth_market)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ScriptError, CodegenError, UsageError, CorrelationError, PlanError) as exc:
        _err(str(exc))
        return EXIT_INVALID
    except (OSError, FloatingPointError, CurveDomainError) as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        _err(str(exc))
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
