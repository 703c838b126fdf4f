"""Straight-line source generation for simulation plans.

Two profiles are supported:

``numpy``
    Vectorised code performing exactly the operations of the interpreter in
    the same order, so results agree bit for bit given the same normals.
``numba``
    A compiled steps-outer / paths-inner scalar kernel. Subexpressions that do
    not depend on the path are hoisted out of the path loop. Results agree
    with the interpreter to rounding (the scalar and vectorised libm calls
    may differ in the last bit). Parameters must be scalars or time
    schedules of scalars.

Generated modules depend only on numpy (and numba for the ``numba``
profile); when asked to draw their own normals they import the toolkit's
counter-based generator so that seeds mean the same thing everywhere.
"""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import types
from dataclasses import dataclass
from typing import Any

from .. import __version__
from ..dsl.builtins import NUMPY_HELPERS, get_builtin
from ..dsl.checker import CheckedProgram, FnCall, Var, walk_resolved
from ..dsl.correlation import PSD_TOL, cholesky_source, mix_source
from ..dsl.nodes import BinOp, BoolOp, Compare, IfExp, ListLit, Num, UnaryOp
from .grid import DEFAULT_DT_MAX
from .simulate import SimulationPlan, compile_program

PROFILES = ("numpy", "numba")


class CodegenError(ValueError):
    """The program uses something the chosen profile cannot express."""


def program_fingerprint(program: CheckedProgram) -> str:
    """Stable hash of a checked program's resolved content."""
    payload = repr(
        (
            sorted((k, v) for k, v in program.functions.items()),
            program.brownians,
            program.steps,
            program.init_plan,
            program.correlations,
            program.payoffs,
            program.free_params,
            program.externs,
        )
    )
    return hashlib.sha256(payload.encode()).hexdigest()


# -- expression emission ------------------------------------------------------


class _Names:
    """How each kind of resolved variable is spelled in one emission context."""

    def __init__(self, param: str, t: str, scalar: bool, formals: dict | None = None, hoisted: dict | None = None):
        self.param = param  # format string taking the parameter name
        self.t = t
        self.scalar = scalar
        self.formals = formals or {}
        self.hoisted = hoisted or {}

    def var(self, v: Var) -> str:
        k = v.kind
        if k == "old":
            return f"v_{v.name}"
        if k == "new":
            return f"n_{v.name}"
        if k == "init":
            return f"i_{v.name}"
        if k == "obs":
            return f"_obs[({v.name!r}, {v.time!r})]"
        if k == "param":
            return self.param.format(v.name)
        if k == "formal":
            return self.formals.get(v.name, f"f_{v.name}")
        if k == "t":
            return self.t
        if k == "dt":
            return "_dt"
        if k == "dW":
            return f"dW_{v.name}"
        raise CodegenError(f"unknown variable kind {k}")


def _num(v) -> str:
    return repr(float(v))


def emit(e, names: _Names, functions: dict) -> str:
    """Source for a resolved expression; every operation is parenthesised."""
    if names.hoisted and e in names.hoisted:
        return names.hoisted[e]
    if isinstance(e, Num):
        return _num(e.value)
    if isinstance(e, Var):
        return names.var(e)
    if isinstance(e, BinOp):
        return f"({emit(e.left, names, functions)} {e.op} {emit(e.right, names, functions)})"
    if isinstance(e, UnaryOp):
        inner = emit(e.operand, names, functions)
        if e.op == "-":
            return f"(-{inner})"
        if e.op == "+":
            return inner
        return f"(not {inner})" if names.scalar else f"np.logical_not({inner})"
    if isinstance(e, Compare):
        return f"({emit(e.left, names, functions)} {e.op} {emit(e.right, names, functions)})"
    if isinstance(e, BoolOp):
        a, b = emit(e.left, names, functions), emit(e.right, names, functions)
        if names.scalar:
            return f"({a} {e.op} {b})"
        return f"np.logical_{e.op}({a}, {b})"
    if isinstance(e, IfExp):
        body, test, orelse = (emit(x, names, functions) for x in (e.body, e.test, e.orelse))
        if names.scalar:
            return f"({body} if {test} else {orelse})"
        return f"np.where({test}, {body}, {orelse})"
    if isinstance(e, ListLit):
        return "[" + ", ".join(emit(i, names, functions) for i in e.items) + "]"
    if isinstance(e, FnCall):
        if e.kind == "builtin":
            b = get_builtin(e.name)
            tmpl = b.scalar_src if names.scalar else b.numpy_src
            if tmpl is None:
                profile = "numba" if names.scalar else "numpy"
                raise CodegenError(f"builtin '{e.name}' is not supported by the {profile} profile")
            if names.scalar and b.init_only:
                return tmpl
            return tmpl.format(*[emit(a, names, functions) for a in e.args])
        args = [emit(a, names, functions) for a in e.args]
        if e.kind == "extern":
            if names.scalar:
                return f"_pwc(EK_{e.name}, EV_{e.name}, {args[0]})"
            return f"_ext[{e.name!r}]({', '.join(args)})"
        if e.kind == "user":
            params, body = functions[e.name]
            if names.scalar:
                sub = _Names(names.param, names.t, True, dict(zip(params, args)))
                return f"({emit(body, sub, functions)})"
            return f"_fn_{e.name}({', '.join(args + [names.param.split('[')[0]])})"
    raise CodegenError(f"cannot emit {e!r}")


def _path_invariant(e, functions) -> bool:
    for x in walk_resolved(e):
        if isinstance(x, Var) and x.kind in ("old", "new", "init", "obs", "dW"):
            return False
        if isinstance(x, FnCall) and x.kind == "user":
            params, body = functions[x.name]
            # formals are bound to arguments, which are walked separately
            del params, body
    return True


def _collect_hoistable(e, functions, out: list):
    """Maximal path-invariant, non-trivial subexpressions of ``e``."""
    if isinstance(e, (Num, Var)):
        return
    if _path_invariant(e, functions):
        if e not in out:
            out.append(e)
        return
    for child in _children(e):
        _collect_hoistable(child, functions, out)


def _children(e):
    if isinstance(e, FnCall):
        return e.args
    if isinstance(e, (BinOp, Compare, BoolOp)):
        return (e.left, e.right)
    if isinstance(e, UnaryOp):
        return (e.operand,)
    if isinstance(e, IfExp):
        return (e.body, e.test, e.orelse)
    if isinstance(e, ListLit):
        return e.items
    return ()


# -- module assembly ----------------------------------------------------------

_COMMON = '''
def _as_state(v, n):
    a = np.asarray(v, dtype=np.float64)
    if a.shape == (n,):
        return a
    return np.broadcast_to(a, (n,)).copy()


def _at(v, t):
    return v.at(t) if hasattr(v, "at") else v


def _params_at(params, t):
    return {k: _at(v, t) for k, v in params.items()}


def _check_finite(name, v, step, t):
    if not np.all(np.isfinite(v)):
        bad = int(np.flatnonzero(~np.isfinite(v))[0])
        raise FloatingPointError(f"non-finite value of '{name}' at step {step} (t={t!r}), path {bad}")


def _check_rho(v):
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)) or np.any(np.abs(v) > 1.0):
        raise ValueError("correlation outside [-1, 1]")


def _check_psd(d):
    if np.any(d < -PSD_TOL):
        raise ValueError("correlation matrix is not positive semidefinite")


def _normals(seed, n_steps, n_brownians, n_draws):
    from cheyette.engine.rng import normal_block

    return normal_block(seed, n_steps, n_brownians, n_draws)
'''


@dataclass(frozen=True)
class GeneratedCode:
    source: str
    profile: str
    program_hash: str

    def manifest(self, timestamp: str | None = None) -> dict:
        return {
            "program_hash": self.program_hash,
            "profile": self.profile,
            "source_sha256": hashlib.sha256(self.source.encode()).hexdigest(),
            "generated_at": timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "toolkit_version": __version__,
        }

    def load(self) -> types.ModuleType:
        """Execute the source as a fresh module."""
        mod = types.ModuleType(f"cheyette_generated_{self.program_hash[:12]}")
        exec(compile(self.source, mod.__name__, "exec"), mod.__dict__)
        return mod


def generate_code(program, profile: str = "numpy", dt_max: float = DEFAULT_DT_MAX, breakpoints=()) -> GeneratedCode:
    """Generate a self-contained simulation module for a program or plan."""
    if profile not in PROFILES:
        raise CodegenError(f"unknown backend profile {profile!r}; expected one of {PROFILES}")
    plan = program if isinstance(program, SimulationPlan) else compile_program(program, dt_max, breakpoints)
    prog = plan.program
    h = program_fingerprint(prog)
    if profile == "numpy":
        src = _numpy_module(plan, h)
    else:
        src = _numba_module(plan, h)
    return GeneratedCode(src, profile, h)


def _header(plan: SimulationPlan, h: str, profile: str) -> list[str]:
    prog = plan.program
    obs_at: dict[int, list] = {}
    for v, t in prog.observations:
        obs_at.setdefault(plan.grid.index(t), []).append((v, t))
    return [
        f'"""Generated {profile} simulation module (program {h[:16]})."""',
        "import numpy as np",
        *(["import numba as nb"] if profile == "numba" else []),
        "",
        f"PROGRAM_HASH = {h!r}",
        f"PROFILE = {profile!r}",
        f"BROWNIANS = {prog.brownians!r}",
        f"VARIABLES = {prog.variables!r}",
        f"PARAMETERS = {prog.free_params!r}",
        f"EXTERNS = {prog.externs!r}",
        f"PAYOFFS = {tuple(p.name for p in prog.payoffs)!r}",
        f"PSD_TOL = {PSD_TOL!r}",
        "_T = np.array([" + ", ".join(repr(float(t)) for t in plan.grid.times) + "])",
        f"_NSTEPS = {plan.n_steps}",
        f"_OBS_AT = {dict(sorted(obs_at.items()))!r}",
        NUMPY_HELPERS.rstrip(),
        _COMMON.rstrip(),
        "",
    ]


def _payoff_lines(prog: CheckedProgram, indent: str) -> list[str]:
    lines = [f"{indent}_samples = {{}}"]
    for p in prog.payoffs:
        nm = _Names("_pp[{!r}]", repr(float(p.pay_time)), False)
        lines.append(f"{indent}_pp = _params_at(params, {float(p.pay_time)!r})")
        val = emit(p.expr, nm, prog.functions)
        if p.mode == "discount":
            val = f"({val} * {emit(p.mode_expr, nm, prog.functions)})"
        elif p.mode == "numeraire":
            val = f"(({emit(p.numeraire0, nm, prog.functions)} * {val}) / {emit(p.mode_expr, nm, prog.functions)})"
        lines.append(f"{indent}_samples[{p.name!r}] = _as_state({val}, _n)")
    return lines


def _function_defs(fns: dict) -> list[str]:
    out = []
    for name, (params, body) in sorted(fns.items()):
        nm = _Names("_p[{!r}]", "None", False)
        out += [
            "",
            f"def _fn_{name}({', '.join(['f_' + p for p in params] + ['_p'])}):",
            f"    return {emit(body, nm, fns)}",
        ]
    return out


def _bind_params_lines(indent: str) -> list[str]:
    return [
        f"{indent}params = dict(params)",
        f'{indent}if "batchsize" in PARAMETERS and "batchsize" not in params:',
        f'{indent}    params["batchsize"] = _n',
        f"{indent}_missing = [p for p in PARAMETERS if p not in params]",
        f"{indent}if _missing:",
        f'{indent}    raise ValueError("unbound parameters: " + ", ".join(_missing))',
    ]


def _numpy_module(plan: SimulationPlan, h: str) -> str:
    prog = plan.program
    fns = prog.functions
    out = _header(plan, h, "numpy") + _function_defs(fns)
    nb = len(prog.brownians)
    out += [
        "",
        "",
        "def run(n_paths, params, seed=0, antithetic=False, externs=None, normals=None):",
        '    """Simulate ``n_paths`` paths; ``normals`` is an optional (steps, brownians, draws) array."""',
        "    _n = int(n_paths)",
        "    _ext = dict(externs or {})",
        "    if antithetic and _n % 2:",
        '        raise ValueError("antithetic batches need an even number of paths")',
        "    _nd = _n // 2 if antithetic else _n",
        *_bind_params_lines("    "),
    ]
    if nb:
        out += [
            "    if normals is None:",
            f"        normals = _normals(seed, _NSTEPS, {nb}, _nd)",
            "    normals = np.asarray(normals, dtype=float)",
            f"    if normals.shape[0] < _NSTEPS or normals.shape[1:] != ({nb}, _nd):",
            '        raise ValueError("normals do not cover the simulation")',
        ]
    out += ["    _p = _params_at(params, 0.0)"]
    init_names = _Names("_p[{!r}]", "0.0", False)
    for v, e in prog.init_plan:
        out.append(f"    i_{v} = _as_state({emit(e, init_names, fns)}, _n)")
    for v in prog.variables:
        out.append(f"    v_{v} = i_{v}")
    for v in prog.variables:
        out.append(f"    _check_finite({v!r}, v_{v}, 0, 0.0)")
    out += [
        "    _obs = {}",
        "    for _v, _t in _OBS_AT.get(0, []):",
        "        _obs[(_v, _t)] = locals()['v_' + _v]",
        "    for _k in range(_NSTEPS):",
        "        _t0 = _T[_k]",
        "        _t1 = _T[_k + 1]",
        "        _dt = _t1 - _t0",
        "        _p0 = _params_at(params, _t0)",
        "        _p1 = _params_at(params, _t1)",
    ]
    inc = _Names("_p0[{!r}]", "_t0", False)
    asg = _Names("_p1[{!r}]", "_t1", False)
    if nb:
        out += [
            "        _z = normals[_k]",
            "        if antithetic:",
            "            _z = np.concatenate([_z, -_z], axis=1)",
        ]
        entry_src = {}
        for i, j, e in prog.correlations:
            nm = f"_c{j}_{i}"
            out.append(f"        {nm} = {emit(e, inc, fns)}")
            out.append(f"        _check_rho({nm})")
            entry_src[(j, i)] = nm
        lines, lnames = cholesky_source(nb, list(entry_src), entry_src, flavor="array")
        out += ["        " + ln for ln in lines]
        zs = [f"_z[{b}]" for b in range(nb)]
        out.append("        _sq = np.sqrt(_dt)")
        for b, src in zip(prog.brownians, mix_source(nb, lnames, zs, "_sq")):
            out.append(f"        dW_{b} = {src}")
    for s in prog.steps:
        if s.kind == "increment":
            out.append(f"        n_{s.var} = _as_state(v_{s.var} + {emit(s.rhs, inc, fns)}, _n)")
        else:
            out.append(f"        n_{s.var} = _as_state({emit(s.rhs, asg, fns)}, _n)")
    for s in prog.steps:
        out.append(f"        _check_finite({s.var!r}, n_{s.var}, _k + 1, float(_t1))")
    for v in prog.variables:
        out.append(f"        v_{v} = n_{v}")
    out += [
        "        for _v, _t in _OBS_AT.get(_k + 1, []):",
        "            _obs[(_v, _t)] = locals()['v_' + _v]",
    ]
    out += _payoff_lines(prog, "    ")
    out += ['    return {"samples": _samples, "observations": _obs}', ""]
    return "\n".join(out)


_NUMBA_HELPERS = '''
@nb.njit(cache=False)
def _pwc(knots, values, x):
    i = np.searchsorted(knots, x, side="right") - 1
    if i < 0:
        i = 0
    if i > values.size - 1:
        i = values.size - 1
    return values[i]
'''


def _numba_module(plan: SimulationPlan, h: str) -> str:
    prog = plan.program
    fns = prog.functions
    nb_ = len(prog.brownians)
    params = prog.free_params
    externs = prog.externs
    out = _header(plan, h, "numba")
    out.append(_NUMBA_HELPERS.rstrip())
    out += _function_defs(fns)
    pidx = {p: i for i, p in enumerate(params)}

    def pnames(prefix):
        return _Names(prefix + "_{}", {"p0": "_t0", "p1": "_t1", "pi": "0.0"}[prefix], True)

    inc = pnames("p0")
    asg = pnames("p1")
    ini = pnames("pi")

    # hoist path-invariant subexpressions per context
    inc_h: list = []
    asg_h: list = []
    corr_h: list = []
    for s in prog.steps:
        _collect_hoistable(s.rhs, fns, inc_h if s.kind == "increment" else asg_h)
    for _, _, e in prog.correlations:
        _collect_hoistable(e, fns, corr_h)
    inc.hoisted = {}
    asg.hoisted = {}
    hoist_lines = []
    for i, e in enumerate(inc_h):
        hoist_lines.append(f"        _hi{i} = {emit(e, inc, fns)}")
        inc.hoisted[e] = f"_hi{i}"
    for i, e in enumerate(asg_h):
        hoist_lines.append(f"        _ha{i} = {emit(e, asg, fns)}")
        asg.hoisted[e] = f"_ha{i}"

    corr_invariant = all(_path_invariant(e, fns) for _, _, e in prog.correlations)
    ext_args = "".join(f", EK_{x}, EV_{x}" for x in externs)
    sig = f"_T, PS, Z, antithetic, n, OBS_IDX, OBS_VAR, O{ext_args}"
    vidx = {v: i for i, v in enumerate(prog.variables)}
    k_ = []
    k_ += [
        "",
        "",
        "@nb.njit(cache=False)",
        f"def _kernel({sig}):",
        "    nd = n // 2 if antithetic else n",
        "    S = np.empty((%d, n))" % len(prog.variables),
    ]
    for p in params:
        k_.append(f"    pi_{p} = PS[0, {pidx[p]}]")
    k_.append("    for i in range(n):")
    for v, e in prog.init_plan:
        k_.append(f"        i_{v} = {emit(e, ini, fns)}")
    for v in prog.variables:
        k_.append(f"        S[{vidx[v]}, i] = i_{v}")
    for v in prog.variables:
        k_ += [
            "    for i in range(n):",
            f"        if not np.isfinite(S[{vidx[v]}, i]):",
            f"            return 0, {vidx[v]}, i",
        ]
    k_ += [
        "    for j in range(OBS_IDX.size):",
        "        if OBS_IDX[j] == 0:",
        "            O[j, :] = S[OBS_VAR[j], :]",
        f"    for k in range({plan.n_steps}):",
        "        _t0 = _T[k]",
        "        _t1 = _T[k + 1]",
        "        _dt = _t1 - _t0",
        "        _sq = np.sqrt(_dt)",
    ]
    for p in params:
        k_.append(f"        p0_{p} = PS[k, {pidx[p]}]")
        k_.append(f"        p1_{p} = PS[k + 1, {pidx[p]}]")
    k_ += hoist_lines

    corr_lines: list[str] = []
    mix: list[str] = []
    if nb_:
        entry_src = {}
        for i, j, e in prog.correlations:
            nm = f"_c{j}_{i}"
            corr_lines.append(f"{nm} = {emit(e, inc, fns)}")
            corr_lines.append(f"if not (abs({nm}) <= 1.0):")
            corr_lines.append("    raise ValueError('correlation outside [-1, 1]')")
            entry_src[(j, i)] = nm
        lines, lnames = cholesky_source(nb_, list(entry_src), entry_src, flavor="scalar")
        corr_lines += lines
        mix = mix_source(nb_, lnames, [f"_z{b}" for b in range(nb_)], "_sq")
    if corr_invariant:
        k_ += ["        " + ln for ln in corr_lines]
    # two branch-free passes (direct, then mirrored draws) so the path loop vectorises
    k_ += [
        "        for h in range(2 if antithetic else 1):",
        "            sg = 1.0 - 2.0 * h",
        "            off = h * nd",
        "            for j in range(nd):",
        "                i = off + j",
    ]
    ind = "                "
    for v in prog.variables:
        k_.append(f"{ind}v_{v} = S[{vidx[v]}, i]")
    if nb_:
        k_ += [f"{ind}_z{b} = sg * Z[k, {b}, j]" for b in range(nb_)]
        if not corr_invariant:
            k_ += [ind + ln for ln in corr_lines]
        for b, src in zip(prog.brownians, mix):
            k_.append(f"{ind}dW_{b} = {src}")
    for s in prog.steps:
        if s.kind == "increment":
            k_.append(f"{ind}n_{s.var} = v_{s.var} + {emit(s.rhs, inc, fns)}")
        else:
            k_.append(f"{ind}n_{s.var} = {emit(s.rhs, asg, fns)}")
    for s in prog.steps:
        k_.append(f"{ind}S[{vidx[s.var]}, i] = n_{s.var}")
    for s in prog.steps:
        k_ += [
            "        for i in range(n):",
            f"            if not np.isfinite(S[{vidx[s.var]}, i]):",
            f"                return k + 1, {vidx[s.var]}, i",
        ]
    k_ += [
        "        for j in range(OBS_IDX.size):",
        "            if OBS_IDX[j] == k + 1:",
        "                O[j, :] = S[OBS_VAR[j], :]",
        "    return -1, -1, -1",
    ]
    out += k_
    obs_list = sorted(prog.observations)
    obs_idx = [plan.grid.index(t) for _, t in obs_list]
    out += [
        "",
        f"_OBS_LIST = {tuple(obs_list)!r}",
        f"_OBS_IDX = np.array({obs_idx!r}, dtype=np.int64)",
        f"_OBS_VAR = np.array({[vidx[v] for v, _ in obs_list]!r}, dtype=np.int64)",
        "",
        "",
        "def run(n_paths, params, seed=0, antithetic=False, externs=None, normals=None):",
        '    """Simulate ``n_paths`` paths; ``normals`` is an optional (steps, brownians, draws) array."""',
        "    _n = int(n_paths)",
        "    _ext = dict(externs or {})",
        "    if antithetic and _n % 2:",
        '        raise ValueError("antithetic batches need an even number of paths")',
        "    _nd = _n // 2 if antithetic else _n",
        *_bind_params_lines("    "),
        "    PS = np.empty((_T.size, len(PARAMETERS)))",
        "    for _j, _name in enumerate(PARAMETERS):",
        "        _v = params[_name]",
        "        for _k in range(_T.size):",
        "            _x = _at(_v, _T[_k])",
        "            if np.ndim(_x) != 0:",
        "                raise ValueError(f\"parameter '{_name}' must be scalar for the numba profile\")",
        "            PS[_k, _j] = float(_x)",
    ]
    if nb_:
        out += [
            "    if normals is None:",
            f"        normals = _normals(seed, _NSTEPS, {nb_}, _nd)",
            "    Z = np.ascontiguousarray(normals, dtype=np.float64)",
            f"    if Z.shape[0] < _NSTEPS or Z.shape[1:] != ({nb_}, _nd):",
            '        raise ValueError("normals do not cover the simulation")',
        ]
    else:
        out.append("    Z = np.zeros((1, 1, 1))")
    ext_call = "".join(
        f", np.ascontiguousarray(_ext[{x!r}].knots, dtype=np.float64), np.ascontiguousarray(_ext[{x!r}].values, dtype=np.float64)"
        for x in externs
    )
    out += [
        "    O = np.empty((len(_OBS_LIST), _n))",
        f"    es, ev, ep = _kernel(_T, PS, Z, bool(antithetic), _n, _OBS_IDX, _OBS_VAR, O{ext_call})",
        "    if es >= 0:",
        "        raise FloatingPointError(",
        "            f\"non-finite value of '{VARIABLES[ev]}' at step {es} (t={_T[es]!r}), path {ep}\"",
        "        )",
        "    _obs = {key: O[j] for j, key in enumerate(_OBS_LIST)}",
        *_payoff_lines(prog, "    "),
        '    return {"samples": _samples, "observations": _obs}',
        "",
    ]
    return "\n".join(out)


def write_generated(code: GeneratedCode, path, manifest_path=None, timestamp: str | None = None) -> dict:
    """Write the module and a JSON manifest next to it (``<path>.manifest.json``)."""
    from pathlib import Path

    path = Path(path)
    path.write_text(code.source)
    man = code.manifest(timestamp)
    man["path"] = str(path)
    mp = Path(manifest_path) if manifest_path else path.with_suffix(path.suffix + ".manifest.json")
    mp.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return man


def run_generated(module: Any, config, dt_max=None):
    """Run a loaded generated module with a :class:`SimConfig`; returns its result dict."""
    z = None
    if config.normals is not None:
        z = config.normals.block(module._NSTEPS, len(module.BROWNIANS), config.n_draws)
    return module.run(config.n_paths, config.params, config.seed, config.antithetic, config.externs, z)
