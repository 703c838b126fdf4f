"""Semantic checking: name resolution, step ordering and payoff expansion.

``check`` turns a parsed :class:`Script` into a :class:`CheckedProgram` whose
expressions are *resolved*: every name is replaced by a :class:`Var` that
says where its value comes from at run time, loop payoffs are expanded, and
observation times are constant-folded.

Evaluation semantics within one time step ``[t_k, t_{k+1}]``:

* increments read start-of-step values and ``t = t_k``;
* assignments read the newest value available: a variable already updated
  by a preceding line gives its end-of-step value, otherwise its
  start-of-step value; ``t = t_{k+1}``;
* Markovian updates read start-of-step values for bare names and end-of-step
  values for ``name_new`` (which must have been updated by a preceding line).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

from . import nodes as N
from .builtins import get_builtin
from .errors import CheckError, UndefinedSymbolError
from .nodes import (
    AssignEq,
    BinOp,
    BoolOp,
    Call,
    Compare,
    FunctionDef,
    IfExp,
    IncrementEq,
    ListLit,
    MarkovianUpdate,
    Name,
    Num,
    Observe,
    Script,
    Str,
    TupleLit,
    UnaryOp,
)

RESERVED = frozenset({"t", "d_t"})


@dataclass(frozen=True)
class Environment:
    """Names a script may use without defining them.

    ``constants`` are known when checking (loop-binding lists, payment
    times, tenors); scalar constants are folded into expressions.
    ``parameters`` are bound at simulation time. ``functions`` maps external
    function names to their arity.
    """

    constants: Mapping[str, Any] = field(default_factory=dict)
    parameters: frozenset = frozenset()
    functions: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "parameters", frozenset(self.parameters))


# -- resolved expression nodes ----------------------------------------------


@dataclass(frozen=True)
class Var:
    """Resolved name. ``kind`` is one of

    old, new   state variable at start / end of the current step
    init       state variable during initialisation
    obs        observed state value; ``name`` is the variable, ``time`` set
    param      simulation parameter
    formal     function argument
    t, dt      current time / step size
    dW         correlated Brownian increment (``name`` is the Brownian)
    """

    kind: str
    name: str = ""
    time: float | None = None


@dataclass(frozen=True)
class FnCall:
    kind: str  # builtin | user | extern
    name: str
    args: tuple


@dataclass(frozen=True)
class Step:
    kind: str  # increment | assign | markovian
    var: str
    rhs: Any
    line: int | None = None


@dataclass(frozen=True)
class ConcretePayoff:
    name: str
    pay_time: float
    expr: Any
    mode: str  # nodiscount | discount | numeraire
    mode_expr: Any = None
    numeraire0: Any = None


@dataclass(frozen=True)
class CheckedProgram:
    script: Script
    functions: Mapping[str, Any]  # name -> (params, resolved body)
    brownians: tuple
    stepped: tuple
    assigned: tuple
    markovian: tuple
    steps: tuple
    init_plan: tuple  # ((var, resolved expr), ...) in evaluation order
    correlations: tuple  # ((i, j, resolved expr), ...)
    payoffs: tuple
    observations: tuple  # sorted ((var, time), ...)
    free_params: tuple
    externs: tuple
    constants: Mapping[str, float]

    @property
    def variables(self) -> tuple:
        return self.stepped + self.assigned + self.markovian

    @property
    def observation_times(self) -> tuple:
        return tuple(sorted({t for _, t in self.observations} | {p.pay_time for p in self.payoffs}))

    def category(self, name: str) -> str:
        """Which single category a name belongs to."""
        if name in ("t",):
            return "time"
        if name in self.brownians:
            return "brownian"
        if name in self.stepped:
            return "stepped"
        if name in self.assigned:
            return "assigned"
        if name in self.markovian:
            return "markovian"
        if name in self.free_params:
            return "parameter"
        if name in self.constants:
            return "loop_binding"
        raise KeyError(name)


# -- constant evaluation ------------------------------------------------------

_CONST_FUNCS = {
    "len": len,
    "range": lambda *a: list(range(*[int(x) for x in a])),
    "min": min,
    "max": max,
    "abs": abs,
    "float": float,
    "int": int,
    "exp": math.exp,
    "sqrt": math.sqrt,
    "ln": math.log,
}


def const_eval(e, values: Mapping[str, Any]):
    """Evaluate a parse-time expression over Python values."""
    try:
        return _const_eval(e, values)
    except CheckError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised as a diagnostic
        raise CheckError.at(f"cannot evaluate constant expression: {exc}", getattr(e, "pos", None)) from exc


def _const_eval(e, values):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Str):
        return e.value
    if isinstance(e, Name):
        if e.id not in values:
            raise UndefinedSymbolError.at(e.id, e.pos)
        return values[e.id]
    if isinstance(e, ListLit):
        return [_const_eval(i, values) for i in e.items]
    if isinstance(e, TupleLit):
        return tuple(_const_eval(i, values) for i in e.items)
    if isinstance(e, UnaryOp):
        v = _const_eval(e.operand, values)
        return {"-": lambda: -v, "+": lambda: +v, "not": lambda: not v}[e.op]()
    if isinstance(e, BinOp):
        a = _const_eval(e.left, values)
        b = _const_eval(e.right, values)
        if e.op == "*" and isinstance(a, list):
            b = int(b)
        elif e.op == "*" and isinstance(b, list):
            a = int(a)
        return {
            "+": lambda: a + b,
            "-": lambda: a - b,
            "*": lambda: a * b,
            "/": lambda: a / b,
            "%": lambda: a % b,
            "**": lambda: a**b,
        }[e.op]()
    if isinstance(e, Call):
        if e.func not in _CONST_FUNCS:
            raise UndefinedSymbolError.at(e.func, e.pos)
        return _CONST_FUNCS[e.func](*[_const_eval(a, values) for a in e.args])
    raise CheckError.at("expression is not allowed in a constant context", getattr(e, "pos", None))


@dataclass(frozen=True)
class _ObsMarker:
    var: str
    time: float


# -- the checker --------------------------------------------------------------


class _Resolver:
    def __init__(self, script: Script, env: Environment):
        self.script = script
        self.env = env
        self.funcs = {f.name: f for f in script.function_defs}
        self.brownians = script.brownians
        self.stepped: list[str] = []
        self.assigned: list[str] = []
        self.markovian: list[str] = []
        self.used_params: set[str] = set()
        self.used_externs: set[str] = set()
        self.scalar_consts = {
            k: float(v)
            for k, v in env.constants.items()
            if isinstance(v, (int, float)) and not isinstance(v, bool)
        }

    # names that are not state variables
    def _global(self, name: Name, allow_formals=(), ctx: str = ""):
        if name.id in allow_formals:
            return Var("formal", name.id)
        if name.id in self.env.parameters:
            self.used_params.add(name.id)
            return Var("param", name.id)
        if name.id in self.scalar_consts:
            return Num(self.scalar_consts[name.id])
        if name.id in self.env.constants:
            raise CheckError.at(f"constant '{name.id}' is not a scalar and cannot be used {ctx}", name.pos)
        raise UndefinedSymbolError.at(name.id, name.pos)

    def _call(self, e: Call, recurse, init_ok=False):
        args = tuple(recurse(a) for a in e.args)
        b = get_builtin(e.func)
        if e.func in self.funcs:
            f = self.funcs[e.func]
            if len(f.params) != len(args):
                raise CheckError.at(f"'{e.func}' takes {len(f.params)} arguments, {len(args)} given", e.pos)
            return FnCall("user", e.func, args)
        if e.func in self.env.functions:
            if self.env.functions[e.func] != len(args):
                raise CheckError.at(
                    f"'{e.func}' takes {self.env.functions[e.func]} arguments, {len(args)} given", e.pos
                )
            self.used_externs.add(e.func)
            return FnCall("extern", e.func, args)
        if b is not None:
            if b.arity != len(args):
                raise CheckError.at(f"'{e.func}' takes {b.arity} arguments, {len(args)} given", e.pos)
            if b.init_only and not init_ok:
                raise CheckError.at(f"'{e.func}' may only be used in init lines", e.pos)
            return FnCall("builtin", e.func, args)
        raise UndefinedSymbolError.at(e.func, e.pos)

    def resolve(self, e, name_fn, *, init_ok=False, conditional_ok=False, in_test=False, allow_lists=False):
        """Generic structural resolution; ``name_fn`` maps a Name to a node."""

        def rec(x, in_test=in_test, allow_lists=False):
            return self.resolve(
                x, name_fn, init_ok=init_ok, conditional_ok=conditional_ok, in_test=in_test, allow_lists=allow_lists
            )

        if isinstance(e, Num):
            return e
        if isinstance(e, _ObsMarker):
            return Var("obs", e.var, e.time)
        if isinstance(e, Str):
            raise CheckError.at("string literal outside a payoff name", e.pos)
        if isinstance(e, Name):
            return name_fn(e)
        if isinstance(e, Call):
            b = get_builtin(e.func)
            lists = b is not None and b.init_only
            return self._call(e, lambda a: rec(a, allow_lists=lists), init_ok)
        if isinstance(e, BinOp):
            if e.op == "%":
                raise CheckError.at("'%' is only allowed in payoff name templates", e.pos)
            return BinOp(e.op, rec(e.left), rec(e.right))
        if isinstance(e, UnaryOp):
            if e.op == "not" and not in_test:
                raise CheckError.at("'not' is only allowed in function-definition conditionals", e.pos)
            return UnaryOp(e.op, rec(e.operand))
        if isinstance(e, Compare):
            if not in_test:
                raise CheckError.at("comparisons are only allowed in function-definition conditionals", e.pos)
            return Compare(e.op, rec(e.left), rec(e.right))
        if isinstance(e, BoolOp):
            if not in_test:
                raise CheckError.at(f"'{e.op}' is only allowed in function-definition conditionals", e.pos)
            return BoolOp(e.op, rec(e.left), rec(e.right))
        if isinstance(e, IfExp):
            if not conditional_ok:
                raise CheckError.at("conditional expressions are only allowed in function definitions", e.pos)
            return IfExp(rec(e.body), rec(e.test, in_test=True), rec(e.orelse))
        if isinstance(e, ListLit):
            if not allow_lists:
                raise CheckError.at("list literal not allowed here", e.pos)
            return N.ListLit(tuple(rec(i) for i in e.items))
        if isinstance(e, TupleLit):
            raise CheckError.at("tuple not allowed here", e.pos)
        if isinstance(e, Observe):
            raise CheckError.at("observations 'var[time]' are only allowed in payoffs", e.pos)
        raise CheckError(f"unsupported expression {e!r}")


def _user_function_cycles(funcs: dict[str, FunctionDef]):
    graph = {
        name: sorted({n.func for n in N.walk(f.body) if isinstance(n, Call) and n.func in funcs})
        for name, f in funcs.items()
    }
    state: dict[str, int] = {}

    def visit(u, path):
        state[u] = 1
        for v in graph[u]:
            if state.get(v) == 1:
                raise CheckError.at(f"recursive function definitions: {' -> '.join(path + [v])}", funcs[u].pos)
            if state.get(v) is None:
                visit(v, path + [v])
        state[u] = 2

    for name in sorted(graph):
        if state.get(name) is None:
            visit(name, [name])


def check(script: Script, env: Environment | None = None) -> CheckedProgram:
    """Validate a script against an environment and resolve it for execution."""
    env = env or Environment()
    r = _Resolver(script, env)

    if not script.system_lines:
        raise CheckError("no system lines")

    # -- classify system variables
    defined: dict[str, Any] = {}
    for line in script.system_lines:
        if line.var in defined:
            raise CheckError.at(f"variable '{line.var}' is defined more than once", line.pos)
        defined[line.var] = line
        {IncrementEq: r.stepped, AssignEq: r.assigned, MarkovianUpdate: r.markovian}[type(line)].append(line.var)
    state_vars = set(defined)

    for v in state_vars:
        clash = None
        if v in RESERVED:
            clash = "a reserved name"
        elif v in env.parameters:
            clash = "a parameter"
        elif v in env.constants:
            clash = "a constant"
        elif v in r.funcs or v in env.functions or get_builtin(v) is not None:
            clash = "a function"
        elif v in r.brownians:
            clash = "a Brownian"
        if clash:
            raise CheckError.at(f"variable '{v}' is also {clash}", defined[v].pos)
    for b in r.brownians:
        if b in env.parameters or b in env.constants:
            raise CheckError(f"Brownian 'd_{b}' clashes with a parameter or constant")
    for f in r.funcs:
        if f in env.functions or f in env.parameters:
            raise CheckError.at(f"function '{f}' clashes with an environment name", r.funcs[f].pos)

    # -- functions
    _user_function_cycles(r.funcs)
    functions = {}
    for f in script.function_defs:

        def fname(n: Name, f=f):
            if n.id in state_vars or n.id == "t" or n.id.startswith("d_"):
                raise CheckError.at(
                    f"function '{f.name}' refers to '{n.id}'; functions may only use their arguments and parameters",
                    n.pos,
                )
            return r._global(n, f.params, "in a function body")

        functions[f.name] = (f.params, r.resolve(f.body, fname, conditional_ok=True))

    # -- system lines
    order = {line.var: i for i, line in enumerate(script.system_lines)}
    steps = []
    for idx, line in enumerate(script.system_lines):
        kind = {IncrementEq: "increment", AssignEq: "assign", MarkovianUpdate: "markovian"}[type(line)]

        def sname(n: Name, idx=idx, kind=kind, line=line):
            nid = n.id
            if nid == "t":
                return Var("t")
            if nid == "d_t":
                if kind != "increment":
                    raise CheckError.at("'d_t' may only appear in increments", n.pos)
                return Var("dt")
            if nid.startswith("d_") and len(nid) > 2:
                if kind != "increment":
                    raise CheckError.at(f"Brownian '{nid}' may only appear in increments", n.pos)
                return Var("dW", nid[2:])
            if nid in state_vars:
                if kind == "increment" or kind == "markovian":
                    return Var("old", nid)
                return Var("new", nid) if order[nid] < idx else Var("old", nid)
            if nid.endswith("_new") and nid[:-4] in state_vars:
                base = nid[:-4]
                if kind == "increment":
                    raise CheckError.at(f"'{nid}' is not allowed in increments", n.pos)
                if order[base] >= idx:
                    raise CheckError.at(
                        f"'{nid}' refers to '{base}', which is not updated before '{line.var}' in the step order",
                        n.pos,
                    )
                return Var("new", base)
            return r._global(n, (), "in a system line")

        steps.append(Step(kind, line.var, r.resolve(line.rhs, sname), line.pos.line if line.pos else None))

    # -- initial values
    inits = {}
    for i in script.inits:
        if i.var not in state_vars:
            raise CheckError.at(f"init for unknown variable '{i.var}'", i.pos)
        if i.var in inits:
            raise CheckError.at(f"duplicate init for '{i.var}'", i.pos)
        inits[i.var] = i

    def iname(n: Name):
        nid = n.id
        if nid == "t":
            return Num(0.0)
        if nid in state_vars:
            return Var("init", nid)
        if nid.endswith("_new") and nid[:-4] in state_vars:
            return Var("init", nid[:-4])
        if nid.startswith("d_"):
            raise CheckError.at(f"'{nid}' cannot be used when computing initial values", n.pos)
        return r._global(n, (), "in an init line")

    candidates = []  # (var, resolved expr, pos)
    for v, i in inits.items():
        candidates.append((v, r.resolve(i.expr, iname, init_ok=True), i.pos))
    for line in script.system_lines:
        if line.var in inits:
            continue
        if isinstance(line, AssignEq):
            candidates.append((line.var, r.resolve(line.rhs, iname), line.pos))
        else:
            what = "stepped" if isinstance(line, IncrementEq) else "Markovian"
            raise CheckError.at(
                f"missing init for {what} variable '{line.var}' and no initial value can be derived", line.pos
            )

    deps = {
        v: sorted({n.name for n in _walk_resolved(e) if isinstance(n, Var) and n.kind == "init"} - {v})
        for v, e, _ in candidates
    }
    for v, e, pos in candidates:
        if any(isinstance(n, Var) and n.kind == "init" and n.name == v for n in _walk_resolved(e)):
            raise CheckError.at(f"initial value of '{v}' depends on itself", pos)
    init_plan = []
    done: set[str] = set()
    pending = list(candidates)
    while pending:
        for k, (v, e, pos) in enumerate(pending):
            if all(d in done for d in deps[v]):
                init_plan.append((v, e))
                done.add(v)
                del pending[k]
                break
        else:
            names = ", ".join(v for v, _, _ in pending)
            raise CheckError.at(f"cyclic assignment dependencies among initial values: {names}", pending[0][2])

    # -- correlations
    corr = []
    seen_pairs = set()
    bidx = {b: i for i, b in enumerate(r.brownians)}
    used_brownians = {
        n.name for s in steps for n in _walk_resolved(s.rhs) if isinstance(n, Var) and n.kind == "dW"
    }
    for c in script.correlations:
        for b in (c.a, c.b):
            if b not in used_brownians:
                raise CheckError.at(f"correlation refers to Brownian 'd_{b}' that no increment uses", c.pos)
        if c.a == c.b:
            raise CheckError.at("a Brownian cannot be correlated with itself", c.pos)
        key = frozenset((c.a, c.b))
        if key in seen_pairs:
            raise CheckError.at(f"duplicate correlation for d_{c.a}, d_{c.b}", c.pos)
        seen_pairs.add(key)

        def cname(n: Name):
            if n.id == "t":
                return Var("t")
            if n.id in state_vars:
                return Var("old", n.id)
            if n.id.startswith("d_"):
                raise CheckError.at("correlation expressions cannot use increments", n.pos)
            return r._global(n, (), "in a correlation")

        i, j = sorted((bidx[c.a], bidx[c.b]))
        corr.append((i, j, r.resolve(c.rho, cname)))

    # -- payoffs
    payoffs = []
    observations: set = set()
    names_seen: set[str] = set()
    base_values = dict(env.constants)
    for decl in script.payoffs:
        if decl.loop is not None:
            if "t" not in decl.loop.vars:
                raise CheckError.at("loop payoffs must bind the payment time 't'", decl.pos)
            lists = [const_eval(e, base_values) for e in decl.loop.exprs]
            for v, lst in zip(decl.loop.vars, lists):
                if not isinstance(lst, (list, tuple)):
                    raise CheckError.at(f"loop values for '{v}' must be a list", decl.pos)
            lengths = {len(lst) for lst in lists}
            if len(lengths) != 1:
                raise CheckError.at(f"loop value lists have mismatched lengths {sorted(len(x) for x in lists)}", decl.pos)
            bindings = [dict(zip(decl.loop.vars, combo)) for combo in zip(*lists)]
        else:
            bindings = [{}]
        for b in bindings:
            values = {**base_values, **b}
            if decl.loop is not None:
                pay_time = b["t"]
                name = const_eval(decl.name, values)
            else:
                pay_time = const_eval(decl.pay_time, values)
                name = decl.name.value
            if not isinstance(name, str):
                raise CheckError.at("payoff name must evaluate to a string", decl.pos)
            try:
                pay_time = float(pay_time)
            except (TypeError, ValueError):
                raise CheckError.at("payment time must be a number", decl.pos) from None
            if not math.isfinite(pay_time) or pay_time < 0:
                raise CheckError.at(f"payment time {pay_time} is not representable on a time grid", decl.pos)
            if name in names_seen:
                raise CheckError.at(f"duplicate payoff name '{name}'", decl.pos)
            names_seen.add(name)
            payoffs.append(_resolve_payoff(r, decl, name, pay_time, b, values, state_vars, observations))

    if r.brownians and not any(s.kind == "increment" for s in steps):
        raise CheckError("Brownians declared but no increments")

    return CheckedProgram(
        script=script,
        functions=functions,
        brownians=r.brownians,
        stepped=tuple(r.stepped),
        assigned=tuple(r.assigned),
        markovian=tuple(r.markovian),
        steps=tuple(steps),
        init_plan=tuple(init_plan),
        correlations=tuple(corr),
        payoffs=tuple(payoffs),
        observations=tuple(sorted(observations)),
        free_params=tuple(sorted(r.used_params)),
        externs=tuple(sorted(r.used_externs)),
        constants=dict(r.scalar_consts),
    )


def _resolve_payoff(r: _Resolver, decl, name, pay_time, binding, values, state_vars, observations):
    def pname(at_time):
        def f(n: Name):
            nid = n.id
            if nid in binding:
                v = binding[nid]
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise CheckError.at(f"loop variable '{nid}' is not numeric", n.pos)
                return Num(float(v))
            if nid == "t":
                return Num(pay_time)
            if nid in state_vars:
                observations.add((nid, at_time))
                return Var("obs", nid, at_time)
            if nid.startswith("d_"):
                raise CheckError.at(f"payoffs cannot use increments ('{nid}')", n.pos)
            return r._global(n, (), "in a payoff")

        return f

    def observed(e, fallback_time):
        # rewrite var[time] into resolved observations before generic resolution
        if isinstance(e, Observe):
            if e.var not in state_vars:
                raise CheckError.at(f"cannot observe '{e.var}': not a simulated variable", e.pos)
            t_obs = const_eval(e.time, values)
            try:
                t_obs = float(t_obs)
            except (TypeError, ValueError):
                raise CheckError.at("observation time must be a number", e.pos) from None
            if not math.isfinite(t_obs) or t_obs < 0:
                raise CheckError.at(f"observation time {t_obs} is not representable on a time grid", e.pos)
            if fallback_time == 0.0:
                t_obs = 0.0
            observations.add((e.var, t_obs))
            return _ObsMarker(e.var, t_obs)
        return _map_children(e, lambda c: observed(c, fallback_time))

    def full(e, at_time):
        pre = observed(e, at_time)
        return r.resolve(pre, pname(at_time))

    expr = full(decl.expr, pay_time)
    mode_expr = numeraire0 = None
    if decl.mode.expr is not None:
        mode_expr = full(decl.mode.expr, pay_time)
        if decl.mode.kind == "numeraire":
            numeraire0 = full(decl.mode.expr, 0.0)
    return ConcretePayoff(name, pay_time, expr, decl.mode.kind, mode_expr, numeraire0)


def _map_children(e, fn):
    if isinstance(e, (Num, Str, Name, _ObsMarker)):
        return e
    if isinstance(e, Call):
        return Call(e.func, tuple(fn(a) for a in e.args), e.pos)
    if isinstance(e, BinOp):
        return BinOp(e.op, fn(e.left), fn(e.right), e.pos)
    if isinstance(e, UnaryOp):
        return UnaryOp(e.op, fn(e.operand), e.pos)
    if isinstance(e, Compare):
        return Compare(e.op, fn(e.left), fn(e.right), e.pos)
    if isinstance(e, BoolOp):
        return BoolOp(e.op, fn(e.left), fn(e.right), e.pos)
    if isinstance(e, IfExp):
        return IfExp(fn(e.body), fn(e.test), fn(e.orelse), e.pos)
    if isinstance(e, ListLit):
        return ListLit(tuple(fn(i) for i in e.items), e.pos)
    if isinstance(e, TupleLit):
        return TupleLit(tuple(fn(i) for i in e.items), e.pos)
    return e


def _walk_resolved(e):
    stack = [e]
    while stack:
        x = stack.pop()
        yield x
        if isinstance(x, FnCall):
            stack.extend(x.args)
        elif isinstance(x, (BinOp, Compare, BoolOp)):
            stack.extend((x.left, x.right))
        elif isinstance(x, UnaryOp):
            stack.append(x.operand)
        elif isinstance(x, IfExp):
            stack.extend((x.body, x.test, x.orelse))
        elif isinstance(x, N.ListLit):
            stack.extend(x.items)


walk_resolved = _walk_resolved


def depends_on_path(e, functions: Optional[Mapping] = None) -> bool:
    """True if a resolved expression can vary across paths (reads state or noise)."""
    for x in _walk_resolved(e):
        if isinstance(x, Var) and x.kind in ("old", "new", "init", "obs", "dW"):
            return True
    return False
