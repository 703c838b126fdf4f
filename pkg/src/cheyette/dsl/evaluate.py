"""Closure compilation of resolved expressions for the numpy interpreter.

Each resolved expression is turned into a Python callable taking a
:class:`Frame`. The callables perform exactly the numpy operations the
vectorised code generator emits, in the same order, which is what makes
interpreter and generated code agree bit for bit.
"""
from __future__ import annotations

import operator
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from .builtins import get_builtin
from .checker import FnCall, Var
from .nodes import BinOp, BoolOp, Compare, IfExp, ListLit, Num, UnaryOp

BINARY = {
    "+": operator.add,
    "-": operator.sub,
    "*": operator.mul,
    "/": operator.truediv,
    "**": operator.pow,
}
COMPARE = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
    "!=": operator.ne,
}
BOOL = {"and": np.logical_and, "or": np.logical_or}


@dataclass
class Frame:
    """Values visible to an expression at one evaluation point."""

    old: dict = field(default_factory=dict)
    new: dict = field(default_factory=dict)
    init: dict = field(default_factory=dict)
    obs: dict = field(default_factory=dict)
    params: Mapping = field(default_factory=dict)
    externs: Mapping = field(default_factory=dict)
    dW: dict = field(default_factory=dict)
    formals: dict = field(default_factory=dict)
    t: Any = 0.0
    dt: Any = 0.0


class ExternFunction:
    """Piecewise-constant tabulated function of a scalar argument.

    ``f(x) = values[i]`` where ``i`` is the last knot with ``knots[i] <= x``,
    clipped to the table. Intervals are right-open, so at a knot the value of
    the interval starting there is used; at the last knot the previous
    interval applies.
    """

    def __init__(self, knots, values, name: str = ""):
        self.knots = np.asarray(knots, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.knots.ndim != 1 or len(self.knots) != len(self.values) + 1:
            raise ValueError("need len(knots) == len(values) + 1")
        if len(self.values) < 1 or np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        self.name = name

    def __call__(self, x):
        i = np.clip(np.searchsorted(self.knots, x, side="right") - 1, 0, len(self.values) - 1)
        return self.values[i]

    @classmethod
    def from_curve(cls, curve, name: str = "initfwd") -> "ExternFunction":
        return cls(curve.times, curve.forwards, name)


def compile_expr(e, functions: Mapping[str, Any], _cache: dict | None = None) -> Callable[[Frame], Any]:
    """Compile a resolved expression into ``f(frame) -> value``."""
    cache = {} if _cache is None else _cache

    def c(x):
        return compile_expr(x, functions, cache)

    if isinstance(e, Num):
        v = float(e.value)
        return lambda fr: v
    if isinstance(e, Var):
        k, name = e.kind, e.name
        if k == "old":
            return lambda fr: fr.old[name]
        if k == "new":
            return lambda fr: fr.new[name]
        if k == "init":
            return lambda fr: fr.init[name]
        if k == "obs":
            key = (name, e.time)
            return lambda fr: fr.obs[key]
        if k == "param":
            return lambda fr: fr.params[name]
        if k == "formal":
            return lambda fr: fr.formals[name]
        if k == "t":
            return lambda fr: fr.t
        if k == "dt":
            return lambda fr: fr.dt
        if k == "dW":
            return lambda fr: fr.dW[name]
        raise ValueError(f"unknown variable kind {k}")
    if isinstance(e, BinOp):
        op = BINARY[e.op]
        lf, rf = c(e.left), c(e.right)
        return lambda fr: op(lf(fr), rf(fr))
    if isinstance(e, UnaryOp):
        of = c(e.operand)
        if e.op == "-":
            return lambda fr: -of(fr)
        if e.op == "+":
            return of
        return lambda fr: np.logical_not(of(fr))
    if isinstance(e, Compare):
        op = COMPARE[e.op]
        lf, rf = c(e.left), c(e.right)
        return lambda fr: op(lf(fr), rf(fr))
    if isinstance(e, BoolOp):
        op = BOOL[e.op]
        lf, rf = c(e.left), c(e.right)
        return lambda fr: op(lf(fr), rf(fr))
    if isinstance(e, IfExp):
        bf, tf, ef = c(e.body), c(e.test), c(e.orelse)
        return lambda fr: np.where(tf(fr), bf(fr), ef(fr))
    if isinstance(e, ListLit):
        items = [c(i) for i in e.items]
        return lambda fr: [f(fr) for f in items]
    if isinstance(e, FnCall):
        args = [c(a) for a in e.args]
        if e.kind == "builtin":
            impl = get_builtin(e.name).impl
            if len(args) == 1:
                a0 = args[0]
                return lambda fr: impl(a0(fr))
            return lambda fr: impl(*[a(fr) for a in args])
        if e.kind == "extern":
            name = e.name
            return lambda fr: fr.externs[name](*[a(fr) for a in args])
        if e.kind == "user":
            if e.name not in cache:
                cache[e.name] = None  # placeholder; recursion is rejected by the checker
                params, body = functions[e.name]
                cache[e.name] = (params, c(body))
            params, body_fn = cache[e.name]

            def call(fr, params=params, body_fn=body_fn):
                sub = Frame(params=fr.params, externs=fr.externs, formals=dict(zip(params, [a(fr) for a in args])))
                return body_fn(sub)

            return call
    raise TypeError(f"cannot compile {e!r}")


def evaluate(e, frame: Frame, functions: Mapping[str, Any] | None = None):
    return compile_expr(e, functions or {})(frame)
