"""AST node types for simulation scripts.

Source positions are carried for diagnostics but excluded from equality, so
two parses of equivalent text compare equal.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Union


@dataclass(frozen=True)
class Pos:
    line: int
    col: int

    def __str__(self):
        return f"line {self.line}, column {self.col}"


def _pos():
    return field(default=None, compare=False, repr=False)


# -- expressions -------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Str:
    value: str
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Name:
    id: str
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class UnaryOp:
    op: str
    operand: "Expr"
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Compare:
    op: str
    left: "Expr"
    right: "Expr"
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class BoolOp:
    op: str
    left: "Expr"
    right: "Expr"
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class IfExp:
    body: "Expr"
    test: "Expr"
    orelse: "Expr"
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Observe:
    """``var[time]``: value of a simulated variable at an observation time."""

    var: str
    time: "Expr"
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class ListLit:
    items: tuple
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class TupleLit:
    items: tuple
    pos: Optional[Pos] = _pos()


Expr = Union[Num, Str, Name, Call, BinOp, UnaryOp, Compare, BoolOp, IfExp, Observe, ListLit, TupleLit]


def children(e) -> tuple:
    if isinstance(e, (Num, Str, Name)):
        return ()
    if isinstance(e, Call):
        return e.args
    if isinstance(e, (BinOp, Compare, BoolOp)):
        return (e.left, e.right)
    if isinstance(e, UnaryOp):
        return (e.operand,)
    if isinstance(e, IfExp):
        return (e.body, e.test, e.orelse)
    if isinstance(e, Observe):
        return (e.time,)
    if isinstance(e, (ListLit, TupleLit)):
        return e.items
    raise TypeError(f"not an expression node: {e!r}")


def walk(e) -> Iterator:
    """Pre-order traversal of an expression tree."""
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(children(node)))


def names_in(e) -> list[Name]:
    return [n for n in walk(e) if isinstance(n, Name)]


# -- statements --------------------------------------------------------------


@dataclass(frozen=True)
class FunctionDef:
    name: str
    params: tuple
    body: Expr
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class IncrementEq:
    """``d_x = rhs``: x_after = x_before + rhs."""

    var: str
    rhs: Expr
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class AssignEq:
    var: str
    rhs: Expr
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class MarkovianUpdate:
    """Assignment whose target also appears on the right-hand side."""

    var: str
    rhs: Expr
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Correlation:
    a: str
    b: str
    rho: Expr
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Init:
    var: str
    expr: Expr
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class DiscountMode:
    kind: str  # nodiscount | discount | numeraire
    expr: Optional[Expr] = None


@dataclass(frozen=True)
class LoopBinding:
    vars: tuple
    exprs: tuple


@dataclass(frozen=True)
class PayoffDecl:
    pay_time: Optional[Expr]
    name: Expr
    expr: Expr
    mode: DiscountMode
    loop: Optional[LoopBinding] = None
    pos: Optional[Pos] = _pos()


SystemLine = Union[IncrementEq, AssignEq, MarkovianUpdate]


@dataclass(frozen=True)
class Script:
    function_defs: tuple = ()
    system_lines: tuple = ()
    correlations: tuple = ()
    inits: tuple = ()
    payoffs: tuple = ()

    @property
    def init_map(self) -> dict:
        return {i.var: i.expr for i in self.inits}

    @property
    def brownians(self) -> tuple:
        """Brownian names (without ``d_``) in order of first use."""
        seen: list[str] = []
        for line in self.system_lines:
            for n in names_in(line.rhs):
                if n.id.startswith("d_") and n.id != "d_t" and n.id[2:] not in seen:
                    seen.append(n.id[2:])
        for c in self.correlations:
            for b in (c.a, c.b):
                if b not in seen:
                    seen.append(b)
        return tuple(seen)
