"""Pretty-printer producing script text that re-parses to the same AST."""
from __future__ import annotations

from .nodes import (
    AssignEq,
    BinOp,
    BoolOp,
    Call,
    Compare,
    Correlation,
    FunctionDef,
    IfExp,
    IncrementEq,
    Init,
    ListLit,
    MarkovianUpdate,
    Name,
    Num,
    Observe,
    PayoffDecl,
    Script,
    Str,
    TupleLit,
    UnaryOp,
)

# binding strength; higher binds tighter
_PREC = {
    "if": 1,
    "or": 2,
    "and": 3,
    "not": 4,
    "cmp": 5,
    "+": 6,
    "-": 6,
    "*": 7,
    "/": 7,
    "%": 7,
    "unary": 8,
    "**": 9,
    "atom": 10,
}


def _prec(e) -> int:
    if isinstance(e, IfExp):
        return _PREC["if"]
    if isinstance(e, BoolOp):
        return _PREC[e.op]
    if isinstance(e, UnaryOp):
        return _PREC["not"] if e.op == "not" else _PREC["unary"]
    if isinstance(e, Compare):
        return _PREC["cmp"]
    if isinstance(e, BinOp):
        return _PREC[e.op]
    return _PREC["atom"]


def _num(v: float) -> str:
    s = repr(float(v))
    if s in ("inf", "nan", "-inf") or s.startswith("-"):
        raise ValueError(f"cannot print numeric literal {v!r}")
    return s


def _wrap(e, min_prec: int) -> str:
    s = print_expr(e)
    return f"({s})" if _prec(e) < min_prec else s


def print_expr(e) -> str:
    if isinstance(e, Num):
        return _num(e.value)
    if isinstance(e, Str):
        body = e.value.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")
        return f'"{body}"'
    if isinstance(e, Name):
        return e.id
    if isinstance(e, Call):
        return f"{e.func}({', '.join(print_expr(a) for a in e.args)})"
    if isinstance(e, Observe):
        return f"{e.var}[{print_expr(e.time)}]"
    if isinstance(e, ListLit):
        return "[" + ", ".join(print_expr(a) for a in e.items) + "]"
    if isinstance(e, TupleLit):
        inner = ", ".join(print_expr(a) for a in e.items)
        return f"({inner},)" if len(e.items) == 1 else f"({inner})"
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        if e.op == "**":
            # right-associative; the left operand must be an atom
            return f"{_wrap(e.left, _PREC['atom'])}**{_wrap(e.right, _PREC['unary'])}"
        return f"{_wrap(e.left, p)} {e.op} {_wrap(e.right, p + 1)}"
    if isinstance(e, UnaryOp):
        if e.op == "not":
            return f"not {_wrap(e.operand, _PREC['not'])}"
        return f"{e.op}{_wrap(e.operand, _PREC['unary'])}"
    if isinstance(e, Compare):
        p = _PREC["cmp"]
        return f"{_wrap(e.left, p + 1)} {e.op} {_wrap(e.right, p + 1)}"
    if isinstance(e, BoolOp):
        p = _PREC[e.op]
        return f"{_wrap(e.left, p)} {e.op} {_wrap(e.right, p + 1)}"
    if isinstance(e, IfExp):
        p = _PREC["if"]
        return f"{_wrap(e.body, p + 1)} if {_wrap(e.test, p + 1)} else {_wrap(e.orelse, p)}"
    raise TypeError(f"cannot print {e!r}")


def _mode(m) -> str:
    return m.kind if m.expr is None else f"{m.kind} {print_expr(m.expr)}"


def print_statement(s) -> str:
    if isinstance(s, FunctionDef):
        return f"{s.name}({', '.join(s.params)}) = {print_expr(s.body)}"
    if isinstance(s, IncrementEq):
        return f"d_{s.var} = {print_expr(s.rhs)}"
    if isinstance(s, (AssignEq, MarkovianUpdate)):
        return f"{s.var} = {print_expr(s.rhs)}"
    if isinstance(s, Correlation):
        return f"d_{s.a}*d_{s.b} = {print_expr(s.rho)}"
    if isinstance(s, Init):
        return f"init: {s.var} = {print_expr(s.expr)}"
    if isinstance(s, PayoffDecl):
        tail = f"pays {print_expr(s.expr)} {_mode(s.mode)}"
        if s.loop is not None:
            vars_ = ", ".join(s.loop.vars)
            lists = ", ".join(print_expr(e) for e in s.loop.exprs)
            return f"for ({vars_}) in ({lists}): {print_expr(s.name)} {tail}"
        return f"{print_expr(s.pay_time)}: {print_expr(s.name)} {tail}"
    raise TypeError(f"cannot print {s!r}")


def print_script(script: Script) -> str:
    sections = [
        ("# functions", script.function_defs),
        ("# system", script.system_lines),
        ("# correlations", script.correlations),
        ("# initial values", script.inits),
        ("# payoffs", script.payoffs),
    ]
    out: list[str] = []
    for header, stmts in sections:
        if not stmts:
            continue
        out.append(header)
        out.extend(print_statement(s) for s in stmts)
        out.append("")
    return "\n".join(out)
