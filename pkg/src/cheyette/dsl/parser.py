"""Lexer and recursive-descent parser for simulation scripts.

A script is a sequence of logical lines. ``#`` starts a comment, a trailing
backslash joins a line with the next one. Each logical line is one of:

    name(p1, p2) = expr [if cond else expr]     function definition
    d_x = expr                                  increment
    x = expr                                    assignment / Markovian update
    d_A*d_B = expr                              correlation
    init: x = expr                              initial value
    for (t, k) in (e1, e2): "fmt" % k pays expr MODE    looped payoff
    time: name pays expr MODE                   single payoff

where MODE is ``nodiscount``, ``discount expr`` or ``numeraire expr``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ScriptSyntaxError
from .nodes import (
    AssignEq,
    BinOp,
    BoolOp,
    Call,
    Compare,
    Correlation,
    DiscountMode,
    FunctionDef,
    IfExp,
    IncrementEq,
    Init,
    ListLit,
    LoopBinding,
    MarkovianUpdate,
    Name,
    Num,
    Observe,
    PayoffDecl,
    Pos,
    Script,
    Str,
    TupleLit,
    UnaryOp,
    names_in,
)

KEYWORDS = frozenset(
    {"if", "else", "and", "or", "not", "for", "in", "pays", "nodiscount", "discount", "numeraire"}
)
MODE_KEYWORDS = ("nodiscount", "discount", "numeraire")

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\f\r]+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<str>"(?:[^"\\]|\\.)*"|'(?:[^'\\]|\\.)*')
  | (?P<op>\*\*|<=|>=|==|!=|[-+*/%()\[\],:=<>])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # num | name | kw | str | op | end
    text: str
    pos: Pos


@dataclass
class LogicalLine:
    text: str
    positions: list  # Pos for every character of text
    first_line: int

    def pos_at(self, i: int) -> Pos:
        if i < len(self.positions):
            return self.positions[i]
        if self.positions:
            last = self.positions[-1]
            return Pos(last.line, last.col + 1)
        return Pos(self.first_line, 1)


def _strip_comment(line: str) -> str:
    quote = None
    i = 0
    while i < len(line):
        ch = line[i]
        if quote:
            if ch == "\\":
                i += 2
                continue
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            return line[:i]
        i += 1
    return line


def logical_lines(text: str) -> list[LogicalLine]:
    out: list[LogicalLine] = []
    buf: list[str] = []
    pos: list[Pos] = []
    start = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).rstrip()
        cont = line.endswith("\\")
        if cont:
            line = line[:-1]
        if start is None:
            start = lineno
        for col, ch in enumerate(line, start=1):
            buf.append(ch)
            pos.append(Pos(lineno, col))
        if cont:
            buf.append(" ")
            pos.append(Pos(lineno, len(line) + 1))
            continue
        if "".join(buf).strip():
            out.append(LogicalLine("".join(buf), pos, start))
        buf, pos, start = [], [], None
    if "".join(buf).strip():
        out.append(LogicalLine("".join(buf), pos, start))
    return out


def tokenize(ll: LogicalLine) -> list[Token]:
    toks: list[Token] = []
    i = 0
    text = ll.text
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if m is None:
            p = ll.pos_at(i)
            raise ScriptSyntaxError(f"unexpected character {text[i]!r}", p.line, p.col)
        kind = m.lastgroup
        if kind != "ws":
            tok = m.group()
            if kind == "name" and tok in KEYWORDS:
                kind = "kw"
            toks.append(Token(kind, tok, ll.pos_at(i)))
        i = m.end()
    toks.append(Token("end", "", ll.pos_at(len(text))))
    return toks


def _unquote(s: str) -> str:
    body = s[1:-1]
    return re.sub(r"\\(.)", lambda m: {"n": "\n", "t": "\t"}.get(m.group(1), m.group(1)), body)


class _Parser:
    def __init__(self, toks: list[Token]):
        self.toks = toks
        self.i = 0

    # -- token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def advance(self) -> Token:
        t = self.toks[self.i]
        if t.kind != "end":
            self.i += 1
        return t

    def at(self, text: str, kind: str | None = None) -> bool:
        t = self.tok
        return t.text == text and (kind is None or t.kind == kind) and t.kind != "str"

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.advance()
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.error(f"expected {text!r}")
        return self.advance()

    def expect_name(self) -> Token:
        if self.tok.kind != "name":
            self.error("expected a name")
        return self.advance()

    def error(self, msg: str, tok: Token | None = None):
        tok = tok or self.tok
        found = "end of line" if tok.kind == "end" else repr(tok.text)
        raise ScriptSyntaxError(f"{msg}, found {found}", tok.pos.line, tok.pos.col)

    def expect_end(self):
        if self.tok.kind != "end":
            self.error("unexpected trailing input")

    # -- expressions (lowest to highest precedence)
    def expr(self):
        body = self.or_expr()
        if self.at("if", "kw"):
            t = self.advance()
            test = self.or_expr()
            self.expect("else")
            orelse = self.expr()
            return IfExp(body, test, orelse, t.pos)
        return body

    def or_expr(self):
        left = self.and_expr()
        while self.at("or", "kw"):
            t = self.advance()
            left = BoolOp("or", left, self.and_expr(), t.pos)
        return left

    def and_expr(self):
        left = self.not_expr()
        while self.at("and", "kw"):
            t = self.advance()
            left = BoolOp("and", left, self.not_expr(), t.pos)
        return left

    def not_expr(self):
        if self.at("not", "kw"):
            t = self.advance()
            return UnaryOp("not", self.not_expr(), t.pos)
        return self.comparison()

    def comparison(self):
        left = self.arith()
        if self.tok.kind == "op" and self.tok.text in ("<", "<=", ">", ">=", "==", "!="):
            t = self.advance()
            right = self.arith()
            if self.tok.kind == "op" and self.tok.text in ("<", "<=", ">", ">=", "==", "!="):
                self.error("chained comparisons are not supported")
            return Compare(t.text, left, right, t.pos)
        return left

    def arith(self):
        left = self.term()
        while self.tok.kind == "op" and self.tok.text in ("+", "-"):
            t = self.advance()
            left = BinOp(t.text, left, self.term(), t.pos)
        return left

    def term(self):
        left = self.unary()
        while self.tok.kind == "op" and self.tok.text in ("*", "/", "%"):
            t = self.advance()
            left = BinOp(t.text, left, self.unary(), t.pos)
        return left

    def unary(self):
        if self.tok.kind == "op" and self.tok.text in ("-", "+"):
            t = self.advance()
            return UnaryOp(t.text, self.unary(), t.pos)
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "**":
            t = self.advance()
            return BinOp("**", base, self.unary(), t.pos)
        return base

    def atom(self):
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Num(float(t.text), t.pos)
        if t.kind == "str":
            self.advance()
            return Str(_unquote(t.text), t.pos)
        if t.kind == "name":
            self.advance()
            if self.at("(", "op"):
                self.advance()
                args = self._items(")")
                return Call(t.text, tuple(args), t.pos)
            if self.at("[", "op"):
                self.advance()
                time = self.expr()
                self.expect("]")
                return Observe(t.text, time, t.pos)
            return Name(t.text, t.pos)
        if t.kind == "op" and t.text == "(":
            self.advance()
            items = self._items(")", allow_trailing=True)
            if len(items) == 1 and not self._trailing_comma:
                return items[0]
            return TupleLit(tuple(items), t.pos)
        if t.kind == "op" and t.text == "[":
            self.advance()
            return ListLit(tuple(self._items("]", allow_trailing=True)), t.pos)
        self.error("expected an expression")

    _trailing_comma = False

    def _items(self, close: str, allow_trailing: bool = False) -> list:
        items = []
        self._trailing_comma = False
        if self.accept(close):
            return items
        while True:
            items.append(self.expr())
            if self.accept(close):
                self._trailing_comma = False
                return items
            self.expect(",")
            if allow_trailing and self.accept(close):
                self._trailing_comma = True
                return items

    # -- statements
    def mode(self) -> DiscountMode:
        t = self.tok
        if t.kind == "kw" and t.text == "nodiscount":
            self.advance()
            return DiscountMode("nodiscount")
        if t.kind == "kw" and t.text in ("discount", "numeraire"):
            self.advance()
            return DiscountMode(t.text, self.expr())
        self.error("expected 'nodiscount', 'discount <expr>' or 'numeraire <expr>'")


def _is_funcdef(toks: list[Token]) -> bool:
    if len(toks) < 4 or toks[0].kind != "name" or toks[1].text != "(":
        return False
    i = 2
    if toks[i].text == ")":
        return toks[i + 1].text == "="
    while True:
        if toks[i].kind != "name":
            return False
        i += 1
        if toks[i].text == ")":
            return toks[i + 1].text == "="
        if toks[i].text != ",":
            return False
        i += 1


def _parse_line(toks: list[Token]):
    p = _Parser(toks)
    first = toks[0]
    has_pays = any(t.kind == "kw" and t.text == "pays" for t in toks)

    if first.kind == "name" and first.text == "init" and toks[1].text == ":":
        p.advance()
        p.advance()
        var = p.expect_name()
        p.expect("=")
        e = p.expr()
        p.expect_end()
        return Init(var.text, e, first.pos)

    if first.kind == "kw" and first.text == "for":
        p.advance()
        p.expect("(")
        names = [p.expect_name().text]
        while p.accept(","):
            names.append(p.expect_name().text)
        p.expect(")")
        p.expect("in")
        p.expect("(")
        exprs = p._items(")")
        if len(exprs) != len(names):
            p.error(f"loop binds {len(names)} variables but gives {len(exprs)} value lists")
        p.expect(":")
        name = p.expr()
        p.expect("pays")
        e = p.expr()
        mode = p.mode()
        p.expect_end()
        return PayoffDecl(None, name, e, mode, LoopBinding(tuple(names), tuple(exprs)), first.pos)

    if has_pays:
        time = p.expr()
        p.expect(":")
        nt = p.tok
        if nt.kind == "name":
            p.advance()
            name = Str(nt.text, nt.pos)
        elif nt.kind == "str":
            p.advance()
            name = Str(_unquote(nt.text), nt.pos)
        else:
            p.error("expected a payoff name")
        p.expect("pays")
        e = p.expr()
        mode = p.mode()
        p.expect_end()
        return PayoffDecl(time, name, e, mode, None, first.pos)

    if _is_funcdef(toks):
        fname = p.advance().text
        p.expect("(")
        params: list[str] = []
        if not p.accept(")"):
            while True:
                params.append(p.expect_name().text)
                if p.accept(")"):
                    break
                p.expect(",")
        if len(set(params)) != len(params):
            raise ScriptSyntaxError(f"duplicate parameter in definition of '{fname}'", first.pos.line, first.pos.col)
        p.expect("=")
        body = p.expr()
        p.expect_end()
        return FunctionDef(fname, tuple(params), body, first.pos)

    if first.kind == "name" and first.text.startswith("d_") and toks[1].text == "*":
        # correlation: d_A * d_B = expr
        ok = (
            len(toks) > 4
            and toks[2].kind == "name"
            and toks[2].text.startswith("d_")
            and toks[3].text == "="
            and first.text != "d_t"
            and toks[2].text != "d_t"
            and len(first.text) > 2
            and len(toks[2].text) > 2
        )
        if not ok:
            raise ScriptSyntaxError(
                "malformed correlation line, expected 'd_A*d_B = expr'", first.pos.line, first.pos.col
            )
        p.i = 4
        rho = p.expr()
        p.expect_end()
        return Correlation(first.text[2:], toks[2].text[2:], rho, first.pos)

    if first.kind == "name" and toks[1].text == "=" and toks[1].kind == "op":
        p.advance()
        p.advance()
        rhs = p.expr()
        p.expect_end()
        if first.text.startswith("d_"):
            if first.text == "d_t" or len(first.text) == 2:
                raise ScriptSyntaxError("cannot define an increment for 't'", first.pos.line, first.pos.col)
            return IncrementEq(first.text[2:], rhs, first.pos)
        if any(n.id == first.text for n in names_in(rhs)):
            return MarkovianUpdate(first.text, rhs, first.pos)
        return AssignEq(first.text, rhs, first.pos)

    p.error("unrecognised statement")


def parse(text: str) -> Script:
    """Parse script text into a :class:`Script`."""
    funcs: list[FunctionDef] = []
    system: list = []
    corr: list[Correlation] = []
    inits: list[Init] = []
    payoffs: list[PayoffDecl] = []
    seen_funcs: dict[str, Pos] = {}
    for ll in logical_lines(text):
        toks = tokenize(ll)
        if toks[0].kind == "end":
            continue
        stmt = _parse_line(toks)
        if isinstance(stmt, FunctionDef):
            if stmt.name in seen_funcs:
                raise ScriptSyntaxError(
                    f"duplicate function '{stmt.name}' (first defined at {seen_funcs[stmt.name]})",
                    stmt.pos.line,
                    stmt.pos.col,
                )
            seen_funcs[stmt.name] = stmt.pos
            funcs.append(stmt)
        elif isinstance(stmt, (IncrementEq, AssignEq, MarkovianUpdate)):
            system.append(stmt)
        elif isinstance(stmt, Correlation):
            corr.append(stmt)
        elif isinstance(stmt, Init):
            inits.append(stmt)
        else:
            payoffs.append(stmt)
    return Script(tuple(funcs), tuple(system), tuple(corr), tuple(inits), tuple(payoffs))


def parse_expr(text: str):
    """Parse a single expression (used by tests and tooling)."""
    lls = logical_lines(text)
    if len(lls) != 1:
        raise ScriptSyntaxError("expected a single expression")
    p = _Parser(tokenize(lls[0]))
    e = p.expr()
    p.expect_end()
    return e
