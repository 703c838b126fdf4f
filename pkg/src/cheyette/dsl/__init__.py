"""Scripting language for SDE systems and payoffs."""
from .builtins import builtin_names, get_builtin, register_builtin, unregister_builtin
from .checker import CheckedProgram, ConcretePayoff, Environment, FnCall, Step, Var, check, const_eval
from .correlation import cholesky_lower, correlation_matrix
from .errors import CheckError, CorrelationError, ScriptError, ScriptSyntaxError, UndefinedSymbolError
from .evaluate import ExternFunction, Frame, compile_expr, evaluate
from .nodes import Script
from .parser import parse, parse_expr
from .printer import print_expr, print_script


def program_correlation_matrix(program: CheckedProgram, params=None, state=None, t: float = 0.0):
    """Evaluate a program's declared correlations into a validated matrix."""
    fr = Frame(old=dict(state or {}), params=dict(params or {}), t=t)
    entries = {
        (i, j): evaluate(e, fr, program.functions) for i, j, e in program.correlations
    }
    return correlation_matrix(len(program.brownians), {(j, i): v for (i, j), v in entries.items()})


__all__ = [
    "CheckError",
    "CheckedProgram",
    "ConcretePayoff",
    "CorrelationError",
    "Environment",
    "ExternFunction",
    "FnCall",
    "Frame",
    "Script",
    "ScriptError",
    "ScriptSyntaxError",
    "Step",
    "UndefinedSymbolError",
    "Var",
    "builtin_names",
    "check",
    "cholesky_lower",
    "compile_expr",
    "const_eval",
    "correlation_matrix",
    "evaluate",
    "get_builtin",
    "parse",
    "parse_expr",
    "print_expr",
    "print_script",
    "program_correlation_matrix",
    "register_builtin",
    "unregister_builtin",
]
