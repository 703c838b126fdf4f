"""Builtin functions shared by the interpreter and the code generators.

Each builtin carries a numpy implementation plus source templates for the
vectorised (``numpy``) and per-path scalar (``numba``) code generators.
Generated numpy code must perform the very same calls as the interpreter, so
the templates and implementations are kept side by side.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class Builtin:
    name: str
    arity: int
    impl: Callable
    numpy_src: str
    scalar_src: Optional[str] = None
    init_only: bool = False


def _shape(shape) -> tuple:
    return tuple(int(s) for s in np.atleast_1d(shape))


def _positivepart(x):
    return np.maximum(x, 0.0)


def _oneslike(x):
    return np.ones_like(x, dtype=np.float64)


def _zeroslike(x):
    return np.zeros_like(x, dtype=np.float64)


def _zeros(shape):
    return np.zeros(_shape(shape))


def _ones(shape):
    return np.ones(_shape(shape))


_REGISTRY: dict[str, Builtin] = {}


def register_builtin(
    name: str,
    impl: Callable,
    arity: int,
    numpy_src: str | None = None,
    scalar_src: str | None = None,
    init_only: bool = False,
) -> Builtin:
    """Add a builtin function.

    ``numpy_src``/``scalar_src`` are ``str.format`` templates over the
    argument sources (``{0}``, ``{1}`` ...). Builtins registered without a
    template are usable by the interpreter but rejected by that code
    generator profile.
    """
    b = Builtin(name, arity, impl, numpy_src, scalar_src, init_only)
    _REGISTRY[name] = b
    return b


def unregister_builtin(name: str) -> None:
    _REGISTRY.pop(name, None)


def get_builtin(name: str) -> Optional[Builtin]:
    return _REGISTRY.get(name)


def builtin_names() -> frozenset:
    return frozenset(_REGISTRY)


register_builtin("exp", np.exp, 1, "np.exp({0})", "np.exp({0})")
register_builtin("sqrt", np.sqrt, 1, "np.sqrt({0})", "np.sqrt({0})")
register_builtin("ln", np.log, 1, "np.log({0})", "np.log({0})")
register_builtin("positivepart", _positivepart, 1, "np.maximum({0}, 0.0)", "max({0}, 0.0)")
register_builtin("oneslike", _oneslike, 1, "np.ones_like({0}, dtype=np.float64)", "1.0")
register_builtin("zeroslike", _zeroslike, 1, "np.zeros_like({0}, dtype=np.float64)", "0.0")
register_builtin("max", np.maximum, 2, "np.maximum({0}, {1})", "max({0}, {1})")
register_builtin("min", np.minimum, 2, "np.minimum({0}, {1})", "min({0}, {1})")
register_builtin("zeros", _zeros, 1, "_zeros({0})", "0.0", init_only=True)
register_builtin("ones", _ones, 1, "_ones({0})", "1.0", init_only=True)

# Helpers the numpy generator copies into generated modules.
NUMPY_HELPERS = '''
def _shape(shape):
    return tuple(int(s) for s in np.atleast_1d(shape))


def _zeros(shape):
    return np.zeros(_shape(shape))


def _ones(shape):
    return np.ones(_shape(shape))
'''
