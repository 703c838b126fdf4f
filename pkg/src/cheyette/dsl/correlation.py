"""Correlation matrices of Brownian increments and their Cholesky factors.

The factorisation is done entry by entry so it works on scalars and on
per-path arrays (state- or parameter-dependent correlations) alike. Entries
that are structurally zero or one are never computed, which keeps the
uncorrelated case free of arithmetic. :func:`cholesky_source` emits the very
same operation sequence as :func:`cholesky_lower` for the code generators.
"""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .errors import CorrelationError

PSD_TOL = 1e-10

ZERO = "zero"
ONE = "one"


def _structure(n: int, declared: Sequence[tuple[int, int]]):
    """Which lower-triangular factor entries are structurally 0 or 1."""
    decl = {(max(i, j), min(i, j)) for i, j in declared}
    kind: dict[tuple[int, int], str] = {}
    for i in range(n):
        for j in range(i + 1):
            terms = [k for k in range(j) if kind[(i, k)] != ZERO and kind[(j, k)] != ZERO]
            if i == j:
                kind[(i, i)] = ONE if not terms else "diag"
            else:
                kind[(i, j)] = ZERO if (i, j) not in decl and not terms else "off"
    return kind


def check_entries(entries: Mapping[tuple[int, int], object]) -> None:
    for (i, j), v in entries.items():
        v = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(v)):
            raise CorrelationError(f"correlation between Brownians {j} and {i} is not finite")
        if np.any(np.abs(v) > 1.0):
            raise CorrelationError(f"correlation between Brownians {j} and {i} is outside [-1, 1]: {v.max() if v.ndim else v}")


def cholesky_lower(n: int, entries: Mapping[tuple[int, int], object]) -> dict:
    """Lower Cholesky factor of a unit-diagonal correlation matrix.

    ``entries`` maps ``(i, j)`` with ``i > j`` to the correlation, scalar or
    array. Returns ``{(i, j): value}`` for the non-zero factor entries, with
    structurally unit diagonals stored as the Python float 1.0.
    """
    entries = {(max(i, j), min(i, j)): v for (i, j), v in entries.items()}
    check_entries(entries)
    kind = _structure(n, list(entries))
    L: dict = {}
    for i in range(n):
        for j in range(i + 1):
            k_ij = kind[(i, j)]
            if k_ij == ZERO:
                continue
            if k_ij == ONE:
                L[(i, i)] = 1.0
                continue
            terms = [k for k in range(j) if kind[(i, k)] != ZERO and kind[(j, k)] != ZERO]
            if i == j:
                acc = 1.0
                for k in terms:
                    acc = acc - L[(i, k)] * L[(i, k)]
                if np.any(acc < -PSD_TOL):
                    raise CorrelationError("correlation matrix is not positive semidefinite")
                L[(i, i)] = np.sqrt(np.maximum(acc, 0.0))
            else:
                acc = entries.get((i, j), 0.0)
                for k in terms:
                    acc = acc - L[(i, k)] * L[(j, k)]
                d = L[(j, j)]
                L[(i, j)] = np.where(d > 0.0, acc / np.where(d > 0.0, d, 1.0), 0.0)
    return L


def cholesky_source(
    n: int,
    declared: Sequence[tuple[int, int]],
    entry_src: Mapping[tuple[int, int], str],
    prefix: str = "_L",
    flavor: str = "array",
) -> tuple[list[str], dict]:
    """Source lines computing the factor, mirroring :func:`cholesky_lower`.

    Returns the lines and a map ``(i, j) -> source`` naming each non-zero
    factor entry (``"1.0"`` for structural ones). ``flavor`` is ``array``
    (numpy, may raise from the generated code) or ``scalar`` (numba-friendly).
    """
    declared = [(max(i, j), min(i, j)) for i, j in declared]
    entry_src = {(max(i, j), min(i, j)): s for (i, j), s in entry_src.items()}
    kind = _structure(n, declared)
    names: dict = {}
    lines: list[str] = []
    for i in range(n):
        for j in range(i + 1):
            k_ij = kind[(i, j)]
            if k_ij == ZERO:
                continue
            if k_ij == ONE:
                names[(i, i)] = "1.0"
                continue
            terms = [k for k in range(j) if kind[(i, k)] != ZERO and kind[(j, k)] != ZERO]
            var = f"{prefix}{i}_{j}"
            if i == j:
                acc = "1.0" + "".join(f" - {names[(i, k)]} * {names[(i, k)]}" for k in terms)
                lines.append(f"{var} = {acc}")
                if flavor == "array":
                    lines.append(f"_check_psd({var})")
                    lines.append(f"{var} = np.sqrt(np.maximum({var}, 0.0))")
                else:
                    lines.append(f"if {var} < -{PSD_TOL!r}:")
                    lines.append("    raise ValueError('correlation matrix is not positive semidefinite')")
                    lines.append(f"{var} = np.sqrt(max({var}, 0.0))")
            else:
                acc = entry_src.get((i, j), "0.0") + "".join(
                    f" - {names[(i, k)]} * {names[(j, k)]}" for k in terms
                )
                d = names[(j, j)]
                if flavor == "array":
                    lines.append(f"{var} = np.where({d} > 0.0, ({acc}) / np.where({d} > 0.0, {d}, 1.0), 0.0)")
                else:
                    lines.append(f"{var} = ({acc}) / {d} if {d} > 0.0 else 0.0")
            names[(i, j)] = var
    return lines, names


def mix_normals(n: int, L: Mapping, z: Sequence, sqrt_dt):
    """Correlated Brownian increments ``sqrt_dt * (L @ z)`` with structural zeros skipped."""
    out = []
    for i in range(n):
        acc = None
        for j in range(i + 1):
            if (i, j) not in L:
                continue
            lij = L[(i, j)]
            term = z[j] if (isinstance(lij, float) and lij == 1.0) else lij * z[j]
            acc = term if acc is None else acc + term
        out.append(sqrt_dt * acc)
    return out


def mix_source(n: int, names: Mapping, z_names: Sequence[str], sqrt_dt: str) -> list[str]:
    """Source expressions matching :func:`mix_normals`."""
    out = []
    for i in range(n):
        terms = []
        for j in range(i + 1):
            if (i, j) not in names:
                continue
            lij = names[(i, j)]
            terms.append(z_names[j] if lij == "1.0" else f"{lij} * {z_names[j]}")
        out.append(f"{sqrt_dt} * ({' + '.join(terms)})")
    return out


def correlation_matrix(n: int, entries: Mapping[tuple[int, int], object]) -> np.ndarray:
    """Full symmetric matrix (scalar entries) or stack of matrices (array entries), validated."""
    cholesky_lower(n, entries)  # validates range and semidefiniteness
    shape = np.broadcast_shapes(*[np.shape(v) for v in entries.values()]) if entries else ()
    C = np.zeros(shape + (n, n))
    for i in range(n):
        C[..., i, i] = 1.0
    for (i, j), v in entries.items():
        C[..., i, j] = v
        C[..., j, i] = v
    return C
