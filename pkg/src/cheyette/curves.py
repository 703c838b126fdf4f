"""Discount curves and the deterministic Cheyette bond algebra.

Curves interpolate log-linearly on discount factors, so instantaneous
forwards are piecewise constant between pillars.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

LABELS = ("forecasting", "discounting")

# Below this value of lambda*x the closed forms for G lose digits to cancellation.
_TAYLOR_CUTOFF = 1e-6


class CurveDomainError(ValueError):
    """Raised when a curve is queried outside [0, last pillar]."""


@dataclass(frozen=True)
class Curve:
    """Discount-factor term structure P(0, t).

    ``times`` must start at 0 with ``dfs[0] == 1``; a missing t=0 pillar is
    added on construction.
    """

    times: np.ndarray
    dfs: np.ndarray
    label: str = "discounting"
    _log_dfs: np.ndarray = field(init=False, repr=False, compare=False)
    _fwds: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        p = np.asarray(self.dfs, dtype=float).ravel()
        if t.shape != p.shape or t.size == 0:
            raise ValueError("times and dfs must be non-empty and of equal length")
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")
        if t[0] < 0:
            raise ValueError("pillar times must be >= 0")
        if t[0] > 0:
            t = np.concatenate([[0.0], t])
            p = np.concatenate([[1.0], p])
        if p[0] != 1.0:
            raise ValueError("discount factor at t=0 must be 1")
        if np.any(np.diff(t) <= 0):
            raise ValueError("pillar times must be strictly increasing")
        if np.any(p <= 0) or not np.all(np.isfinite(p)):
            raise ValueError("discount factors must be positive and finite")
        if t.size < 2:
            raise ValueError("a curve needs at least one pillar beyond t=0")
        t.setflags(write=False)
        p.setflags(write=False)
        logp = np.log(p)
        fwd = -np.diff(logp) / np.diff(t)
        logp.setflags(write=False)
        fwd.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "dfs", p)
        object.__setattr__(self, "_log_dfs", logp)
        object.__setattr__(self, "_fwds", fwd)

    @classmethod
    def flat(cls, rate: float, horizon: float = 30.0, label: str = "discounting") -> "Curve":
        """Continuously-compounded flat curve with a single pillar at ``horizon``."""
        return cls(np.array([0.0, horizon]), np.array([1.0, math.exp(-rate * horizon)]), label)

    @classmethod
    def from_pillars(cls, pillars: Iterable[tuple[float, float]], label: str = "discounting") -> "Curve":
        arr = np.array(list(pillars), dtype=float)
        return cls(arr[:, 0], arr[:, 1], label)

    @property
    def last_time(self) -> float:
        return float(self.times[-1])

    @property
    def forwards(self) -> np.ndarray:
        """Piecewise-constant instantaneous forwards, one per pillar interval."""
        return self._fwds

    def _check(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.times[-1]) or np.any(np.isnan(t)):
            raise CurveDomainError(
                f"t outside curve domain [0, {self.times[-1]}]: {t.min() if t.size else t}..{t.max() if t.size else t}"
            )
        return t

    def interval(self, t) -> np.ndarray:
        """Index of the pillar interval owning ``t`` (right interval at pillars, left at the last one)."""
        idx = np.searchsorted(self.times, t, side="right") - 1
        return np.clip(idx, 0, self.times.size - 2)

    def df(self, t):
        t = self._check(t)
        i = self.interval(t)
        logp = self._log_dfs[i] - self._fwds[i] * (t - self.times[i])
        out = np.exp(logp)
        # Exact at pillars.
        out = np.where(t == self.times[i], self.dfs[i], out)
        out = np.where(t == self.times[i + 1], self.dfs[i + 1], out)
        return float(out) if out.ndim == 0 else out

    def inst_forward(self, t):
        t = self._check(t)
        out = self._fwds[self.interval(t)]
        return float(out) if np.ndim(out) == 0 else out


def df(curve: Curve, t):
    return curve.df(t)


def inst_forward(curve: Curve, t):
    return curve.inst_forward(t)


def h_fn(lam: float, x):
    """Decay factor exp(-lambda x)."""
    return np.exp(-lam * np.asarray(x, dtype=float)) if np.ndim(x) else math.exp(-lam * x)


def g_fn(lam: float, x):
    """G(x) = (1 - exp(-lambda x)) / lambda, Taylor-expanded for tiny lambda*x."""
    x_arr = np.asarray(x, dtype=float)
    u = lam * x_arr
    closed = -np.expm1(-u) / lam if lam != 0 else x_arr
    taylor = x_arr * (1.0 - u / 2.0 + u * u / 6.0 - u * u * u / 24.0)
    out = np.where(np.abs(u) < _TAYLOR_CUTOFF, taylor, closed)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class MeanReversion:
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("mean reversion must be positive")


@dataclass(frozen=True)
class AffineForwardMap:
    """F^F = m F^D + s."""

    m: float
    s: float


def beta0(fcurve: Curve, dcurve: Curve, t_start: float, t_end: float) -> float:
    if not 0 <= t_start < t_end:
        raise ValueError("need 0 <= t_start < t_end")
    # grouped so identical curves give exactly 1
    return (fcurve.df(t_start) * dcurve.df(t_end)) / (fcurve.df(t_end) * dcurve.df(t_start))


def affine_map(fcurve: Curve, dcurve: Curve, t_start: float, t_end: float, delta: float) -> AffineForwardMap:
    if delta <= 0:
        raise ValueError("delta must be positive")
    if fcurve is dcurve or (
        np.array_equal(fcurve.times, dcurve.times) and np.array_equal(fcurve.dfs, dcurve.dfs)
    ):
        return AffineForwardMap(1.0, 0.0)
    b = beta0(fcurve, dcurve, t_start, t_end)
    return AffineForwardMap(b, (b - 1.0) / delta)


def forward_rate(curve: Curve, t_start: float, t_end: float, delta: float | None = None) -> float:
    """Simple forward rate over [t_start, t_end] seen from today."""
    delta = t_end - t_start if delta is None else delta
    return (curve.df(t_start) / curve.df(t_end) - 1.0) / delta


def model_df(curve: Curve, t, T, x, y, lam: float):
    """Cheyette reconstruction P(t, T; x, y)."""
    gv = g_fn(lam, np.asarray(T, dtype=float) - np.asarray(t, dtype=float))
    return (curve.df(T) / curve.df(t)) * np.exp(-gv * x - 0.5 * gv * gv * y)


def benchmark_forward(fcurve: Curve, lam: float, t, delta: float, x, y):
    """f(t, t+delta) = f(0, t+delta) + h(delta) (x + G(delta) y)."""
    t = np.asarray(t, dtype=float)
    return fcurve.inst_forward(t + delta) + h_fn(lam, delta) * (x + y * g_fn(lam, delta))


# ---------------------------------------------------------------------------
# Curve files
#
# A curve file is CSV with a first comment line ``# curve: <label>``
# followed by a header ``time,discount_factor`` and one row per pillar.
# Values are written with 17 significant digits so they round-trip exactly.


def write_curve(curve: Curve, path: str | Path | None = None) -> str:
    buf = io.StringIO()
    buf.write(f"# curve: {curve.label}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", "discount_factor"])
    for t, p in zip(curve.times, curve.dfs):
        w.writerow([f"{t:.17g}", f"{p:.17g}"])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def parse_curve(text: str, label: str | None = None) -> Curve:
    lines = text.splitlines()
    file_label = None
    body: list[str] = []
    for line in lines:
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            key, _, val = s[1:].partition(":")
            if key.strip().lower() == "curve":
                file_label = val.strip()
            continue
        body.append(s)
    rows = list(csv.reader(body))
    if not rows:
        raise ValueError("curve file has no rows")
    header = [h.strip().lower() for h in rows[0]]
    if header != ["time", "discount_factor"]:
        raise ValueError(f"expected header 'time,discount_factor', got {rows[0]}")
    pillars = [(float(r[0]), float(r[1])) for r in rows[1:] if r]
    return Curve.from_pillars(pillars, label or file_label or "discounting")


def read_curve(path: str | Path, label: str | None = None) -> Curve:
    return parse_curve(Path(path).read_text(), label)


def curve_forward_table(curve: Curve) -> tuple[np.ndarray, np.ndarray]:
    """(breakpoints, values) describing the piecewise-constant forward."""
    return curve.times.copy(), curve.forwards.copy()


__all__: Sequence[str] = [
    "Curve",
    "CurveDomainError",
    "MeanReversion",
    "AffineForwardMap",
    "df",
    "inst_forward",
    "g_fn",
    "h_fn",
    "beta0",
    "affine_map",
    "forward_rate",
    "model_df",
    "benchmark_forward",
    "write_curve",
    "parse_curve",
    "read_curve",
]
