"""Simulation time grids."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

DEFAULT_DT_MAX = 1.0 / 96.0
SNAP_TOL = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing times starting at 0 with marked observation nodes."""

    times: np.ndarray
    marked: frozenset = field(default_factory=frozenset)  # indices of observation / pay times

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size == 0 or t[0] != 0.0:
            raise ValueError("a time grid starts at 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("grid times must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    def index(self, t: float) -> int:
        """Grid index of a node time (exact match after snapping)."""
        i = int(np.searchsorted(self.times, t))
        for j in (i - 1, i):
            if 0 <= j < self.times.size and abs(self.times[j] - t) <= SNAP_TOL:
                return j
        raise KeyError(f"time {t!r} is not a grid node")


def build_grid(times: Iterable[float], dt_max: float = DEFAULT_DT_MAX, extra: Iterable[float] = ()) -> TimeGrid:
    """Uniform steps of at most ``dt_max`` up to the last required time.

    Required ``times`` (observations, payments) and ``extra`` breakpoints
    (parameter schedule changes) are inserted exactly; uniform nodes within
    ``SNAP_TOL`` of a required time are replaced by it.
    """
    if not dt_max > 0:
        raise ValueError("dt_max must be positive")
    req = sorted({float(t) for t in times})
    if any((not math.isfinite(t)) or t < 0 for t in req):
        raise ValueError("observation times must be finite and non-negative")
    end = max(req) if req else 0.0
    extra = sorted({float(t) for t in extra if 0 < t < end})
    if end == 0.0:
        return TimeGrid(np.array([0.0]), frozenset({0}) if req else frozenset())
    n = max(1, math.ceil(end / dt_max - 1e-9))
    nodes = [end * k / n for k in range(n)] + [end]
    for t in req + extra:
        nodes = [x for x in nodes if abs(x - t) > SNAP_TOL]
        nodes.append(t)
    nodes = sorted(set(nodes) | {0.0})
    grid = np.array(nodes)
    marked = frozenset(int(np.searchsorted(grid, t)) for t in req)
    return TimeGrid(grid, marked)
