"""Bounded differential evolution (DE/rand/1/bin) with jittered F and adaptive CR."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class DESettings:
    """Knobs of the optimizer.

    The population is ``population`` if given, else ``pop_per_dim`` times the
    dimension (at least 4). Each generation draws a mutation factor per member
    uniformly from ``f_range`` and a crossover rate from N(mu_CR, cr_spread),
    with mu_CR moved towards the mean rate of successful trials at speed
    ``cr_learning``. The run stops after ``max_generations``, once the best
    value is below ``tol``, or after ``stagnation`` generations in which the
    best value improved by no more than the fraction ``stagnation_rtol``.
    """

    pop_per_dim: int = 15
    population: Optional[int] = None
    max_generations: int = 500
    f_range: tuple = (0.4, 0.9)
    cr_init: float = 0.5
    cr_spread: float = 0.1
    cr_learning: float = 0.1
    tol: float = 0.0
    stagnation: int = 60
    stagnation_rtol: float = 0.0
    replications: int = 3

    def __post_init__(self):
        lo, hi = self.f_range
        if not 0 < lo <= hi <= 2:
            raise ValueError("mutation factor range must satisfy 0 < lo <= hi <= 2")
        for name in ("cr_init", "cr_learning"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if not 0 <= self.stagnation_rtol < 1:
            raise ValueError("stagnation_rtol must lie in [0, 1)")
        if self.population is not None and self.population < 4:
            raise ValueError("population must be at least 4")
        if self.pop_per_dim < 1 or self.max_generations < 1 or self.stagnation < 1 or self.replications < 1:
            raise ValueError("population factor, generations, stagnation window and replications must be positive")

    def pop_size(self, dim: int) -> int:
        return self.population if self.population is not None else max(4, self.pop_per_dim * dim)


@dataclass
class DEResult:
    x: np.ndarray
    fun: float
    generations: int
    n_evals: int
    stop_reason: str
    seed: int
    trace: list = field(default_factory=list)  # (generation, best value)


def reflect(v: np.ndarray, lo: np.ndarray, hi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Mirror out-of-box coordinates back inside; redraw any that still fall outside."""
    v = np.where(v < lo, 2 * lo - v, v)
    v = np.where(v > hi, 2 * hi - v, v)
    bad = (v < lo) | (v > hi)
    if np.any(bad):
        v = np.where(bad, lo + rng.random(v.shape) * (hi - lo), v)
    return v


def differential_evolution(
    fun: Callable[[np.ndarray], float],
    bounds: Sequence[tuple[float, float]],
    settings: DESettings = DESettings(),
    seed: int = 0,
    callback: Callable[[int, np.ndarray, float], None] | None = None,
) -> DEResult:
    """Minimise ``fun`` over the box ``bounds``."""
    b = np.asarray(bounds, dtype=float)
    if b.ndim != 2 or b.shape[1] != 2 or b.shape[0] == 0:
        raise ValueError("bounds must be a non-empty sequence of (low, high)")
    lo, hi = b[:, 0], b[:, 1]
    if not (np.all(np.isfinite(b)) and np.all(lo < hi)):
        raise ValueError("bounds must be finite with low < high")
    dim = lo.size
    n = settings.pop_size(dim)
    rng = np.random.default_rng(seed)

    pop = lo + rng.random((n, dim)) * (hi - lo)
    fit = np.array([fun(x) for x in pop], dtype=float)
    n_evals = n
    ib = int(np.argmin(fit))
    best, best_x = fit[ib], pop[ib].copy()
    trace = [(0, float(best))]
    mu_cr = settings.cr_init
    f_lo, f_hi = settings.f_range
    since = 0
    ref = best  # best value when the stagnation counter was last reset
    reason = "max_generations"
    gen = 0
    if best < settings.tol:
        reason = "tol"
    else:
        for gen in range(1, settings.max_generations + 1):
            F = rng.uniform(f_lo, f_hi, n)
            CR = np.clip(rng.normal(mu_cr, settings.cr_spread, n), 0.0, 1.0)
            # three distinct donors per member, none equal to the member itself
            keys = rng.random((n, n))
            np.fill_diagonal(keys, np.inf)
            idx = np.argsort(keys, axis=1)[:, :3]
            mutant = pop[idx[:, 0]] + F[:, None] * (pop[idx[:, 1]] - pop[idx[:, 2]])
            cross = rng.random((n, dim)) < CR[:, None]
            cross[np.arange(n), rng.integers(0, dim, n)] = True
            trial = reflect(np.where(cross, mutant, pop), lo, hi, rng)
            tf = np.array([fun(x) for x in trial], dtype=float)
            n_evals += n
            win = tf <= fit
            pop[win] = trial[win]
            fit[win] = tf[win]
            if np.any(win):
                mu_cr = (1 - settings.cr_learning) * mu_cr + settings.cr_learning * float(np.mean(CR[win]))
            ib = int(np.argmin(fit))
            if fit[ib] < best:
                best, best_x = fit[ib], pop[ib].copy()
            if best < ref - settings.stagnation_rtol * abs(ref) or (best < ref and settings.stagnation_rtol == 0):
                ref = best
                since = 0
            else:
                since += 1
            trace.append((gen, float(best)))
            if callback is not None:
                callback(gen, best_x, float(best))
            if best < settings.tol:
                reason = "tol"
                break
            if since >= settings.stagnation:
                reason = "stagnation"
                break
    return DEResult(best_x, float(best), gen, n_evals, reason, seed, trace)
