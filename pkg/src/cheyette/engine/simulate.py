"""Compilation of checked programs into plans and their batched Euler execution."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np

from ..dsl.checker import CheckedProgram
from ..dsl.correlation import cholesky_lower, mix_normals
from ..dsl.evaluate import Frame, compile_expr
from ..dsl.nodes import Num
from .grid import DEFAULT_DT_MAX, TimeGrid, build_grid
from .rng import PhiloxNormals


class SimulationError(RuntimeError):
    """Non-finite state encountered while stepping."""

    def __init__(self, message: str, step: int | None = None, time: float | None = None, variable: str | None = None):
        self.step = step
        self.time = time
        self.variable = variable
        super().__init__(message)


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class Schedule:
    """Piecewise-constant parameter in time: ``values[i]`` on ``[breaks[i-1], breaks[i])``.

    The first value applies from 0 and the last one beyond the final break.
    """

    breaks: tuple
    values: tuple

    def __post_init__(self):
        b = tuple(float(x) for x in self.breaks)
        if len(self.values) != len(b) + 1:
            raise ValueError("a schedule needs one more value than breakpoints")
        if any(x <= 0 for x in b) or any(y <= x for x, y in zip(b, b[1:])):
            raise ValueError("schedule breakpoints must be positive and increasing")
        object.__setattr__(self, "breaks", b)
        object.__setattr__(self, "values", tuple(self.values))

    def segment(self, t: float) -> int:
        return int(np.searchsorted(np.asarray(self.breaks), t, side="right"))

    def at(self, t: float):
        return self.values[self.segment(t)]


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 1 << 14
    seed: int = 0
    antithetic: bool = False
    params: Mapping[str, Any] = field(default_factory=dict)
    externs: Mapping[str, Any] = field(default_factory=dict)
    normals: Any = None  # InjectedNormals or another RandomSource; default Philox(seed)
    dt_max: Optional[float] = None
    record_states: bool = False
    check_finite: bool = True

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be positive")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic batches need an even number of paths")
        for k, v in self.params.items():
            vals = v.values if isinstance(v, Schedule) else (v,)
            for x in vals:
                if np.ndim(x) not in (0, 1) or (np.ndim(x) == 1 and len(x) != self.n_paths):
                    raise ValueError(f"parameter '{k}' must be a scalar or have one value per path")

    @property
    def n_draws(self) -> int:
        """Paths whose normals are actually drawn (half the batch with antithetics)."""
        return self.n_paths // 2 if self.antithetic else self.n_paths

    def source(self):
        return self.normals if self.normals is not None else PhiloxNormals(self.seed)


@dataclass(frozen=True)
class SimulationPlan:
    program: CheckedProgram
    grid: TimeGrid
    dt_max: float
    breakpoints: tuple = ()

    @property
    def brownians(self) -> tuple:
        return self.program.brownians

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps


@dataclass
class SimOutput:
    samples: dict  # payoff name -> per-path values after discounting
    observations: dict  # (variable, time) -> per-path values
    times: np.ndarray
    n_paths: int
    antithetic: bool
    states: Optional[dict] = None  # variable -> (n_steps + 1, n_paths) when recorded

    def estimate(self, name: str):
        return mc_estimate(self.samples[name], self.antithetic)


def compile_program(program: CheckedProgram, dt_max: float = DEFAULT_DT_MAX, breakpoints=()) -> SimulationPlan:
    """Build the time grid and validate what can be validated before running."""
    if not program.payoffs:
        raise PlanError("program declares no payoffs")
    grid = build_grid(program.observation_times, dt_max, breakpoints)
    if program.correlations and all(isinstance(e, Num) for _, _, e in program.correlations):
        cholesky_lower(len(program.brownians), {(j, i): e.value for i, j, e in program.correlations})
    return SimulationPlan(program, grid, float(dt_max), tuple(sorted(float(b) for b in breakpoints)))


def _as_state(v, n: int) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.shape == (n,):
        return a
    return np.broadcast_to(a, (n,)).copy()


def bind_params(program: CheckedProgram, config: SimConfig) -> dict:
    params = dict(config.params)
    if "batchsize" in program.free_params and "batchsize" not in params:
        params["batchsize"] = config.n_paths
    missing = [p for p in program.free_params if p not in params]
    if missing:
        raise PlanError(f"unbound parameters: {', '.join(missing)}")
    return params


def params_at(params: Mapping, t: float) -> dict:
    return {k: (v.at(t) if isinstance(v, Schedule) else v) for k, v in params.items()}


class _CompiledProgram:
    """Closures for every expression of a program, built once per run."""

    def __init__(self, program: CheckedProgram):
        cache: dict = {}
        fns = program.functions
        self.inits = [(v, compile_expr(e, fns, cache)) for v, e in program.init_plan]
        self.steps = [(s.kind, s.var, compile_expr(s.rhs, fns, cache)) for s in program.steps]
        self.corr = [(i, j, compile_expr(e, fns, cache)) for i, j, e in program.correlations]
        self.payoffs = []
        for p in program.payoffs:
            mode = compile_expr(p.mode_expr, fns, cache) if p.mode_expr is not None else None
            num0 = compile_expr(p.numeraire0, fns, cache) if p.numeraire0 is not None else None
            self.payoffs.append((p, compile_expr(p.expr, fns, cache), mode, num0))


def _check_finite(values: Mapping, step: int, time: float):
    for name, v in values.items():
        if not np.all(np.isfinite(v)):
            bad = int(np.flatnonzero(~np.isfinite(v))[0])
            raise SimulationError(
                f"non-finite value of '{name}' at step {step} (t={time!r}), path {bad}", step, time, name
            )


def simulate(plan: SimulationPlan, config: SimConfig) -> SimOutput:
    """Run the plan's Euler scheme over a batch of paths."""
    prog = plan.program
    if config.dt_max is not None and config.dt_max != plan.dt_max:
        raise PlanError("config dt_max differs from the plan's; recompile the program")
    n = config.n_paths
    params = bind_params(prog, config)
    cp = _CompiledProgram(prog)
    grid = plan.grid.times
    nb = len(prog.brownians)
    source = config.source()
    obs_vars: dict[float, list] = {}
    for v, t in prog.observations:
        obs_vars.setdefault(plan.grid.index(t), []).append((v, t))

    # initial state
    fr = Frame(params=params_at(params, 0.0), externs=config.externs, t=0.0)
    for v, f in cp.inits:
        fr.init[v] = _as_state(f(fr), n)
    state = {v: fr.init[v] for v in prog.variables}
    if config.check_finite:
        _check_finite(state, 0, 0.0)
    observations = {}
    for v, t in obs_vars.get(0, []):
        observations[(v, t)] = state[v]
    states = {v: [state[v]] for v in prog.variables} if config.record_states else None

    for k in range(plan.n_steps):
        t0 = grid[k]
        t1 = grid[k + 1]
        dt = t1 - t0
        p0 = params_at(params, t0)
        p1 = params_at(params, t1)
        step_fr = Frame(old=state, params=p0, externs=config.externs, t=t0, dt=dt)
        if nb:
            z = source.normals(k, nb, config.n_draws)
            if config.antithetic:
                z = np.concatenate([z, -z], axis=1)
            entries = {(j, i): f(step_fr) for i, j, f in cp.corr}
            L = cholesky_lower(nb, entries)
            dW = mix_normals(nb, L, [z[b] for b in range(nb)], np.sqrt(dt))
            step_fr.dW = dict(zip(prog.brownians, dW))
        new: dict = {}
        assign_fr = Frame(old=state, new=new, params=p1, externs=config.externs, t=t1, dt=dt)
        for kind, var, f in cp.steps:
            if kind == "increment":
                new[var] = _as_state(state[var] + f(step_fr), n)
            else:
                new[var] = _as_state(f(assign_fr), n)
        if config.check_finite:
            _check_finite(new, k + 1, float(t1))
        state = {**state, **new}
        for v, t in obs_vars.get(k + 1, []):
            observations[(v, t)] = state[v]
        if states is not None:
            for v in prog.variables:
                states[v].append(state[v])

    samples = {}
    for p, f, mode, num0 in cp.payoffs:
        pfr = Frame(obs=observations, params=params_at(params, p.pay_time), externs=config.externs, t=p.pay_time)
        value = f(pfr)
        if p.mode == "discount":
            value = value * mode(pfr)
        elif p.mode == "numeraire":
            value = num0(pfr) * value / mode(pfr)
        samples[p.name] = _as_state(value, n)
    return SimOutput(
        samples=samples,
        observations=observations,
        times=grid,
        n_paths=n,
        antithetic=config.antithetic,
        states={v: np.array(a) for v, a in states.items()} if states is not None else None,
    )


def run(program: CheckedProgram, config: SimConfig, dt_max: float | None = None, breakpoints=()) -> SimOutput:
    """Compile and simulate in one call."""
    dt = dt_max if dt_max is not None else (config.dt_max or DEFAULT_DT_MAX)
    return simulate(compile_program(program, dt, breakpoints), config)


def mc_mean(samples) -> float:
    """The sample mean used by :func:`mc_estimate` (pairwise summation)."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size and np.all(x == x[0]):
        return float(x[0])
    return float(np.sum(x) / x.size)


def mc_estimate(samples, antithetic: bool = False) -> tuple[float, float]:
    """Sample mean and standard error.

    With ``antithetic`` the batch is ``[first half, mirrored half]``; the SE
    is computed from the pair averages, which are the independent draws.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    if np.all(x == x[0]):
        return float(x[0]), 0.0
    mean = mc_mean(x)
    if antithetic:
        if x.size % 2:
            raise ValueError("antithetic samples must come in pairs")
        h = x.size // 2
        x = 0.5 * (x[:h] + x[h:])
        if x.size < 2:
            raise ValueError("need at least two antithetic pairs")
    sd = float(np.std(x, ddof=1))
    return mean, sd / np.sqrt(x.size)
