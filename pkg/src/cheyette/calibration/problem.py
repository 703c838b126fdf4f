"""Caplet calibration: objective with common random numbers, best-seed replication, bootstrap."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from ..curves import Curve
from ..engine.rng import normal_block
from ..engine.simulate import Schedule
from ..models.settings import ModelParams, ModelSetting, apply_values, feller_max_eta, validate_params
from ..pricing import CapletPricer, DiffRow, PriceResult, Quote, good_fit, price_diff_table
from .de import DEResult, DESettings, differential_evolution

PENALTY = 1e10


@dataclass(frozen=True)
class SimSettings:
    """Monte Carlo settings of a calibration: search paths, validation paths, grid and backend."""

    n_paths: int = 1 << 16
    validation_paths: int = 1 << 18
    dt_max: float = 1.0 / 48
    antithetic: bool = True
    backend: str = "numba"

    def __post_init__(self):
        for name in ("n_paths", "validation_paths"):
            v = getattr(self, name)
            if v < 2 or (self.antithetic and v % 2):
                raise ValueError(f"{name} must be at least 2 (and even with antithetics)")
        if not self.dt_max > 0:
            raise ValueError("dt_max must be positive")


@dataclass(frozen=True)
class CalibrationProblem:
    """Quotes of one maturity and tenor, a setting, its fixed parameters and the free-parameter box."""

    setting: ModelSetting
    base_params: ModelParams
    bounds: Mapping[str, tuple]
    quotes: tuple
    fcurve: Curve
    dcurve: Curve
    weights: Optional[tuple] = None
    sim: SimSettings = SimSettings()

    def __post_init__(self):
        object.__setattr__(self, "quotes", tuple(self.quotes))
        object.__setattr__(self, "bounds", {k: (float(v[0]), float(v[1])) for k, v in self.bounds.items()})
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        self.validate()

    def validate(self) -> None:
        if not self.bounds:
            raise ValueError("no free parameters to calibrate")
        for k, (lo, hi) in self.bounds.items():
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ValueError(f"bounds of '{k}' must be finite")
            if not lo < hi:
                raise ValueError(f"bounds of '{k}' need lower < upper, got [{lo}, {hi}]")
        if self.setting.is_cir and "eta" in self.bounds:
            cap = feller_max_eta(self.base_params.theta, self.base_params.z0)
            if self.bounds["eta"][1] > cap:
                raise ValueError(f"eta upper bound {self.bounds['eta'][1]} exceeds the Feller limit {cap:.6g}")
        if not self.quotes:
            raise ValueError("empty quote set")
        mats = {(q.maturity, q.tenor) for q in self.quotes}
        if len(mats) != 1:
            raise ValueError("a calibration problem covers a single maturity and tenor; use bootstrap_calibrate")
        if self.weights is not None and len(self.weights) != len(self.quotes):
            raise ValueError("need one weight per quote")

    @property
    def names(self) -> tuple:
        return tuple(self.bounds)

    @property
    def box(self) -> np.ndarray:
        return np.array([self.bounds[k] for k in self.names])

    @property
    def maturity(self) -> float:
        return self.quotes[0].maturity

    @property
    def tenor(self) -> float:
        return self.quotes[0].tenor

    @property
    def weight_vector(self) -> np.ndarray:
        return np.ones(len(self.quotes)) if self.weights is None else np.asarray(self.weights)

    def params_for(self, x: Sequence[float]) -> ModelParams:
        return apply_values(self.base_params, dict(zip(self.names, (float(v) for v in x))))

    def pricer(self) -> CapletPricer:
        floors = any(q.omega == -1 for q in self.quotes)
        strikes = sorted({q.strike for q in self.quotes})
        T1 = self.maturity
        return CapletPricer(
            self.setting,
            self.fcurve,
            self.dcurve,
            T1,
            T1 + self.tenor,
            strikes,
            dt_max=self.sim.dt_max,
            floorlets=floors,
            backend=self.sim.backend,
        )


def quote_results(strip, quotes: Sequence[Quote]) -> list[PriceResult]:
    """Model results aligned with the quotes (caplets or floorlets by strike)."""
    by = {(r.spec.strike, 1): r for r in strip.caplets}
    by.update({(r.spec.strike, -1): r for r in strip.floorlets})
    return [by[(q.strike, q.omega)] for q in quotes]


def inverse_variance_weights(standard_errors: Sequence[float]) -> tuple:
    """Quote weights proportional to 1/SE^2, largest weight 1.

    With these the objective is a scaled chi-square statistic, so it scores
    misfits in the same units as the two-standard-error fit flag.
    """
    se = np.asarray(standard_errors, dtype=float)
    if se.size == 0 or not np.all(se > 0):
        raise ValueError("standard errors must be positive")
    return tuple(float(w) for w in (se.min() / se) ** 2)


def bound_violation(x, box) -> float:
    x = np.asarray(x, dtype=float)
    lo, hi = box[:, 0], box[:, 1]
    return float(np.sum((np.maximum(lo - x, 0.0) + np.maximum(x - hi, 0.0)) / (hi - lo)))


class Objective:
    """Weighted squared price error under common random numbers.

    The normals are drawn once from ``seed``, so the objective is a
    deterministic function of the candidate. A failed simulation or an
    infeasible candidate scores ``PENALTY * (1 + bound violation)``.
    ``transform`` maps a candidate's named values to parameters (the
    bootstrap uses it to splice in frozen segments).
    """

    def __init__(self, problem: CalibrationProblem, seed: int, n_paths: int | None = None, pricer=None, transform=None, record: bool = False):
        self.problem = problem
        self.seed = int(seed)
        self.n_paths = n_paths or problem.sim.n_paths
        self.pricer = pricer or problem.pricer()
        self.transform = transform
        sim = problem.sim
        n_draws = self.n_paths // 2 if sim.antithetic else self.n_paths
        self.normals = normal_block(self.seed, self.pricer.n_steps, self.pricer.n_brownians, n_draws)
        self.market = np.array([q.price for q in problem.quotes])
        self.weights = problem.weight_vector
        self.box = problem.box
        self.n_evals = 0
        self.history: list | None = [] if record else None

    def params(self, x) -> ModelParams:
        if self.transform is not None:
            return self.transform(dict(zip(self.problem.names, (float(v) for v in x))))
        return self.problem.params_for(x)

    def evaluate(self, x, with_results: bool = True) -> tuple[float, list | None]:
        x = np.asarray(x, dtype=float)
        self.n_evals += 1
        if self.history is not None:
            self.history.append(x.copy())
        viol = bound_violation(x, self.box)
        if viol > 0:
            return PENALTY * (1.0 + viol), None
        try:
            p = self.params(x)
            validate_params(self.problem.setting, p)
            if with_results:
                strip = self.pricer.price(p, self.n_paths, self.seed, self.problem.sim.antithetic, self.normals, check_params=False)
                res = quote_results(strip, self.problem.quotes)
                model = np.array([r.price for r in res])
            else:
                caps, floors = self.pricer.mean_prices(p, self.n_paths, self.seed, self.problem.sim.antithetic, self.normals, check_params=False)
                by = {(k, 1): v for k, v in zip(self.pricer.strikes, caps)}
                by.update({(k, -1): v for k, v in zip(self.pricer.strikes, floors)})
                model = np.array([by[(q.strike, q.omega)] for q in self.problem.quotes])
                res = None
        except (ValueError, FloatingPointError, ArithmeticError):
            return PENALTY, None
        val = float(np.sum(self.weights * (model - self.market) ** 2))
        if not math.isfinite(val):
            return PENALTY, None
        return val, res

    def __call__(self, x) -> float:
        return self.evaluate(x, with_results=False)[0]


@dataclass
class CalibrationResult:
    params: ModelParams
    values: dict
    objective: float
    diffs: list  # DiffRow per quote
    good_fit: bool
    trace: list
    seeds: dict
    n_evals: int = 0
    validated_objective: float | None = None
    stop_reason: str = ""
    flagged: bool = False
    replications: list = field(default_factory=list)
    ensemble_diffs: list | None = None
    maturity: float | None = None


def _diffs(problem: CalibrationProblem, results) -> list[DiffRow]:
    return price_diff_table(results, problem.quotes)


def de_optimize(problem: CalibrationProblem, settings: DESettings = DESettings(), seed: int = 0, *, objective: Objective | None = None, transform=None) -> CalibrationResult:
    """Differential-evolution fit under common random numbers keyed by ``seed``."""
    obj = objective or Objective(problem, seed, transform=transform)
    de: DEResult = differential_evolution(obj, problem.box, settings, seed)
    val, res = obj.evaluate(de.x)
    params = obj.params(de.x)
    diffs = _diffs(problem, res) if res is not None else []
    return CalibrationResult(
        params=params,
        values=dict(zip(problem.names, (float(v) for v in de.x))),
        objective=de.fun,
        diffs=diffs,
        good_fit=bool(res is not None and good_fit(diffs)),
        trace=de.trace,
        seeds={"calibration": int(seed)},
        n_evals=obj.n_evals,
        stop_reason=de.stop_reason,
        maturity=problem.maturity,
    )


def derive_seeds(seed: int, n: int) -> tuple[list[int], int]:
    """``n`` replication seeds and one validation seed, all distinct."""
    s = np.random.SeedSequence(int(seed)).generate_state(n + 1, dtype=np.uint64)
    return [int(v) for v in s[:n]], int(s[n])


def validate_candidate(problem: CalibrationProblem, params: ModelParams, seed: int, pricer=None):
    """High-path re-pricing at an independent seed: (objective, results) or (inf, None)."""
    pricer = pricer or problem.pricer()
    try:
        strip = pricer.price(params, problem.sim.validation_paths, seed, problem.sim.antithetic)
    except (ValueError, FloatingPointError, ArithmeticError):
        return math.inf, None
    res = quote_results(strip, problem.quotes)
    model = np.array([r.price for r in res])
    market = np.array([q.price for q in problem.quotes])
    return float(np.sum(problem.weight_vector * (model - market) ** 2)), res


def best_seed_calibrate(
    problem: CalibrationProblem,
    settings: DESettings = DESettings(),
    n_replications: int | None = None,
    seed: int = 0,
    transform=None,
) -> CalibrationResult:
    """Replicate the search over seeds, validate each winner at a fresh seed, keep the best.

    The ensemble view (average of the validated prices over replications)
    is reported in ``ensemble_diffs``.
    """
    n = settings.replications if n_replications is None else n_replications
    if n < 1:
        raise ValueError("need at least one replication")
    seeds, vseed = derive_seeds(seed, n)
    pricer = problem.pricer()
    reps = []
    for s in seeds:
        obj = Objective(problem, s, pricer=pricer, transform=transform)
        r = de_optimize(problem, settings, s, objective=obj)
        vobj, vres = validate_candidate(problem, r.params, vseed, pricer)
        r.validated_objective = vobj
        r.seeds["validation"] = vseed
        if vres is not None:
            r.diffs = _diffs(problem, vres)
            r.good_fit = good_fit(r.diffs)
        else:
            r.diffs, r.good_fit = [], False
        reps.append((r, vres))
    best_i = min(range(n), key=lambda i: reps[i][0].validated_objective)
    best = reps[best_i][0]
    ok = [v for _, v in reps if v is not None]
    if ok:
        avg = [
            PriceResult(
                float(np.mean([v[j].price for v in ok])),
                float(np.sqrt(np.mean([v[j].standard_error ** 2 for v in ok]))),
                ok[0][j].n_paths,
                ok[0][j].measure,
                ok[0][j].spec,
            )
            for j in range(len(problem.quotes))
        ]
        best.ensemble_diffs = _diffs(problem, avg)
    best.replications = [
        {
            "seed": r.seeds["calibration"],
            "objective": r.objective,
            "validated_objective": r.validated_objective,
            "values": r.values,
            "good_fit": r.good_fit,
        }
        for r, _ in reps
    ]
    best.n_evals = sum(r.n_evals for r, _ in reps)
    return best


def _spliced_params(base: ModelParams, names, frozen: list[dict], breaks: tuple):
    """Parameters whose free values are piecewise constant: frozen segments, then the candidate."""

    def transform(values: dict) -> ModelParams:
        if not frozen:
            return apply_values(base, values)
        segs = {k: tuple(f[k] for f in frozen) + (values[k],) for k in names}
        return apply_values(base, {k: Schedule(breaks, v) for k, v in segs.items()})

    return transform


def bootstrap_calibrate(
    problems: Sequence[CalibrationProblem],
    settings: DESettings = DESettings(),
    seed: int = 0,
    threshold: float | None = None,
) -> list[CalibrationResult]:
    """Maturity-by-maturity fit of piecewise-constant parameters.

    Segment k covers (T_{k-1}, T_k]; its free values are fitted to the
    maturity-k quotes with earlier segments frozen. A segment whose best
    objective stays above ``threshold`` is flagged; later segments still run.
    """
    if not problems:
        raise ValueError("no maturities to calibrate")
    mats = [p.maturity for p in problems]
    if any(b <= a for a, b in zip(mats, mats[1:])):
        raise ValueError("maturities must be strictly increasing")
    names = problems[0].names
    if any(p.names != names for p in problems):
        raise ValueError("all maturities must calibrate the same free parameters")
    frozen: list[dict] = []
    out = []
    for k, prob in enumerate(problems):
        breaks = tuple(mats[:k])
        tr = _spliced_params(prob.base_params, names, frozen, breaks)
        r = best_seed_calibrate(prob, settings, seed=seed + k, transform=tr)
        r.flagged = threshold is not None and r.objective > threshold
        r.seeds["segment"] = k
        frozen.append(dict(r.values))
        r.values = {"segments": [dict(f) for f in frozen], "breaks": list(breaks)}
        out.append(r)
    return out
