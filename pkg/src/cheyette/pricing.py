"""Caplet and floorlet pricing: payoff reduction, Monte Carlo and closed-form oracles."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr

from .curves import Curve, g_fn
from .dsl import ExternFunction, check, parse
from .engine.codegen import generate_code
from .engine.grid import DEFAULT_DT_MAX
from .engine.rng import PhiloxNormals
from .engine.simulate import SimConfig, compile_program, mc_estimate, mc_mean, simulate
from .models.scripts import CALL_NAME, PUT_NAME, builtin_script, script_environment, script_params
from .models.settings import ModelParams, ModelSetting, RiskNeutral, TForward, validate_params

BACKENDS = ("interpreter", "numpy", "numba")


@dataclass(frozen=True)
class CapletSpec:
    """Caplet (omega=+1) or floorlet (omega=-1) on the forward rate over [T1, T2]."""

    T1: float
    T2: float
    strike: float
    notional: float = 1.0
    omega: int = 1

    def __post_init__(self):
        if not 0 < self.T1 < self.T2:
            raise ValueError(f"need 0 < T1 < T2, got T1={self.T1}, T2={self.T2}")
        if self.omega not in (1, -1):
            raise ValueError("omega must be +1 (caplet) or -1 (floorlet)")

    @property
    def delta(self) -> float:
        return self.T2 - self.T1


@dataclass(frozen=True)
class PayoffCoeffs:
    """The payoff reads N (omega (p_F exp(c_x x + c_y y) - k_hat))^+ at T1."""

    p_F: float
    c_x: float
    c_y: float
    k_hat: float


@dataclass(frozen=True)
class PriceResult:
    price: float
    standard_error: float
    n_paths: int
    measure: str
    spec: CapletSpec | None = None
    samples: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.standard_error < 0:
            raise ValueError("standard error must be non-negative")


def payoff_coeffs(fcurve: Curve, dcurve: Curve, lam: float, spec: CapletSpec) -> PayoffCoeffs:
    del dcurve  # the reduction only involves the forecasting curve
    p_F = float(fcurve.df(spec.T1) / fcurve.df(spec.T2))
    c_x = float(g_fn(lam, spec.delta))
    return PayoffCoeffs(p_F, c_x, 0.5 * c_x * c_x, 1.0 + spec.strike * spec.delta)


def atm_strike(fcurve: Curve, T1: float, T2: float) -> float:
    """Simple forward rate F(0; T1, T2) on the forecasting curve."""
    return float((fcurve.df(T1) / fcurve.df(T2) - 1.0) / (T2 - T1))


def black(F, K, v, omega: int = 1):
    """Undiscounted lognormal option value with total standard deviation ``v``."""
    F, K, v = (np.asarray(a, dtype=float) for a in (F, K, v))
    intrinsic = np.maximum(omega * (F - K), 0.0)
    vs = np.where(v > 0, v, 1.0)
    with np.errstate(over="ignore"):  # tiny v sends d1 to +-inf, which ndtr handles
        d1 = (np.log(F / K) + 0.5 * vs * vs) / vs
        d2 = d1 - vs
        val = omega * (F * ndtr(omega * d1) - K * ndtr(omega * d2))
    out = np.where(v > 0, val, intrinsic)
    return float(out) if out.ndim == 0 else out


def hw_log_variance(a: float, lam: float, T1: float, delta: float) -> float:
    """Variance of G(delta) x_T1 for constant volatility ``a``."""
    return g_fn(lam, delta) ** 2 * a * a * (-math.expm1(-2.0 * lam * T1)) / (2.0 * lam)


def hw_closed_form_caplet(a: float, lam: float, fcurve: Curve, dcurve: Curve, spec: CapletSpec) -> float:
    """Constant-volatility Cheyette caplet: the bond-price ratio is lognormal."""
    c = payoff_coeffs(fcurve, dcurve, lam, spec)
    v = math.sqrt(hw_log_variance(a, lam, spec.T1, spec.delta))
    return float(dcurve.df(spec.T2)) * spec.notional * black(c.p_F, c.k_hat, v, spec.omega)


# -- Monte Carlo --------------------------------------------------------------


def _measure_label(measure) -> str:
    return measure.name if isinstance(measure, TForward) else "RiskNeutral"


class CapletPricer:
    """Prices a strip of caplets (and optionally floorlets) sharing T1, T2 on one set of paths.

    The builtin script of the setting is checked and compiled once; each
    :meth:`price` call simulates with new parameters. ``backend`` picks the
    interpreter or one of the generated-code profiles.
    """

    def __init__(
        self,
        setting: ModelSetting,
        fcurve: Curve,
        dcurve: Curve,
        T1: float,
        T2: float,
        strikes: Sequence[float],
        measure=None,
        dt_max: float = DEFAULT_DT_MAX,
        floorlets: bool = False,
        backend: str = "interpreter",
        notional: float = 1.0,
    ):
        if backend not in BACKENDS:
            raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
        if len(strikes) == 0:
            raise ValueError("need at least one strike")
        CapletSpec(T1, T2, float(strikes[0]))  # validates the dates
        self.setting = setting
        self.fcurve, self.dcurve = fcurve, dcurve
        self.T1, self.T2 = float(T1), float(T2)
        self.delta = self.T2 - self.T1
        self.strikes = tuple(float(k) for k in strikes)
        self.measure = TForward(self.T2) if measure is None else measure
        if isinstance(self.measure, TForward) and abs(self.measure.measT - self.T2) > 1e-12:
            raise ValueError("forward-measure pricing needs the measure's bond maturity to equal T2")
        if not isinstance(self.measure, (TForward, RiskNeutral)):
            raise TypeError(f"unsupported measure {self.measure!r}")
        self.floorlets = floorlets
        self.backend = backend
        self.notional = float(notional)
        self.script = builtin_script(setting, self.measure, floorlets)
        env = script_environment(setting, self.measure, self.strikes, self.T1, self.delta)
        self.program = check(parse(self.script), env)
        self.plan = compile_program(self.program, dt_max)
        self.externs = {"initfwd": ExternFunction.from_curve(fcurve), "discfwd": ExternFunction.from_curve(dcurve)}
        self._module = generate_code(self.plan, backend).load() if backend != "interpreter" else None
        self._call_names = [CALL_NAME % k for k in self.strikes]
        self._put_names = [PUT_NAME % k for k in self.strikes] if floorlets else []

    @property
    def n_steps(self) -> int:
        return self.plan.n_steps

    @property
    def n_brownians(self) -> int:
        return len(self.program.brownians)

    def coeffs(self, params: ModelParams, strike: float) -> PayoffCoeffs:
        return payoff_coeffs(self.fcurve, self.dcurve, params.lam, CapletSpec(self.T1, self.T2, strike))

    def _scale(self) -> float:
        if isinstance(self.measure, TForward):
            return float(self.dcurve.df(self.T2)) * self.notional
        return self.notional

    def simulate(self, params: ModelParams, n_paths: int, seed: int = 0, antithetic: bool = True, normals=None, check_params: bool = True):
        """Raw payoff samples and observations; ``normals`` has shape (steps, brownians, draws)."""
        if check_params:
            validate_params(self.setting, params)
        poa = self.coeffs(params, self.strikes[0]).p_F
        bound = script_params(self.setting, params, self.measure, poa)
        if self._module is not None:
            out = self._module.run(n_paths, bound, seed, antithetic, self.externs, normals)
            return out["samples"], out["observations"]
        src = PhiloxNormals(seed) if normals is None else _BlockNormals(normals)
        cfg = SimConfig(n_paths=n_paths, seed=seed, antithetic=antithetic, params=bound, externs=self.externs, normals=src)
        res = simulate(self.plan, cfg)
        return res.samples, res.observations

    def mean_prices(self, params: ModelParams, n_paths: int, seed: int = 0, antithetic: bool = True, normals=None, check_params: bool = True):
        """(caplet prices, floorlet prices) without standard errors; same estimates as :meth:`price`."""
        samples, _ = self.simulate(params, n_paths, seed, antithetic, normals, check_params)
        scale = self._scale()
        caps = [mc_mean(scale * samples[nm]) for nm in self._call_names]
        floors = [mc_mean(scale * samples[nm]) for nm in self._put_names]
        return caps, floors

    def price(self, params: ModelParams, n_paths: int, seed: int = 0, antithetic: bool = True, normals=None, check_params: bool = True) -> "CapletStrip":
        samples, obs = self.simulate(params, n_paths, seed, antithetic, normals, check_params)
        scale = self._scale()
        label = _measure_label(self.measure)

        def results(names, omega):
            out = []
            for k, nm in zip(self.strikes, names):
                s = scale * samples[nm]
                m, se = mc_estimate(s, antithetic)
                out.append(PriceResult(m, se, n_paths, label, CapletSpec(self.T1, self.T2, k, self.notional, omega), s))
            return out

        c = self.coeffs(params, self.strikes[0])
        x = obs[("ratex", self.T1)]
        y = obs[("ratey", self.T1)]
        expo = np.exp(c.c_x * x + c.c_y * y)
        return CapletStrip(results(self._call_names, 1), results(self._put_names, -1), expo, scale, c.p_F)


class _BlockNormals:
    def __init__(self, z):
        self.z = np.asarray(z, dtype=float)

    def normals(self, step, n_brownians, n):
        return self.z[step, :n_brownians, :n]


@dataclass
class CapletStrip:
    caplets: list
    floorlets: list
    exp_term: np.ndarray = field(repr=False)  # exp(c_x x_T1 + c_y y_T1) per path
    scale: float = 1.0
    p_F: float = 1.0

    @property
    def prices(self) -> np.ndarray:
        return np.array([r.price for r in self.caplets])

    @property
    def standard_errors(self) -> np.ndarray:
        return np.array([r.standard_error for r in self.caplets])


def price_caplet_mc(
    setting: ModelSetting,
    params: ModelParams,
    spec: CapletSpec | Sequence[CapletSpec],
    measure=None,
    config: SimConfig | None = None,
    *,
    fcurve: Curve,
    dcurve: Curve,
    dt_max: float = DEFAULT_DT_MAX,
    backend: str = "interpreter",
):
    """Monte Carlo price(s); a sequence of specs sharing T1 and T2 is priced on shared paths."""
    specs = [spec] if isinstance(spec, CapletSpec) else list(spec)
    if not specs:
        raise ValueError("no caplets to price")
    T1, T2, N = specs[0].T1, specs[0].T2, specs[0].notional
    if any((s.T1, s.T2, s.notional) != (T1, T2, N) for s in specs):
        raise ValueError("shared-path pricing needs a common T1, T2 and notional")
    config = config or SimConfig(n_paths=1 << 16, antithetic=True)
    strikes = sorted({s.strike for s in specs})
    floors = any(s.omega == -1 for s in specs)
    pricer = CapletPricer(setting, fcurve, dcurve, T1, T2, strikes, measure, dt_max, floors, backend, N)
    z = None
    if config.normals is not None:
        z = config.normals.block(pricer.n_steps, pricer.n_brownians, config.n_draws)
    strip = pricer.price(params, config.n_paths, config.seed, config.antithetic, z)
    by_key = {(r.spec.strike, r.spec.omega): r for r in strip.caplets + strip.floorlets}
    out = [by_key[(s.strike, s.omega)] for s in specs]
    return out[0] if isinstance(spec, CapletSpec) else out


# -- market quotes and diff tables --------------------------------------------


@dataclass(frozen=True)
class Quote:
    maturity: float
    tenor: float
    strike: float
    price: float
    omega: int = 1


@dataclass(frozen=True)
class DiffRow:
    strike: float
    market: float
    model: float
    diff: float
    se: float
    within_2se: bool


def price_diff_table(results: Sequence[PriceResult], quotes: Sequence[Quote], tol: float = 1e-12) -> list[DiffRow]:
    """Model minus market per strike with the two-standard-error fit flag."""
    if not quotes:
        raise ValueError("empty quote set")
    if len(results) != len(quotes):
        raise ValueError(f"{len(results)} model prices for {len(quotes)} quotes")
    rows = []
    for r, q in zip(results, quotes):
        k = r.spec.strike if r.spec is not None else q.strike
        if abs(k - q.strike) > tol:
            raise ValueError(f"strike mismatch: model {k} vs market {q.strike}")
        d = r.price - q.price
        rows.append(DiffRow(q.strike, q.price, r.price, d, r.standard_error, bool(abs(d) <= 2.0 * r.standard_error)))
    return rows


def good_fit(rows: Iterable[DiffRow]) -> bool:
    return all(r.within_2se for r in rows)


def _g(v) -> str:
    return "%.17g" % v


def format_diff_table(rows: Sequence[DiffRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strike", "market", "model", "diff", "se", "within_2se"])
    for r in rows:
        w.writerow([_g(r.strike), _g(r.market), _g(r.model), _g(r.diff), _g(r.se), str(r.within_2se).lower()])
    return buf.getvalue()


QUOTE_HEADER = ["maturity", "tenor", "strike", "price", "omega"]


def format_quotes(quotes: Sequence[Quote]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(QUOTE_HEADER)
    for q in quotes:
        w.writerow([_g(q.maturity), _g(q.tenor), _g(q.strike), _g(q.price), q.omega])
    return buf.getvalue()


def parse_quotes(text: str) -> list[Quote]:
    """Quotes from CSV with columns maturity, tenor, strike, price and optional omega."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ValueError("quote file is empty")
    rd = csv.DictReader(lines)
    missing = {"maturity", "tenor", "strike", "price"} - set(rd.fieldnames or [])
    if missing:
        raise ValueError(f"quote file lacks columns: {', '.join(sorted(missing))}")
    out = []
    for i, row in enumerate(rd, start=2):
        try:
            out.append(
                Quote(
                    float(row["maturity"]),
                    float(row["tenor"]),
                    float(row["strike"]),
                    float(row["price"]),
                    int(row.get("omega") or 1),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ValueError(f"quote file line {i}: {exc}") from None
    return out


def read_quotes(path: str | Path) -> list[Quote]:
    return parse_quotes(Path(path).read_text())


def write_quotes(quotes: Sequence[Quote], path: str | Path) -> None:
    Path(path).write_text(format_quotes(quotes))
