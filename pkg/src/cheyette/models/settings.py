"""Model settings, parameter sets and the shipped fixture tables."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Mapping, Union

import numpy as np

from ..engine.simulate import Schedule

LOCAL_VOL_KINDS = ("LinSRLV", "LinBRLV", "LinXLV", "PwLinBRLV")
SV_KINDS = ("NoSV", "CIRSV", "CorCIRSV", "QDLNSV")
CIR_KINDS = ("CIRSV", "CorCIRSV")


@dataclass(frozen=True)
class LocalVolForm:
    """Local volatility shape; ``knots`` (rate units) only for ``PwLinBRLV``.

    Knots may be left empty for ``PwLinBRLV`` and filled later from the ATM
    forward with :meth:`with_atm_knots`.
    """

    kind: str
    knots: tuple = ()

    def __post_init__(self):
        if self.kind not in LOCAL_VOL_KINDS:
            raise ValueError(f"unknown local-vol form {self.kind!r}; expected one of {LOCAL_VOL_KINDS}")
        k = tuple(float(x) for x in self.knots)
        if self.kind != "PwLinBRLV" and k:
            raise ValueError("only PwLinBRLV takes knots")
        if k and (len(k) < 2 or any(b <= a for a, b in zip(k, k[1:]))):
            raise ValueError("PwLinBRLV needs at least two strictly increasing knots")
        object.__setattr__(self, "knots", k)

    def with_atm_knots(self, atm: float, multipliers=(0.95, 1.0, 1.05)) -> "LocalVolForm":
        return LocalVolForm(self.kind, tuple(m * atm for m in multipliers))


@dataclass(frozen=True)
class ModelSetting:
    local_vol: LocalVolForm
    sv: str

    def __post_init__(self):
        if isinstance(self.local_vol, str):
            object.__setattr__(self, "local_vol", LocalVolForm(self.local_vol))
        if self.sv not in SV_KINDS:
            raise ValueError(f"unknown SV form {self.sv!r}; expected one of {SV_KINDS}")

    @property
    def name(self) -> str:
        lv = self.local_vol.kind
        return lv if self.sv == "NoSV" else f"{lv} + {self.sv}"

    @property
    def is_cir(self) -> bool:
        return self.sv in CIR_KINDS

    @property
    def n_brownians(self) -> int:
        return 1 if self.sv == "NoSV" else 2

    @classmethod
    def from_name(cls, name: str, knots=()) -> "ModelSetting":
        parts = [p.strip() for p in name.replace("+", " + ").split("+")]
        lv = parts[0]
        sv = parts[1] if len(parts) > 1 else "NoSV"
        if len(parts) > 2:
            raise ValueError(f"cannot parse setting name {name!r}")
        return cls(LocalVolForm(lv, tuple(knots)), sv)


@dataclass(frozen=True)
class RiskNeutral:
    name = "risk-neutral"


@dataclass(frozen=True)
class TForward:
    measT: float

    def __post_init__(self):
        if not self.measT > 0:
            raise ValueError("forward-measure maturity must be positive")

    @property
    def name(self) -> str:
        return f"T-forward({self.measT:g})"


Measure = Union[RiskNeutral, TForward]

Value = Any  # float, per-path array, or a time Schedule


@dataclass(frozen=True)
class ModelParams:
    """Flat parameter set covering every setting; unused fields are ignored.

    ``a_knots`` are the PwLinBRLV volatilities at the knots. CorCIRSV's
    correlated vol-of-variance split is ``beta = rho*eta`` and
    ``eps = sqrt(1 - rho^2)*eta`` (see :meth:`cir_split`); QDLNSV takes
    ``beta`` and ``eps`` directly.
    """

    lam: float
    a: Value = 0.0
    b: Value = 0.0
    a_knots: tuple = ()
    theta: float = 0.2
    eta: Value = 0.0
    z0: float = 1.0
    rho: Value = 0.0
    kappa1: float = 0.25
    kappa2: float = 0.25
    theta_vol: float = 1.0
    beta: Value = 0.0
    eps: Value = 0.0
    vtheta0: float = 1.0
    delta: float = 0.25

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("mean reversion lam must be positive")
        if not self.delta > 0:
            raise ValueError("benchmark tenor delta must be positive")
        object.__setattr__(self, "a_knots", tuple(self.a_knots))

    def replace(self, **kw) -> "ModelParams":
        return replace(self, **kw)

    def cir_split(self):
        """(beta, eps) for CorCIRSV."""
        return combine(lambda r, e: r * e, self.rho, self.eta), combine(
            lambda r, e: np.sqrt(1.0 - np.square(r)) * e, self.rho, self.eta
        )

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> tuple:
        return tuple(f.name for f in fields(cls))


def validate_params(setting: ModelSetting, p: ModelParams, feller: bool = True) -> None:
    """Check the invariants of a parameter set for a given setting."""
    if setting.local_vol.kind == "PwLinBRLV":
        n = len(setting.local_vol.knots)
        if n and len(p.a_knots) != n:
            raise ValueError(f"PwLinBRLV with {n} knots needs {n} knot volatilities, got {len(p.a_knots)}")
        if any(np.any(np.asarray(_scalars(v)) < 0) for v in p.a_knots):
            raise ValueError("knot volatilities must be non-negative")
    if setting.is_cir:
        if not p.theta > 0 or not p.z0 > 0:
            raise ValueError("CIR mean reversion and level must be positive")
        if feller:
            eta = np.max(np.abs(np.asarray(_scalars(p.eta))))
            if 2.0 * p.theta * p.z0 < eta * eta * (1 - 1e-12):
                raise ValueError(
                    f"Feller condition violated: eta={eta} exceeds {feller_max_eta(p.theta, p.z0)}"
                )
    if setting.sv == "CorCIRSV":
        if np.any(np.abs(np.asarray(_scalars(p.rho))) >= 1):
            raise ValueError("rho must lie in (-1, 1)")
    if setting.sv == "QDLNSV" and np.any(np.asarray(_scalars(p.rho)) != 0):
        raise ValueError("QDLNSV uses independent volatility noise; rho must be 0")


def _scalars(v):
    if isinstance(v, Schedule):
        return np.concatenate([np.ravel(x) for x in v.values])
    return v


def combine(f, *values):
    """Apply ``f`` to parameter values that may be time schedules.

    Schedules must share their breakpoints; plain values broadcast across
    segments.
    """
    scheds = [v for v in values if isinstance(v, Schedule)]
    if not scheds:
        return f(*values)
    breaks = scheds[0].breaks
    if any(s.breaks != breaks for s in scheds):
        raise ValueError("schedules with different breakpoints cannot be combined")
    segs = []
    for i in range(len(breaks) + 1):
        segs.append(f(*[v.values[i] if isinstance(v, Schedule) else v for v in values]))
    return Schedule(breaks, tuple(segs))


def feller_max_eta(theta: float, z0: float) -> float:
    """Largest vol-of-variance keeping a CIR process away from zero."""
    return math.sqrt(2.0 * theta * z0)


# ---------------------------------------------------------------------------
# Fixture tables: fixed parameters, calibration bounds, calibrated values.

SETTING_NAMES = (
    "LinBRLV + CIRSV",
    "LinBRLV",
    "LinBRLV + CorCIRSV",
    "PwLinBRLV + CIRSV",
    "LinSRLV + CIRSV",
    "LinXLV + QDLNSV",
    "LinBRLV + QDLNSV",
    "LinSRLV + QDLNSV",
)

_CIR_FIXED = {"lam": 0.03, "theta": 0.2}
_QD_FIXED = {"lam": 0.025, "kappa1": 0.25, "kappa2": 0.25}

FIXED_PARAMS: dict[str, dict] = {
    "LinBRLV + CIRSV": dict(_CIR_FIXED),
    "LinBRLV": dict(_CIR_FIXED),
    "LinBRLV + CorCIRSV": dict(_CIR_FIXED),
    "PwLinBRLV + CIRSV": dict(_CIR_FIXED),
    "LinSRLV + CIRSV": dict(_CIR_FIXED),
    "LinXLV + QDLNSV": dict(_QD_FIXED),
    "LinBRLV + QDLNSV": dict(_QD_FIXED),
    "LinSRLV + QDLNSV": dict(_QD_FIXED),
}
# PwLinBRLV knots relative to the ATM forward.
PWLIN_KNOT_MULTIPLIERS = (0.95, 1.0, 1.05)

# Free-parameter boxes; eta's upper end respects the Feller limit sqrt(0.4).
PARAM_BOUNDS: dict[str, dict] = {
    "LinBRLV + CIRSV": {"a": (0.0001, 0.015), "b": (-0.5, 0.5), "eta": (0.1, 0.63)},
    "LinBRLV": {"a": (0.0001, 0.015), "b": (-0.5, 0.5)},
    "LinBRLV + CorCIRSV": {"a": (-0.1, 0.1), "b": (-0.1, 0.1), "eta": (0.1, 0.63), "rho": (-0.9, 0.9)},
    "PwLinBRLV + CIRSV": {"a1": (1e-6, 0.5), "a2": (1e-6, 0.5), "a3": (1e-6, 0.5), "eta": (0.1, 0.63)},
    "LinSRLV + CIRSV": {"a": (0.0001, 0.015), "b": (-0.5, 0.5), "eta": (0.1, 0.63)},
    "LinXLV + QDLNSV": {"a": (-0.1, 0.1), "b": (-0.1, 0.1), "beta": (-0.1, 0.1), "eps": (0.1, 1.0)},
    "LinBRLV + QDLNSV": {"a": (-0.1, 0.1), "b": (-0.1, 0.1), "beta": (-0.1, 0.1), "eps": (0.1, 1.0)},
    "LinSRLV + QDLNSV": {"a": (-0.1, 0.1), "b": (-0.1, 0.1), "beta": (-0.1, 0.1), "eps": (0.1, 1.0)},
}

CALIBRATED_PARAMS: dict[str, dict] = {
    "LinBRLV + CIRSV": {"a": 0.00832, "b": -0.19208, "eta": 0.56724},
    "LinBRLV": {"a": 0.00762, "b": -0.15945},
    "LinBRLV + CorCIRSV": {"a": 0.00679, "b": -0.09999, "rho": -0.46437, "eta": 0.31777},
    "PwLinBRLV + CIRSV": {"a1": 0.00615, "a2": 0.00361, "a3": 0.00511, "eta": 0.62762},
    "LinSRLV + CIRSV": {"a": 0.00766, "b": -0.15588, "eta": 0.34177},
    "LinXLV + QDLNSV": {"a": -0.00522, "b": 0.08982, "beta": 0.09999, "eps": 0.55189},
    "LinBRLV + QDLNSV": {"a": -0.00665, "b": 0.09999, "beta": 0.09999, "eps": 0.60884},
    "LinSRLV + QDLNSV": {"a": -0.00674, "b": 0.09999, "beta": 0.09999, "eps": 0.62731},
}

GOOD_FIT: dict[str, bool] = {
    "LinBRLV + CIRSV": False,
    "LinBRLV": False,
    "LinBRLV + CorCIRSV": False,
    "PwLinBRLV + CIRSV": True,
    "LinSRLV + CIRSV": False,
    "LinXLV + QDLNSV": True,
    "LinBRLV + QDLNSV": True,
    "LinSRLV + QDLNSV": False,
}


def setting(name: str, atm: float | None = None) -> ModelSetting:
    """One of the eight tabulated settings; PwLinBRLV gets knots around ``atm``."""
    if name not in SETTING_NAMES:
        raise KeyError(f"unknown setting {name!r}; expected one of {SETTING_NAMES}")
    s = ModelSetting.from_name(name)
    if s.local_vol.kind == "PwLinBRLV" and atm is not None:
        s = ModelSetting(s.local_vol.with_atm_knots(atm, PWLIN_KNOT_MULTIPLIERS), s.sv)
    return s


def apply_values(base: ModelParams, values: Mapping[str, Any]) -> ModelParams:
    """Set named free parameters (``a1``, ``a2``, ... address ``a_knots``)."""
    kw = {}
    knots = list(base.a_knots)
    for k, v in values.items():
        if k[0] == "a" and k[1:].isdigit():
            i = int(k[1:]) - 1
            while len(knots) <= i:
                knots.append(0.0)
            knots[i] = v
        elif k in ModelParams.field_names():
            kw[k] = v
        else:
            raise KeyError(f"unknown parameter {k!r}")
    if knots != list(base.a_knots):
        kw["a_knots"] = tuple(knots)
    return replace(base, **kw)


def default_params(name: str, values: Mapping[str, Any] | None = None) -> ModelParams:
    """Fixed parameters of a tabulated setting, optionally overlaid with free values."""
    fixed = FIXED_PARAMS[name]
    p = ModelParams(**fixed)
    return apply_values(p, values or {})


def table_params(name: str) -> ModelParams:
    """Fixed plus calibrated parameters of a tabulated setting."""
    return default_params(name, CALIBRATED_PARAMS[name])


def free_values(p: ModelParams, names) -> dict:
    out = {}
    for k in names:
        if k[0] == "a" and k[1:].isdigit():
            out[k] = p.a_knots[int(k[1:]) - 1]
        else:
            out[k] = getattr(p, k)
    return out
