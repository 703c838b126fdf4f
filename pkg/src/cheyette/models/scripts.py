"""Script templates for the tabulated model settings.

The CIR variants follow the layout of the piecewise-linear CIR caplet script
(full truncation of the variance, ``ratevolatility = sqrt(positivepart(..))``);
the QDLNSV variants follow the correlated-noise layout with a ``sigma``
volatility state and a ``d_W*d_Z = rho`` line. Under the risk-neutral measure
the forward-measure drift corrections disappear and a log money-market
account ``lnmma`` is simulated alongside as numeraire.
"""
from __future__ import annotations

from ..dsl.checker import Environment
from .settings import ModelParams, ModelSetting, RiskNeutral, TForward

G_DEF = "g(x) = (1/mr)*(oneslike(x)-exp(-mr*x))"
H_DEF = "h(x) = exp(-mr*x)"
DELTAFWD = "deltafwd = initfwd(t + delta) + h(delta)*(ratex + g(delta)*ratey)"
CALL_NAME = "calloption_strike_%f"
PUT_NAME = "putoption_strike_%f"
MMA_VAR = "lnmma"


def _pwlin_defs(n: int) -> list[str]:
    """sigmaFun1..sigmaFun{n+1}: flat, n-1 linear pieces, flat."""
    one = "oneslike(x)"
    out = [f"sigmaFun1(x) = a1*{one} if x < K1*{one} else zeroslike(x)"]
    for i in range(1, n):
        j = i + 1
        out.append(
            f"sigmaFun{i + 1}(x) = a{i} + ((a{j} - a{i})/(K{j} - K{i}))*(x - K{i}*{one}) \\\n"
            f"\tif x >= K{i}*{one} and x < K{j}*{one} else zeroslike(x)"
        )
    out.append(f"sigmaFun{n + 1}(x) = a{n}*{one} if x >= K{n}*{one} else zeroslike(x)")
    return out


def _volterm(setting: ModelSetting) -> list[str]:
    kind = setting.local_vol.kind
    if kind == "LinXLV":
        return ["volterm = a + b*ratex"]
    if kind == "LinSRLV":
        return ["volterm = a + b*(initfwd(t) + ratex)"]
    if kind == "LinBRLV":
        return [DELTAFWD, "volterm = a + b*deltafwd"]
    n = len(setting.local_vol.knots) or 3
    terms = " + ".join(f"sigmaFun{i}(deltafwd)" for i in range(1, n + 2))
    return [DELTAFWD, f"volterm = {terms}"]


def _payoff_lines(tf: bool, floorlets: bool) -> list[str]:
    obs = "t" if tf else "maturity"
    times = "[maturity]" if tf else "[paytime]"
    expo = f"exp(g(delta)*ratex[{obs}] + \\\n        0.5*g(delta)*g(delta)*ratey[{obs}])"
    mode = "nodiscount" if tf else f"numeraire exp({MMA_VAR})"
    head = f"for (t,k) in ({times}*len(strikes),strikes):"
    out = [f'{head} "{CALL_NAME}"%k \\\n\tpays (positivepart(poa*{expo} - 1 - k*delta)) {mode}']
    if floorlets:
        out.append(f'{head} "{PUT_NAME}"%k \\\n\tpays (positivepart(1 + k*delta - poa*{expo})) {mode}')
    return out


def builtin_script(setting: ModelSetting, measure, floorlets: bool = False) -> str:
    """Script text simulating a tabulated setting and pricing caplets on ``strikes``.

    Loop constants: ``maturity`` (fixing time T1), ``strikes``, ``delta`` and,
    under the risk-neutral measure, ``paytime`` (T2). See
    :func:`script_params` for the run-time parameters.
    """
    lv = setting.local_vol.kind
    sv = setting.sv
    tf = isinstance(measure, TForward)
    if not tf and not isinstance(measure, RiskNeutral):
        raise TypeError(f"unsupported measure {measure!r}")
    if setting.name not in _SUPPORTED:
        raise ValueError(f"unsupported setting {setting.name!r}; builtin scripts cover {', '.join(_SUPPORTED)}")
    corr = "-g(measT-t)*" if tf else None

    fdefs = [G_DEF]
    if lv in ("LinBRLV", "PwLinBRLV"):
        fdefs.append(H_DEF)
    if lv == "PwLinBRLV":
        fdefs += _pwlin_defs(len(setting.local_vol.knots) or 3)

    system: list[str] = []
    correlations: list[str] = []
    if sv == "NoSV":
        drift = f"ratey-mr*ratex{corr + 'volterm*volterm' if tf else ''}"
        system += [
            f"d_ratex = ({drift})*d_t+volterm*d_W",
            "d_ratey = (volterm*volterm-2.0*mr*ratey)*d_t",
        ]
        inits = ["ratex", "ratey"]
    elif sv in ("CIRSV", "CorCIRSV"):
        drift = f"ratey-mr*ratex{corr + 'ratevariance*volterm*volterm' if tf else ''}"
        system += [
            f"d_ratex = ({drift})*d_t+\\\n          ratevolatility*volterm*d_W",
            "d_ratey = (ratevariance*volterm*volterm-2.0*mr*ratey)*d_t",
        ]
        meanrev = "theta*(oneslike(ratevariance) - positivepart(ratevariance))"
        if sv == "CIRSV":
            system.append(f"d_ratevariance = {meanrev}*d_t + volofvar*ratevolatility*d_Z")
        else:
            vdrift = f"({meanrev} - g(measT-t)*volterm*beta*positivepart(ratevariance))" if tf else meanrev
            system.append(
                f"d_ratevariance = {vdrift}*d_t + beta*ratevolatility*d_W + eps*ratevolatility*d_Z"
            )
        system.append("ratevolatility = sqrt(positivepart(ratevariance))")
        inits = ["ratex", "ratey", "ratevariance"]
    else:  # QDLNSV
        drift = f"ratey - mr*ratex{' - g(measT-t)*volterm*volterm*sigma*sigma' if tf else ''}"
        vdrift = "(kappa1 + kappa2*sigma)*(1.0 - sigma)"
        if tf:
            vdrift = f"({vdrift} - g(measT-t)*volterm*beta*sigma*sigma)"
        system += [
            f"d_ratex = ({drift})*d_t + volterm*sigma*d_W",
            "d_ratey = (volterm*volterm*sigma*sigma - 2.0*mr*ratey)*d_t",
            f"d_sigma = ({vdrift})*d_t + beta*sigma*d_W + eps*sigma*d_Z",
        ]
        correlations.append("d_W*d_Z = rho")
        inits = ["ratex", "ratey", "sigma"]
    system += _volterm(setting)
    if not tf:
        system.append(f"d_{MMA_VAR} = (discfwd(t) + ratex)*d_t")
        inits.append(MMA_VAR)

    init_lines = []
    for v in inits:
        fn = "ones" if v in ("ratevariance", "sigma") else "zeros"
        init_lines.append(f"init: {v} = {fn}([batchsize])")

    parts = ["# function definition", *fdefs, "", "#system", *system, ""]
    if correlations:
        parts += ["#correlations", *correlations, ""]
    parts += ["#initial values", *init_lines, "", "#payoffs", *_payoff_lines(tf, floorlets), ""]
    return "\n".join(parts)


_SUPPORTED = (
    "LinBRLV + CIRSV",
    "LinBRLV",
    "LinBRLV + CorCIRSV",
    "PwLinBRLV + CIRSV",
    "LinSRLV + CIRSV",
    "LinXLV + QDLNSV",
    "LinBRLV + QDLNSV",
    "LinSRLV + QDLNSV",
)


def script_environment(setting: ModelSetting, measure, strikes, maturity: float, delta: float) -> Environment:
    """Check-time environment for :func:`builtin_script` output."""
    consts = {"maturity": float(maturity), "strikes": [float(k) for k in strikes], "delta": float(delta)}
    if isinstance(measure, RiskNeutral):
        consts["paytime"] = float(maturity) + float(delta)
    params = {"mr", "poa", "batchsize", "a", "b", "theta", "volofvar", "beta", "eps", "rho", "kappa1", "kappa2", "measT"}
    n = len(setting.local_vol.knots)
    params |= {f"a{i}" for i in range(1, n + 1)} | {f"K{i}" for i in range(1, n + 1)}
    return Environment(constants=consts, parameters=frozenset(params), functions={"initfwd": 1, "discfwd": 1})


def script_params(setting: ModelSetting, p: ModelParams, measure, poa: float) -> dict:
    """Run-time parameter bindings for a builtin script."""
    if p.z0 != 1.0 or p.theta_vol != 1.0 or p.vtheta0 != 1.0:
        raise ValueError("builtin scripts normalise the variance level, volatility level and initial volatility to 1")
    out = {"mr": p.lam, "poa": poa}
    if isinstance(measure, TForward):
        out["measT"] = measure.measT
    lv = setting.local_vol.kind
    if lv == "PwLinBRLV":
        knots = setting.local_vol.knots
        if len(p.a_knots) != len(knots):
            raise ValueError("need one knot volatility per knot")
        for i, (ai, ki) in enumerate(zip(p.a_knots, knots), start=1):
            out[f"a{i}"] = ai
            out[f"K{i}"] = ki
    else:
        out["a"] = p.a
        out["b"] = p.b
    sv = setting.sv
    if sv in ("CIRSV", "CorCIRSV"):
        out["theta"] = p.theta
    if sv == "CIRSV":
        out["volofvar"] = p.eta
    elif sv == "CorCIRSV":
        out["beta"], out["eps"] = p.cir_split()
    elif sv == "QDLNSV":
        out.update(kappa1=p.kappa1, kappa2=p.kappa2, beta=p.beta, eps=p.eps, rho=0.0)
    return out
