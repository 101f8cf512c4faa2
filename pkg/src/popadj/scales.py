"""Effect scales: transforms, validity rules, and ALD-side contrasts.

Every contrast is ``g(mean of comparator) - g(mean of anchor)`` on the scale's
transform ``g``. The per-arm variance terms of the aggregate contrasts are:

=================  ==========  =========================
scale              outcome     per-arm variance
=================  ==========  =========================
log_odds           binary      1/y + 1/(N - y)
risk_difference    binary      p (1 - p) / N
probit_difference  binary      1/y + 1/(N - y)
log_rr_cloglog     binary      1/y - 1/N
log_rr_log         binary      1/y - 1/N
log_relative_risk  count       1 / (N ybar)
rate_difference    count       ybar / N
mean_difference    continuous  s^2 / N
log_odds           continuous  pi^2 / (3 N)
log_relative_risk  continuous  1 / (N |ybar|)
=================  ==========  =========================
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .data import OUTCOME_TYPE, AldTable
from .errors import ValidationError
from .glm import get_link


@dataclass(frozen=True)
class Scale:
    name: str
    link: str
    outcome_types: tuple[str, ...]

    def apply(self, mean):
        return apply_link(self, mean)

    def invert(self, value):
        return invert_link(self, value)


SCALES = {
    "log_odds": Scale("log_odds", "logit", ("binary", "continuous")),
    "risk_difference": Scale("risk_difference", "identity", ("binary",)),
    "probit_difference": Scale("probit_difference", "probit", ("binary",)),
    "log_rr_cloglog": Scale("log_rr_cloglog", "cloglog", ("binary",)),
    "log_rr_log": Scale("log_rr_log", "log", ("binary",)),
    "log_relative_risk": Scale("log_relative_risk", "log", ("count", "continuous")),
    "rate_difference": Scale("rate_difference", "identity", ("count",)),
    "mean_difference": Scale("mean_difference", "identity", ("continuous",)),
}
_ALIASES = {"log-odds": "log_odds", "log_or": "log_odds", "log-relative-risk": "log_relative_risk",
            "risk-difference": "risk_difference", "mean-difference": "mean_difference",
            "rate-difference": "rate_difference"}

# default scale per (family, link)
DEFAULT_SCALE = {
    ("binomial", "logit"): "log_odds",
    ("binomial", "probit"): "probit_difference",
    ("binomial", "cloglog"): "log_rr_cloglog",
    ("binomial", "log"): "log_rr_log",
    ("poisson", "log"): "log_relative_risk",
    ("gaussian", "identity"): "mean_difference",
}


def get_scale(scale) -> Scale:
    if isinstance(scale, Scale):
        return scale
    key = _ALIASES.get(str(scale), str(scale))
    try:
        return SCALES[key]
    except KeyError:
        raise ValidationError(f"unknown scale {scale!r}; expected one of {sorted(SCALES)}") from None


def default_scale(family: str, link: str) -> Scale:
    return SCALES[DEFAULT_SCALE[(family, link)]]


@dataclass(frozen=True)
class EstimateWithVar:
    """Point estimate with variance on a named scale."""

    estimate: float
    variance: float
    scale: str

    def __post_init__(self):
        if not (self.variance >= 0) and not math.isnan(self.variance):
            raise ValidationError(f"negative variance {self.variance}")

    @property
    def se(self) -> float:
        return math.sqrt(self.variance)


def _in_domain(scale: Scale, mean) -> bool:
    lo, hi = get_link(scale.link).mu_domain
    m = np.asarray(mean, dtype=float)
    return bool(np.all(np.isfinite(m)) and np.all(m > lo) and np.all(m < hi))


def apply_link(scale, mean):
    """Transform a natural-scale mean onto the contrast scale."""
    sc = get_scale(scale)
    if not _in_domain(sc, mean):
        raise ValidationError(f"mean {mean!r} outside the domain of the {sc.name} transform ({sc.link})")
    out = get_link(sc.link).fn(np.asarray(mean, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def invert_link(scale, value):
    sc = get_scale(scale)
    lk = get_link(sc.link)
    v = np.asarray(value, dtype=float)
    if sc.link in ("probit", "cloglog"):
        # unclamped inverses keep the round trip exact
        out = special.ndtr(v) if sc.link == "probit" else -np.expm1(-np.exp(v))
    else:
        out = lk.inverse(v)
    return float(out) if np.ndim(out) == 0 else out


def validate_scale(scale, family: str) -> Scale:
    """Return the scale if it is valid for the family's outcome type, else raise."""
    sc = get_scale(scale)
    otype = OUTCOME_TYPE.get(family)
    if otype is None:
        raise ValidationError(f"unknown family {family!r}")
    if otype not in sc.outcome_types:
        valid = [s.name for s in SCALES.values() if otype in s.outcome_types]
        raise ValidationError(
            f"scale {sc.name!r} is not valid for family {family!r} ({otype} outcome); "
            f"valid scales: {valid}"
        )
    return sc


@dataclass(frozen=True)
class ArmSummary:
    """Outcome summary of one ALD arm."""

    N: float
    events: float | None = None
    mean: float | None = None
    sd: float | None = None


def arm_summary(ald: AldTable, arm: str, outcome: str = "y", family: str = "binomial") -> ArmSummary:
    """Collect the Table-style outcome statistics for one arm.

    Binary and count outcomes need ``sum`` and ``N``; continuous need ``mean``,
    ``sd`` and ``N``. The mean of binary/count arms is derived from the counts.
    """
    otype = OUTCOME_TYPE[family]
    try:
        N = ald.lookup(None, "N", arm)
    except KeyError:
        raise ValidationError(f"ALD lacks arm size N for treatment {arm!r}") from None
    if N < 1:
        raise ValidationError(f"arm size for {arm!r} must be >= 1")
    if otype in ("binary", "count"):
        try:
            events = ald.lookup(outcome, "sum", arm)
        except KeyError:
            raise ValidationError(f"ALD lacks outcome sum for treatment {arm!r}") from None
        if otype == "binary" and not 0 <= events <= N:
            raise ValidationError(f"events {events} outside [0, N={N}] for treatment {arm!r}")
        sd = ald._index.get((outcome, "sd", arm))
        return ArmSummary(N=N, events=events, mean=events / N, sd=sd)
    try:
        mean = ald.lookup(outcome, "mean", arm)
        sd = ald.lookup(outcome, "sd", arm)
    except KeyError:
        raise ValidationError(f"ALD lacks outcome mean/sd for treatment {arm!r}") from None
    return ArmSummary(N=N, mean=mean, sd=sd)


def arm_variance_term(scale: Scale, arm: ArmSummary, otype: str) -> float:
    """Per-arm contribution to the variance of an ALD contrast."""
    N = arm.N
    name = scale.name
    if otype == "binary":
        y = arm.events
        if name in ("log_odds", "probit_difference"):
            if y <= 0 or y >= N:
                raise ValidationError(
                    f"zero cell (events={y}, N={N}) makes the {name} variance infinite; "
                    "apply a continuity correction to the ALD explicitly if intended"
                )
            return 1 / y + 1 / (N - y)
        if name in ("log_rr_cloglog", "log_rr_log"):
            if y <= 0:
                raise ValidationError(f"zero events make the {name} variance infinite; "
                                      "apply a continuity correction explicitly if intended")
            return 1 / y - 1 / N
        if name == "risk_difference":
            p = y / N
            return p * (1 - p) / N
    elif otype == "count":
        if name == "log_relative_risk":
            if arm.mean <= 0:
                raise ValidationError("zero count mean makes the log relative risk undefined")
            return 1 / (N * arm.mean)
        if name == "rate_difference":
            return arm.mean / N
    elif otype == "continuous":
        if name == "mean_difference":
            return arm.sd**2 / N
        if name == "log_odds":
            return math.pi**2 / (3 * N)
        if name == "log_relative_risk":
            return 1 / (N * abs(arm.mean))
    raise ValidationError(f"scale {name!r} not valid for {otype} outcomes")


def ald_contrast(ald: AldTable, scale, comparator: str, reference: str, outcome: str = "y",
                 family: str = "binomial") -> EstimateWithVar:
    """Aggregate-data contrast ``g(mean_comparator) - g(mean_reference)`` and its variance."""
    sc = validate_scale(scale, family)
    otype = OUTCOME_TYPE[family]
    comp = arm_summary(ald, comparator, outcome, family)
    ref = arm_summary(ald, reference, outcome, family)
    for arm, lab in ((comp, comparator), (ref, reference)):
        if not _in_domain(sc, arm.mean):
            raise ValidationError(
                f"mean outcome {arm.mean} of arm {lab!r} outside the domain of the {sc.name} scale"
                + ("; apply a continuity correction explicitly if intended" if otype == "binary" else "")
            )
    est = apply_link(sc, comp.mean) - apply_link(sc, ref.mean)
    var = arm_variance_term(sc, comp, otype) + arm_variance_term(sc, ref, otype)
    return EstimateWithVar(float(est), float(var), sc.name)


def ald_absolute(ald: AldTable, arm: str, outcome: str = "y", family: str = "binomial") -> EstimateWithVar:
    """Natural-scale mean of one ALD arm with its sampling variance."""
    s = arm_summary(ald, arm, outcome, family)
    otype = OUTCOME_TYPE[family]
    if otype == "binary":
        var = s.mean * (1 - s.mean) / s.N
    elif otype == "count":
        var = s.mean / s.N
    else:
        var = s.sd**2 / s.N
    return EstimateWithVar(float(s.mean), float(var), "natural")


_CLAMPS = {"risk_difference": (0.0, 1.0), "rate_difference": (0.0, math.inf)}


def absolute_from_contrast(reference_mean: float, contrast: EstimateWithVar) -> float:
    """Comparator-arm mean implied by a baseline mean ``P_0`` and a contrast.

    Difference scales that push the result out of the outcome domain are
    clamped with a warning.
    """
    sc = get_scale(contrast.scale)
    value = invert_link(sc, apply_link(sc, reference_mean) + contrast.estimate)
    if sc.name in _CLAMPS:
        lo, hi = _CLAMPS[sc.name]
        if value < lo or value > hi:
            warnings.warn(f"{sc.name} result {value:.4g} outside [{lo}, {hi}]; clamped", RuntimeWarning,
                          stacklevel=2)
            value = min(max(value, lo), hi)
    return float(value)
