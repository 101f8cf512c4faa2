"""End-to-end anchored indirect comparison and its result container.

``Delta_AB = Delta_AC - Delta_BC`` on the chosen scale, where ``A`` is the
IPD comparator, ``B`` the ALD comparator and ``C`` the common anchor. The two
trials are independent, so ``Var(AB) = Var(AC) + Var(BC)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from scipy import special, stats

from .data import AldTable, IpdTable, ModelSpec, parse_ald, parse_ipd
from .errors import ValidationError
from .scales import EstimateWithVar, ald_absolute, ald_contrast, default_scale, validate_scale
from .strategies import STRATEGIES, make_strategy

VAR_METHODS = ("sample", "sandwich", "rubin")
SANDWICH_STRATEGIES = ("maic", "stc", "gcomp_ml")


@dataclass(frozen=True)
class Roles:
    """Treatment labels: IPD comparator ``A``, ALD comparator ``B``, anchor ``C``."""

    ipd_comp: str
    ald_comp: str
    ref_trt: str


def infer_roles(ipd: IpdTable, ald: AldTable, ref_trt: str | None = None, ipd_comp: str | None = None,
                ald_comp: str | None = None) -> Roles:
    """Fill in missing role labels from the two trials' arm labels."""
    ipd_arms, ald_arms = set(ipd.labels), set(ald.arms)
    if ref_trt is None:
        common = ipd_arms & ald_arms
        if len(common) != 1:
            raise ValidationError(f"cannot infer the common treatment: IPD arms {sorted(ipd_arms)}, "
                                  f"ALD arms {sorted(ald_arms)}; set ref_trt")
        ref_trt = common.pop()
    for arms, where in ((ipd_arms, "IPD"), (ald_arms, "ALD")):
        if ref_trt not in arms:
            raise ValidationError(f"common treatment {ref_trt!r} not among {where} arms {sorted(arms)}")
    if ipd_comp is None:
        ipd_comp = next(iter(sorted(ipd_arms - {ref_trt})))
    if ald_comp is None:
        rest = sorted(ald_arms - {ref_trt})
        if len(rest) != 1:
            raise ValidationError(f"cannot infer the ALD comparator from arms {sorted(ald_arms)}; set ald_comp")
        ald_comp = rest[0]
    if ipd_comp not in ipd_arms or ipd_comp == ref_trt:
        raise ValidationError(f"IPD comparator {ipd_comp!r} invalid for arms {sorted(ipd_arms)}")
    if ald_comp not in ald_arms or ald_comp == ref_trt:
        raise ValidationError(f"ALD comparator {ald_comp!r} invalid for arms {sorted(ald_arms)}")
    return Roles(ipd_comp=ipd_comp, ald_comp=ald_comp, ref_trt=ref_trt)


def check_combination(strategy: str, var_method: str | None, ci: float):
    if not (0 < ci < 1):
        raise ValidationError(f"CI level must lie in (0, 1), got {ci}")
    if strategy not in STRATEGIES:
        raise ValidationError(f"unknown strategy {strategy!r}; expected one of {sorted(STRATEGIES)}")
    if var_method is None:
        return
    if var_method not in VAR_METHODS:
        raise ValidationError(f"unknown var_method {var_method!r}; expected one of {list(VAR_METHODS)}")
    if var_method == "rubin" and strategy != "mim":
        raise ValidationError("var_method 'rubin' is only available with strategy 'mim'")
    if var_method == "sandwich" and strategy not in SANDWICH_STRATEGIES:
        raise ValidationError(f"var_method 'sandwich' is only available with {list(SANDWICH_STRATEGIES)}")


def interval(est: float, var: float, ci: float, dof: float = math.inf) -> tuple[float, float]:
    """Normal interval, or Student-t when ``dof`` is finite."""
    q = special.ndtri((1 + ci) / 2) if math.isinf(dof) else stats.t.ppf((1 + ci) / 2, dof)
    half = float(q) * math.sqrt(var)
    return est - half, est + half


def _entry(e: EstimateWithVar, ci: float, dof: float = math.inf) -> dict:
    lo, hi = interval(e.estimate, e.variance, ci, dof)
    out = {"estimate": e.estimate, "variance": e.variance, "se": e.se, "lower": lo, "upper": hi}
    if not math.isinf(dof):
        out["dof"] = dof
    return out


@dataclass
class ComparisonResult:
    """Contrasts ``AB``, ``AC``, ``BC`` and absolute means ``A``, ``B``, ``C``.

    Each entry holds ``estimate``, ``variance``, ``se`` (square root of the
    variance), ``lower`` and ``upper``.
    """

    contrasts: dict[str, dict]
    absolute: dict[str, dict]
    metadata: dict[str, Any]
    extras: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"contrasts": self.contrasts, "absolute": self.absolute, "metadata": self.metadata,
                "extras": self.extras}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ComparisonResult":
        return cls(contrasts=dict(d["contrasts"]), absolute=dict(d["absolute"]), metadata=dict(d["metadata"]),
                   extras=dict(d.get("extras", {})))

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=indent)

    @classmethod
    def from_json(cls, text: str) -> "ComparisonResult":
        return cls.from_dict(json.loads(text))

    @property
    def strategy(self) -> str:
        return self.metadata["strategy"]


def compare(ipd: IpdTable, ald: AldTable, spec: ModelSpec, strategy: str, scale=None, ci: float = 0.95,
            var_method: str | None = None, seed: int | None = None, n_jobs: int = 1, ref_trt=None,
            ipd_comp=None, ald_comp=None, options: Mapping | None = None) -> ComparisonResult:
    """Run one anchored population-adjusted comparison.

    Parameters
    ----------
    ipd, ald : IpdTable, AldTable
        The A-vs-C individual data and the B-vs-C aggregate data.
    spec : ModelSpec
    strategy : {"maic", "stc", "gcomp_ml", "gcomp_bayes", "mim"}
    scale : str, optional
        Contrast scale; defaults to the natural scale of the family and link.
    ci : float
        Interval level.
    var_method : {"sample", "sandwich", "rubin"}, optional
    seed : int, optional
        Master seed for every random substream.
    n_jobs : int
        Bootstrap worker threads. Results do not depend on it.
    options : mapping
        Strategy parameters such as ``n_boot``, ``N``, ``rho``, ``M``.
    """
    strategy = str(strategy).lower()
    check_combination(strategy, var_method, ci)
    sc = validate_scale(scale or default_scale(spec.family, spec.link), spec.family)
    ipd.validate_for(spec)
    roles = infer_roles(ipd, ald, ref_trt, ipd_comp, ald_comp)
    opts = dict(options or {})
    if strategy == "gcomp_bayes":
        opts.setdefault("ci", ci)
    est = make_strategy(strategy, spec, **opts)
    est.fit(ipd, ald, roles.ipd_comp, scale=sc, var_method=var_method, seed=seed, n_jobs=n_jobs)
    vm = var_method or est.default_var_method

    ac = est.contrast_
    bc = ald_contrast(ald, sc, roles.ald_comp, roles.ref_trt, spec.outcome, spec.family)
    ab = EstimateWithVar(ac.estimate - bc.estimate, ac.variance + bc.variance, sc.name)
    dof = est.dof_
    contrasts = {"AC": _entry(ac, ci, dof["contrast"]), "BC": _entry(bc, ci),
                 "AB": _entry(ab, ci, dof["contrast"])}
    b_abs = ald_absolute(ald, roles.ald_comp, spec.outcome, spec.family)
    absolute = {"A": _entry(est.absolute_["comparator"], ci, dof["comparator"]),
                "B": _entry(b_abs, ci),
                "C": _entry(est.absolute_["reference"], ci, dof["reference"])}
    metadata = {
        "strategy": est.method_name, "scale": sc.name, "family": spec.family, "link": spec.link,
        "formula": spec.formula, "ci_level": ci, "var_method": vm, "seed": seed,
        "roles": {"A": roles.ipd_comp, "B": roles.ald_comp, "C": roles.ref_trt},
        "interval": "t" if any(not math.isinf(v) for v in dof.values()) else "normal",
    }
    return ComparisonResult(contrasts, absolute, metadata, est.extras_)


@dataclass
class RunConfig:
    """Validated analysis configuration.

    ``ipd`` and ``ald`` may be paths or already-parsed tables. Either
    ``spec`` or ``formula`` (with ``family`` and optional ``link``) defines
    the outcome model.
    """

    ipd: Any
    ald: Any
    strategy: str
    spec: ModelSpec | None = None
    formula: str | None = None
    family: str = "binomial"
    link: str | None = None
    trt_var: str | None = None
    scale: str | None = None
    ref_trt: str | None = None
    ipd_comp: str | None = None
    ald_comp: str | None = None
    ci: float = 0.95
    var_method: str | None = None
    seed: int | None = None
    n_jobs: int = 1
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        self.strategy = str(self.strategy).lower()
        check_combination(self.strategy, self.var_method, float(self.ci))
        if self.spec is None:
            if not self.formula:
                raise ValidationError("config needs a formula or a ModelSpec")
            self.spec = ModelSpec.from_formula(self.formula, family=self.family, link=self.link,
                                               trt_var=self.trt_var)
        if self.scale is not None:
            validate_scale(self.scale, self.spec.family)
        if self.n_jobs < 1:
            raise ValidationError("n_jobs must be >= 1")

    _KEYS = ("ipd", "ald", "strategy", "formula", "family", "link", "trt_var", "scale", "ref_trt", "ipd_comp",
             "ald_comp", "ci", "var_method", "seed", "n_jobs")
    _ALIASES = {"CI": "ci", "ipd_trial": "ipd", "ald_trial": "ald", "workers": "n_jobs", "n_imp": "M"}

    @classmethod
    def from_mapping(cls, d: Mapping, base: Path | None = None) -> "RunConfig":
        """Build from a flat key/value mapping; non-core keys become strategy options."""
        core, options = {}, dict(d.get("options", {}))
        for k, v in d.items():
            if k == "options":
                continue
            k = cls._ALIASES.get(k, k)
            (core if k in cls._KEYS else options)[k] = v
        for k in ("ipd", "ald"):
            if isinstance(core.get(k), str) and base is not None and not Path(core[k]).is_absolute():
                core[k] = str(base / core[k])
        missing = [k for k in ("ipd", "ald", "strategy") if k not in core]
        if missing:
            raise ValidationError(f"config missing required key(s) {missing}")
        return cls(**core, options=options)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_mapping(d, base=path.parent)


def run_analysis(config: RunConfig) -> ComparisonResult:
    """Load the data named by ``config`` and run :func:`compare`."""
    ipd = config.ipd if isinstance(config.ipd, IpdTable) else parse_ipd(config.ipd, config.spec)
    ald = config.ald if isinstance(config.ald, AldTable) else parse_ald(config.ald)
    return compare(ipd, ald, config.spec, config.strategy, scale=config.scale, ci=float(config.ci),
                   var_method=config.var_method, seed=config.seed, n_jobs=config.n_jobs, ref_trt=config.ref_trt,
                   ipd_comp=config.ipd_comp, ald_comp=config.ald_comp, options=config.options)
