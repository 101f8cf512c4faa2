"""Patient-level and aggregate-level trial data.

Three containers live here:

* :class:`ModelSpec` -- outcome/treatment names, prognostic factors (main
  effects), effect modifiers (treatment interactions) and the GLM family/link.
* :class:`IpdTable` -- one row per patient of the A-vs-C trial.
* :class:`AldTable` -- tidy ``(variable, statistic, value, trt)`` records of
  the B-vs-C trial.

All three are immutable after construction.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ValidationError

SUPPORTED_LINKS = {
    "gaussian": ("identity",),
    "binomial": ("logit", "probit", "cloglog", "log"),
    "poisson": ("log",),
}
CANONICAL_LINK = {"gaussian": "identity", "binomial": "logit", "poisson": "log"}
OUTCOME_TYPE = {"gaussian": "continuous", "binomial": "binary", "poisson": "count"}

STATISTICS = ("mean", "sd", "prop", "sum", "N")
_NA_TOKENS = {"", "na", "nan", "<na>", "none", "null"}
_TRT_GUESSES = ("trt", "treatment", "treat", "arm")


@dataclass(frozen=True)
class ModelSpec:
    """Outcome model specification.

    The linear predictor is ``1 + PF... + trt + trt:EM...``. A covariate may be
    both a prognostic factor and an effect modifier.
    """

    outcome: str = "y"
    treatment: str = "trt"
    prognostic_factors: tuple[str, ...] = ()
    effect_modifiers: tuple[str, ...] = ()
    family: str = "binomial"
    link: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "prognostic_factors", tuple(self.prognostic_factors))
        object.__setattr__(self, "effect_modifiers", tuple(self.effect_modifiers))
        if self.family not in SUPPORTED_LINKS:
            raise ValidationError(
                f"unsupported family {self.family!r}; expected one of {sorted(SUPPORTED_LINKS)}"
            )
        link = CANONICAL_LINK[self.family] if self.link is None else self.link
        if link not in SUPPORTED_LINKS[self.family]:
            raise ValidationError(
                f"unsupported family/link pair ({self.family}, {link}); "
                f"{self.family} allows {list(SUPPORTED_LINKS[self.family])}"
            )
        object.__setattr__(self, "link", link)
        for names in (self.prognostic_factors, self.effect_modifiers):
            if len(set(names)) != len(names):
                raise ValidationError(f"duplicate covariate in {names}")
            if self.treatment in names or self.outcome in names:
                raise ValidationError("treatment/outcome cannot also be a covariate")

    @property
    def covariates(self) -> tuple[str, ...]:
        """Union of prognostic factors and effect modifiers, first-seen order."""
        return tuple(dict.fromkeys(self.prognostic_factors + self.effect_modifiers))

    @property
    def outcome_type(self) -> str:
        return OUTCOME_TYPE[self.family]

    @property
    def formula(self) -> str:
        terms = list(self.prognostic_factors) + [self.treatment]
        terms += [f"{self.treatment}:{em}" for em in self.effect_modifiers]
        return f"{self.outcome} ~ " + " + ".join(terms)

    @classmethod
    def from_formula(cls, formula: str, family: str = "binomial", link: str | None = None,
                     trt_var: str | None = None) -> "ModelSpec":
        """Parse ``"y ~ PF1 + PF2 + trt + trt:EM1 + trt:(EM2 + EM3)"``.

        ``a*b`` is shorthand for ``a + b + a:b`` and ``a*(b + c)`` for
        ``a + b + c + a:b + a:c``.

        When ``trt_var`` is not given the treatment variable is taken to be the
        factor shared by every interaction term (ties broken in favour of a
        main effect, then of a conventional name); without interactions a main
        effect called ``trt``/``treatment``/``treat``/``arm`` is used.
        """
        if formula.count("~") != 1:
            raise ValidationError(f"formula must contain exactly one '~': {formula!r}")
        lhs, rhs = (s.strip() for s in formula.split("~"))
        if not lhs:
            raise ValidationError("formula has no outcome")
        def _star(left, inner):
            parts = [t.strip() for t in inner.split("+")]
            return " + ".join([left] + parts + [f"{left}:{t}" for t in parts])

        rhs = re.sub(r"([\w.]+)\s*\*\s*\(([^)]*)\)", lambda m: _star(m.group(1), m.group(2)), rhs)
        rhs = re.sub(r"([\w.]+)\s*\*\s*([\w.]+)", lambda m: _star(m.group(1), m.group(2)), rhs)
        if "*" in rhs:
            raise ValidationError(f"unsupported product term in {formula!r}")

        # expand a:(b + c) into a:b + a:c
        def _expand(m):
            left, inner = m.group(1), m.group(2)
            return " + ".join(f"{left}:{t.strip()}" for t in inner.split("+"))

        rhs = re.sub(r"([\w.]+)\s*:\s*\(([^)]*)\)", _expand, rhs)
        rhs = re.sub(r"\(([^)]*)\)\s*:\s*([\w.]+)",
                     lambda m: " + ".join(f"{t.strip()}:{m.group(2)}" for t in m.group(1).split("+")),
                     rhs)
        terms = list(dict.fromkeys(t.strip() for t in rhs.split("+") if t.strip()))
        mains = [t for t in terms if ":" not in t and t not in ("1", "0")]
        inters = [tuple(p.strip() for p in t.split(":")) for t in terms if ":" in t]
        if any(len(t) != 2 for t in inters):
            raise ValidationError("only two-way treatment interactions are supported")

        if trt_var is None:
            if inters:
                common = set(inters[0])
                for t in inters[1:]:
                    common &= set(t)
                # a single interaction leaves two candidates; prefer main effects, then usual names
                if len(common) > 1:
                    common = {c for c in common if c in mains} or common
                if len(common) > 1:
                    common = {c for c in common if c.lower() in _TRT_GUESSES} or common
                if len(common) != 1:
                    raise ValidationError(
                        "cannot guess the treatment variable from the interactions; pass trt_var"
                    )
                trt_var = common.pop()
            else:
                guesses = [m for m in mains if m.lower() in _TRT_GUESSES]
                if len(guesses) != 1:
                    raise ValidationError("cannot guess the treatment variable; pass trt_var")
                trt_var = guesses[0]
        if trt_var not in mains:
            raise ValidationError(f"treatment {trt_var!r} must appear as a main effect")
        ems = []
        for a, b in inters:
            if trt_var not in (a, b):
                raise ValidationError(f"interaction {a}:{b} does not involve {trt_var!r}")
            ems.append(b if a == trt_var else a)
        pfs = [m for m in mains if m != trt_var]
        return cls(outcome=lhs, treatment=trt_var, prognostic_factors=tuple(pfs),
                   effect_modifiers=tuple(ems), family=family, link=link)


def _check_outcome_domain(y: np.ndarray, family: str):
    if family == "binomial" and not np.all((y == 0) | (y == 1)):
        raise ValidationError("outcome out of domain: binomial outcomes must be 0/1")
    if family == "poisson" and not (np.all(y >= 0) and np.all(y == np.round(y))):
        raise ValidationError("outcome out of domain: poisson outcomes must be non-negative integers")


@dataclass(frozen=True, eq=False)
class IpdTable:
    """Individual patient data for a two-arm trial.

    Attributes
    ----------
    covariates : dict of str -> ndarray
        Numeric covariate columns, each of length ``n``.
    treatment : ndarray of str
        Arm label per row.
    outcome : ndarray of float
    outcome_name, treatment_name : str
        Column names used in files and formulas.
    """

    covariates: Mapping[str, np.ndarray]
    treatment: np.ndarray
    outcome: np.ndarray
    outcome_name: str = "y"
    treatment_name: str = "trt"

    def __post_init__(self):
        trt = np.asarray(self.treatment).astype(str)
        y = np.asarray(self.outcome, dtype=float)
        covs = {k: np.asarray(v, dtype=float) for k, v in self.covariates.items()}
        n = len(y)
        if len(trt) != n or any(len(v) != n for v in covs.values()):
            raise ValidationError("IPD columns have unequal lengths")
        labels = pd.unique(trt)
        if len(labels) != 2:
            raise ValidationError(f"IPD must contain exactly two treatment labels, found {list(labels)}")
        if np.isnan(y).any():
            raise ValidationError(f"missing value in outcome column {self.outcome_name!r}")
        for k, v in covs.items():
            if np.isnan(v).any():
                raise ValidationError(f"missing value in covariate column {k!r}")
        for arr in (trt, y, *covs.values()):
            arr.setflags(write=False)
        object.__setattr__(self, "treatment", trt)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "covariates", covs)

    @property
    def n(self) -> int:
        return len(self.outcome)

    @property
    def labels(self) -> tuple[str, str]:
        return tuple(pd.unique(self.treatment))

    def arm_counts(self) -> dict[str, int]:
        return {lab: int(np.sum(self.treatment == lab)) for lab in self.labels}

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """Covariate columns stacked as an ``n x len(names)`` array."""
        missing = [c for c in names if c not in self.covariates]
        if missing:
            raise ValidationError(f"IPD lacks covariate column(s) {missing}")
        if not names:
            return np.empty((self.n, 0))
        return np.column_stack([self.covariates[c] for c in names])

    def indicator(self, comparator: str) -> np.ndarray:
        """1.0 where the row belongs to ``comparator``, else 0.0."""
        if comparator not in self.labels:
            raise ValidationError(f"treatment {comparator!r} not present in IPD (labels {self.labels})")
        return (self.treatment == comparator).astype(float)

    def take(self, index: np.ndarray) -> "IpdTable":
        """Row subset/resample; used by the bootstrap."""
        return IpdTable(
            covariates={k: v[index] for k, v in self.covariates.items()},
            treatment=self.treatment[index],
            outcome=self.outcome[index],
            outcome_name=self.outcome_name,
            treatment_name=self.treatment_name,
        )

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(dict(self.covariates))
        df[self.treatment_name] = self.treatment
        df[self.outcome_name] = self.outcome
        return df

    def validate_for(self, spec: ModelSpec):
        """Check that every spec covariate exists and the outcome fits the family."""
        self.matrix(spec.covariates)
        _check_outcome_domain(self.outcome, spec.family)

    @classmethod
    def from_frame(cls, df: pd.DataFrame, spec: ModelSpec) -> "IpdTable":
        needed = [spec.outcome, spec.treatment, *spec.covariates]
        missing = [c for c in needed if c not in df.columns]
        if missing:
            raise ValidationError(f"missing column(s) {missing} in IPD")
        covs = {}
        for c in spec.covariates:
            covs[c] = _numeric_column(df[c], c)
        y = _numeric_column(df[spec.outcome], spec.outcome)
        trt = df[spec.treatment]
        if trt.isna().any() or (trt.astype(str).str.strip() == "").any():
            raise ValidationError(f"missing value in treatment column {spec.treatment!r}")
        table = cls(covariates=covs, treatment=trt.astype(str).to_numpy(), outcome=y,
                    outcome_name=spec.outcome, treatment_name=spec.treatment)
        _check_outcome_domain(table.outcome, spec.family)
        return table


def _numeric_column(col: pd.Series, name: str) -> np.ndarray:
    raw = col.astype(object)
    blank = raw.isna() | raw.astype(str).str.strip().str.lower().isin(_NA_TOKENS)
    if blank.any():
        raise ValidationError(f"missing value in column {name!r} (row {int(np.argmax(blank.to_numpy()))})")
    values = pd.to_numeric(raw, errors="coerce")
    if values.isna().any():
        bad = raw[values.isna()].iloc[0]
        raise ValidationError(f"non-numeric cell {bad!r} in column {name!r}")
    return values.to_numpy(dtype=float)


def parse_ipd(path: str | Path, spec: ModelSpec) -> IpdTable:
    """Read IPD from CSV (header required) or JSON (list of row objects)."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        df = pd.DataFrame(json.loads(path.read_text(encoding="utf-8")))
    else:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    return IpdTable.from_frame(df, spec)


def write_ipd(ipd: IpdTable, path: str | Path):
    frame = ipd.to_frame()
    for c in frame.columns:
        if frame[c].dtype.kind == "f":
            frame[c] = [repr(float(v)) for v in frame[c]]
    frame.to_csv(path, index=False)


@dataclass(frozen=True)
class AldRecord:
    variable: str | None
    statistic: str
    value: float
    trt: str | None


def _na(x) -> str | None:
    if x is None:
        return None
    if isinstance(x, float) and math.isnan(x):
        return None
    s = str(x).strip()
    return None if s.lower() in _NA_TOKENS else s


@dataclass(frozen=True)
class AldTable:
    """Aggregate-level data in tidy long format.

    Records with ``trt=None`` describe a covariate distribution shared by both
    arms. Arm sizes are stored as ``(None, "N", arm)``.
    """

    records: tuple[AldRecord, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        records = tuple(self.records)
        index = {}
        for r in records:
            if r.statistic not in STATISTICS:
                raise ValidationError(
                    f"unknown statistic {r.statistic!r}; expected one of {list(STATISTICS)}"
                )
            if not math.isfinite(r.value):
                raise ValidationError(f"non-finite value for {r}")
            key = (r.variable, r.statistic, r.trt)
            if key in index:
                raise ValidationError(f"duplicate ALD record {key}")
            index[key] = r.value
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_records(cls, rows: Iterable) -> "AldTable":
        """Build from ``(variable, statistic, value, trt)`` tuples or dicts."""
        out = []
        for row in rows:
            if isinstance(row, Mapping):
                row = (row.get("variable"), row.get("statistic"), row.get("value"), row.get("trt"))
            var, stat, val, trt = row
            stat = _na(stat)
            if stat is None:
                raise ValidationError("ALD record without statistic")
            try:
                val = float(val)
            except (TypeError, ValueError):
                raise ValidationError(f"non-numeric ALD value {val!r}") from None
            out.append(AldRecord(_na(var), stat, val, _na(trt)))
        return cls(tuple(out))

    @property
    def arms(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(r.trt for r in self.records if r.trt is not None))

    def shared(self, variable: str) -> bool:
        """True when ``variable`` has records with absent treatment label."""
        return any(r.variable == variable and r.trt is None for r in self.records)

    def has(self, variable, statistic, trt=None) -> bool:
        try:
            self.lookup(variable, statistic, trt)
        except KeyError:
            return False
        return True

    def lookup(self, variable, statistic, trt=None) -> float:
        """Value of a ``(variable, statistic, trt)`` record.

        An arm-specific request falls back to the shared (``trt`` absent)
        record, and ``mean``/``prop`` stand in for each other.
        """
        stats = [statistic]
        if statistic == "mean":
            stats.append("prop")
        elif statistic == "prop":
            stats.append("mean")
        trts = [trt] if trt is None else [trt, None]
        for t in trts:
            for s in stats:
                key = (variable, s, t)
                if key in self._index:
                    return self._index[key]
        raise KeyError(f"no ALD record for (variable={variable!r}, statistic={statistic!r}, trt={trt!r})")

    def arm_size(self, trt: str) -> float:
        return self.lookup(None, "N", trt)

    def covariate_summary(self, name: str) -> tuple[float, float | None]:
        """Target-population mean and sd (sd None if not reported) of a covariate.

        Shared records are used directly. Otherwise per-arm records are pooled
        with arm-size weights.
        """
        for s in ("mean", "prop"):
            if (name, s, None) in self._index:
                mean = self._index[(name, s, None)]
                return mean, self._index.get((name, "sd", None))
        arms = [a for a in self.arms
                if (name, "mean", a) in self._index or (name, "prop", a) in self._index]
        if not arms:
            raise KeyError(f"no ALD mean/prop for covariate {name!r}")
        ns = np.array([self.arm_size(a) for a in arms])
        ms = np.array([self.lookup(name, "mean", a) for a in arms])
        mean = float(np.sum(ns * ms) / ns.sum())
        if all((name, "sd", a) in self._index for a in arms):
            sds = np.array([self._index[(name, "sd", a)] for a in arms])
            ss = np.sum((ns - 1) * sds**2) + np.sum(ns * (ms - mean) ** 2)
            return mean, float(math.sqrt(ss / (ns.sum() - 1)))
        return mean, None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(r.variable, r.statistic, r.value, r.trt) for r in self.records],
            columns=["variable", "statistic", "value", "trt"],
        )


def ald_lookup(ald: AldTable, variable, statistic, trt=None) -> float:
    return ald.lookup(variable, statistic, trt)


def parse_ald(path: str | Path) -> AldTable:
    """Read ALD from CSV with columns ``variable, statistic, value, trt`` (or JSON)."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        rows = json.loads(path.read_text(encoding="utf-8"))
        df = pd.DataFrame(rows)
    else:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    expected = {"variable", "statistic", "value", "trt"}
    if set(df.columns) != expected:
        raise ValidationError(f"ALD columns must be exactly {sorted(expected)}, got {list(df.columns)}")
    return AldTable.from_records(df[["variable", "statistic", "value", "trt"]].itertuples(index=False))


def serialize_ald(ald: AldTable, path: str | Path):
    """Write ALD as CSV; values use ``repr`` so parsing recovers them exactly."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        path.write_text(json.dumps([r.__dict__ for r in ald.records], indent=1), encoding="utf-8")
        return
    lines = ["variable,statistic,value,trt"]
    for r in ald.records:
        lines.append(",".join([_csv_cell(r.variable or "NA"), r.statistic, repr(float(r.value)),
                               _csv_cell(r.trt or "NA")]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _csv_cell(s: str) -> str:
    if any(ch in s for ch in ',"\n'):
        return '"' + s.replace('"', '""') + '"'
    return s
