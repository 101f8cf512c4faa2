"""Simulated A-vs-C / B-vs-C trial pairs with a known marginal truth.

Outcomes follow ``g(mu) = b0 + sum_j b_j x_j + trt * (d_t + sum_j e_j x_j)``
with treatment-specific ``d_t`` and shared effect-modifier coefficients
``e_j``. The IPD trial (A vs C) and the aggregate trial (B vs C) draw
covariates from different populations; the true marginal contrasts are
evaluated in the aggregate trial's population by a large oracle cohort.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.special import ndtr

from .data import AldRecord, AldTable, IpdTable, ModelSpec, serialize_ald, write_ipd
from .errors import ValidationError
from .glm import get_link
from .resampling import substream
from .scales import default_scale, get_scale

OUTCOME_CODES = {"binomial": "bin", "poisson": "count", "gaussian": "cont"}


@dataclass(frozen=True)
class CovariateSpec:
    """One normally distributed covariate and its outcome-model coefficients.

    ``mean_*``/``sd_*`` give the population moments in the IPD (A-vs-C) and
    ALD (B-vs-C) trials; ``prognostic`` is the main-effect coefficient and
    ``modifier`` the treatment-interaction coefficient (None: not an EM).
    With ``binary=True`` the covariate is Bernoulli with probability
    ``mean_*`` and the sds are ignored.
    """

    name: str
    mean_ipd: float = 0.0
    sd_ipd: float = 1.0
    mean_ald: float = 0.0
    sd_ald: float = 1.0
    prognostic: float = 0.0
    modifier: float | None = None
    binary: bool = False


@dataclass(frozen=True)
class TrialDGP:
    covariates: tuple[CovariateSpec, ...]
    family: str = "binomial"
    link: str | None = None
    intercept: float = 0.0
    effect_A: float = 0.0
    effect_B: float = 0.0
    sigma: float = 1.0
    rho: float = 0.0
    n_ipd: int = 400
    n_ald: int = 400
    labels: tuple[str, str, str] = ("A", "B", "C")
    oracle_n: int = 1_000_000
    scale: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(
            c if isinstance(c, CovariateSpec) else CovariateSpec(**c) for c in self.covariates))
        if self.family not in OUTCOME_CODES:
            raise ValidationError(f"unknown family {self.family!r}")
        if min(self.n_ipd, self.n_ald) < 4:
            raise ValidationError("trial sizes must be at least 4")
        k = len(self.covariates)
        if k > 1 and not -1.0 / (k - 1) < self.rho < 1.0:
            raise ValidationError(f"exchangeable correlation {self.rho} is not positive definite for {k} covariates")
        if self.sigma <= 0:
            raise ValidationError("sigma must be positive")
        for c in self.covariates:
            if c.binary and not (0 < c.mean_ipd < 1 and 0 < c.mean_ald < 1):
                raise ValidationError(f"binary covariate {c.name!r} needs probabilities in (0, 1)")
            if not c.binary and min(c.sd_ipd, c.sd_ald) <= 0:
                raise ValidationError(f"covariate {c.name!r} needs positive sds")
        if len(set(self.labels)) != 3:
            raise ValidationError("labels must be three distinct treatment names")

    @property
    def link_name(self) -> str:
        return ModelSpec(family=self.family, link=self.link).link

    def model_spec(self) -> ModelSpec:
        """The correctly specified outcome model."""
        pfs = tuple(c.name for c in self.covariates if c.prognostic != 0 or c.modifier is None)
        ems = tuple(c.name for c in self.covariates if c.modifier is not None)
        return ModelSpec(outcome="y", treatment="trt", prognostic_factors=pfs, effect_modifiers=ems,
                         family=self.family, link=self.link)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["labels"] = list(self.labels)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrialDGP":
        d = dict(d)
        d["covariates"] = tuple(CovariateSpec(**c) for c in d.get("covariates", ()))
        if "labels" in d:
            d["labels"] = tuple(d["labels"])
        return cls(**d)

    def covariate_code(self) -> str:
        kinds = {c.binary for c in self.covariates}
        return "mixed" if len(kinds) > 1 else ("bin" if kinds == {True} else "cont")


def _draw_covariates(dgp: TrialDGP, population: str, n: int, rng) -> dict[str, np.ndarray]:
    k = len(dgp.covariates)
    if k == 0:
        return {}
    R = np.full((k, k), dgp.rho) + (1 - dgp.rho) * np.eye(k)
    Z = rng.standard_normal((n, k)) @ np.linalg.cholesky(R).T
    out = {}
    for j, c in enumerate(dgp.covariates):
        m = c.mean_ipd if population == "ipd" else c.mean_ald
        if c.binary:
            out[c.name] = (ndtr(Z[:, j]) > 1 - m).astype(float)
        else:
            s = c.sd_ipd if population == "ipd" else c.sd_ald
            out[c.name] = m + s * Z[:, j]
    return out


def _linear_predictor(dgp: TrialDGP, X: Mapping[str, np.ndarray], trt: np.ndarray, effect: float):
    eta = np.full(trt.shape, dgp.intercept, dtype=float)
    mod = np.full(trt.shape, effect, dtype=float)
    for c in dgp.covariates:
        eta += c.prognostic * X[c.name]
        if c.modifier is not None:
            mod += c.modifier * X[c.name]
    return eta + trt * mod


def _outcomes(dgp: TrialDGP, mu, rng):
    if dgp.family == "binomial":
        return (rng.random(mu.shape) < mu).astype(float)
    if dgp.family == "poisson":
        return rng.poisson(mu).astype(float)
    return mu + dgp.sigma * rng.standard_normal(mu.shape)


def _trial(dgp: TrialDGP, population: str, n: int, comparator: str, effect: float, rng):
    X = _draw_covariates(dgp, population, n, rng)
    n1 = n // 2
    trt = np.r_[np.ones(n1), np.zeros(n - n1)]
    mu = get_link(dgp.link_name).inverse(_linear_predictor(dgp, X, trt, effect))
    y = _outcomes(dgp, mu, rng)
    labels = np.where(trt == 1, comparator, dgp.labels[2])
    return X, labels, y


def true_contrasts(dgp: TrialDGP, scale=None, seed=None) -> dict[str, float]:
    """Marginal ``AC``, ``BC`` and ``AB`` in the ALD population by an oracle cohort."""
    sc = get_scale(scale or dgp.scale or default_scale(dgp.family, dgp.link_name))
    rng = substream(seed, "oracle")
    X = _draw_covariates(dgp, "ald", dgp.oracle_n, rng)
    inv = get_link(dgp.link_name).inverse
    one, zero = np.ones(dgp.oracle_n), np.zeros(dgp.oracle_n)
    mC = float(np.mean(inv(_linear_predictor(dgp, X, zero, 0.0))))
    mA = float(np.mean(inv(_linear_predictor(dgp, X, one, dgp.effect_A))))
    mB = float(np.mean(inv(_linear_predictor(dgp, X, one, dgp.effect_B))))
    ac = float(sc.apply(mA) - sc.apply(mC))
    bc = float(sc.apply(mB) - sc.apply(mC))
    return {"AC": ac, "BC": bc, "AB": ac - bc, "scale": sc.name, "mean_A": mA, "mean_B": mB, "mean_C": mC}


@dataclass(frozen=True)
class TrialPair:
    ipd: IpdTable
    ald: AldTable
    truth: dict = field(default_factory=dict)
    dgp: TrialDGP | None = None


def simulate_trial_pair(dgp: TrialDGP, seed=None, with_truth: bool = True, truth_seed=None) -> TrialPair:
    """Draw an IPD trial (A vs C) and an aggregated trial (B vs C).

    The B-vs-C trial is simulated at patient level and reduced to shared
    covariate means/sds (proportions for binary covariates), per-arm outcome
    ``mean``, ``sd`` and ``sum``, and arm sizes ``N``.
    """
    A, B, C = dgp.labels
    X, labels, y = _trial(dgp, "ipd", dgp.n_ipd, A, dgp.effect_A, substream(seed, "ipd"))
    ipd = IpdTable(covariates=X, treatment=labels, outcome=y)
    Xb, lab_b, yb = _trial(dgp, "ald", dgp.n_ald, B, dgp.effect_B, substream(seed, "ald"))
    ald = aggregate(Xb, lab_b, yb, dgp)
    truth = true_contrasts(dgp, seed=seed if truth_seed is None else truth_seed) if with_truth else {}
    return TrialPair(ipd, ald, truth, dgp)


def aggregate(X: Mapping[str, np.ndarray], labels: np.ndarray, y: np.ndarray, dgp: TrialDGP) -> AldTable:
    recs = []
    for c in dgp.covariates:
        v = X[c.name]
        if c.binary:
            recs.append(AldRecord(c.name, "prop", float(v.mean()), None))
        else:
            recs.append(AldRecord(c.name, "mean", float(v.mean()), None))
            recs.append(AldRecord(c.name, "sd", float(v.std(ddof=1)), None))
    for arm in (dgp.labels[2], dgp.labels[1]):
        ya = y[labels == arm]
        recs.append(AldRecord("y", "mean", float(ya.mean()), arm))
        recs.append(AldRecord("y", "sd", float(ya.std(ddof=1)), arm))
        if dgp.family != "gaussian":
            recs.append(AldRecord("y", "sum", float(ya.sum()), arm))
    for arm in (dgp.labels[2], dgp.labels[1]):
        recs.append(AldRecord(None, "N", float(np.sum(labels == arm)), arm))
    return AldTable(tuple(recs))


def dataset_names(dgp: TrialDGP) -> tuple[str, str]:
    """File stems ``<comp><ref>_<level>_<outcome>Y_<covariates>X`` for the pair."""
    A, B, C = dgp.labels
    tail = f"{OUTCOME_CODES[dgp.family]}Y_{dgp.covariate_code()}X"
    return f"{A}{C}_IPD_{tail}", f"{B}{C}_ALD_{tail}"


def write_trial_pair(pair: TrialPair, directory) -> dict[str, Path]:
    """Write IPD and ALD CSVs plus a truth JSON into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ipd_stem, ald_stem = dataset_names(pair.dgp)
    paths = {"ipd": directory / f"{ipd_stem}.csv", "ald": directory / f"{ald_stem}.csv",
             "truth": directory / f"{ipd_stem.split('_', 1)[0]}_{ald_stem.split('_', 1)[0]}_truth.json"}
    write_ipd(pair.ipd, paths["ipd"])
    serialize_ald(pair.ald, paths["ald"])
    paths["truth"].write_text(json.dumps({"truth": pair.truth, "dgp": pair.dgp.to_dict()}, sort_keys=True,
                                         indent=2) + "\n")
    return paths
