"""Synthetic target-population covariates from a Gaussian copula.

Draw ``Z ~ MVN(0, rho)``, map to uniforms ``U = Phi(Z)``, then through each
covariate's quantile function ``X_k = F_k^{-1}(U_k)``. Marginal parameters
come from the ALD summaries by the method of moments unless overridden.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import special

from .data import AldTable, IpdTable
from .errors import SingularMatrixError, ValidationError

DISTRIBUTIONS = ("norm", "gamma", "binom", "lognorm")
_PARAM_NAMES = {
    "norm": ("mean", "sd"),
    "gamma": ("shape", "rate"),
    "binom": ("prob",),
    "lognorm": ("meanlog", "sdlog"),
}


@dataclass(frozen=True)
class CorrelationMatrix:
    values: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        k = len(self.names)
        if v.shape != (k, k):
            raise ValidationError(f"correlation matrix must be {k}x{k}")
        if not np.allclose(v, v.T, atol=1e-10) or not np.allclose(np.diag(v), 1.0, atol=1e-10):
            raise ValidationError("correlation matrix must be symmetric with unit diagonal")
        object.__setattr__(self, "values", repair_psd(v))
        object.__setattr__(self, "names", tuple(self.names))

    def to_list(self):
        return [[float(x) for x in row] for row in self.values]


def repair_psd(corr: np.ndarray, floor: float = 1e-10) -> np.ndarray:
    """Clip eigenvalues at ``floor`` and rescale back to unit diagonal."""
    corr = 0.5 * (corr + corr.T)
    vals, vecs = np.linalg.eigh(corr)
    if vals.min() >= floor:
        return corr
    fixed = (vecs * np.maximum(vals, floor)) @ vecs.T
    d = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(d, d)
    np.fill_diagonal(fixed, 1.0)
    return fixed


def correlation_from_ipd(ipd: IpdTable, names: Sequence[str]) -> CorrelationMatrix:
    """Pearson correlation of IPD covariates (all rows), PSD-repaired."""
    X = ipd.matrix(list(names))
    if X.shape[0] < 2:
        raise ValidationError("need at least two IPD rows to estimate correlations")
    sd = X.std(axis=0)
    if np.any(sd == 0):
        const = [n for n, s in zip(names, sd) if s == 0]
        raise ValidationError(f"constant covariate column(s) {const}: correlation undefined")
    corr = np.atleast_2d(np.corrcoef(X, rowvar=False))
    corr = np.clip(corr, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return CorrelationMatrix(corr, tuple(names))


@dataclass(frozen=True)
class Marginal:
    dist: str
    params: Mapping[str, float]

    def __post_init__(self):
        if self.dist not in DISTRIBUTIONS:
            raise ValidationError(f"unsupported marginal {self.dist!r}; expected one of {DISTRIBUTIONS}")
        p = dict(self.params)
        need = _PARAM_NAMES[self.dist]
        if any(k not in p for k in need):
            raise ValidationError(f"{self.dist} marginal needs parameters {need}, got {sorted(p)}")
        p = {k: float(p[k]) for k in need}
        ok = {
            "norm": p.get("sd", 1) > 0,
            "gamma": p.get("shape", 1) > 0 and p.get("rate", 1) > 0,
            "binom": 0.0 <= p.get("prob", 0.5) <= 1.0,
            "lognorm": p.get("sdlog", 1) > 0,
        }[self.dist]
        if not ok or not all(math.isfinite(v) for v in p.values()):
            raise ValidationError(f"invalid {self.dist} parameters {p}")
        object.__setattr__(self, "params", p)

    def quantile_from_normal(self, z: np.ndarray) -> np.ndarray:
        """``F^{-1}(Phi(z))``, evaluated without losing the upper tail."""
        p = self.params
        if self.dist == "norm":
            return p["mean"] + p["sd"] * z
        if self.dist == "lognorm":
            return np.exp(p["meanlog"] + p["sdlog"] * z)
        if self.dist == "gamma":
            # upper tail via the complementary inverse keeps precision for z > 0
            lower = special.gammaincinv(p["shape"], special.ndtr(z))
            upper = special.gammainccinv(p["shape"], special.ndtr(-z))
            return np.where(z <= 0, lower, upper) / p["rate"]
        # Bernoulli: 1 if u > 1 - p
        u = special.ndtr(z)
        return (u > 1.0 - p["prob"]).astype(float)

    def mean(self) -> float:
        p = self.params
        return {
            "norm": lambda: p["mean"],
            "gamma": lambda: p["shape"] / p["rate"],
            "binom": lambda: p["prob"],
            "lognorm": lambda: math.exp(p["meanlog"] + p["sdlog"] ** 2 / 2),
        }[self.dist]()

    def sd(self) -> float:
        p = self.params
        return {
            "norm": lambda: p["sd"],
            "gamma": lambda: math.sqrt(p["shape"]) / p["rate"],
            "binom": lambda: math.sqrt(p["prob"] * (1 - p["prob"])),
            "lognorm": lambda: math.sqrt(math.expm1(p["sdlog"] ** 2)) * self.mean(),
        }[self.dist]()

    def to_dict(self):
        return {"dist": self.dist, "params": dict(self.params)}


def moments_to_params(dist: str, mean: float, sd: float | None) -> dict[str, float]:
    """Method-of-moments parameters from a mean and standard deviation."""
    if dist == "binom":
        return {"prob": mean}
    if sd is None:
        raise ValidationError(f"{dist} marginal needs an sd")
    if sd <= 0:
        raise ValidationError(f"invalid moments for {dist}: sd must be positive (got {sd})")
    if dist == "norm":
        return {"mean": mean, "sd": sd}
    if dist == "gamma":
        if mean <= 0:
            raise ValidationError(f"invalid moments for gamma: mean must be positive (got {mean})")
        return {"shape": (mean / sd) ** 2, "rate": mean / sd**2}
    if dist == "lognorm":
        if mean <= 0:
            raise ValidationError(f"invalid moments for lognorm: mean must be positive (got {mean})")
        s2 = math.log1p((sd / mean) ** 2)
        return {"meanlog": math.log(mean) - s2 / 2, "sdlog": math.sqrt(s2)}
    raise ValidationError(f"unsupported marginal {dist!r}")


def _coerce_params(dist: str, params) -> dict:
    if isinstance(params, Mapping):
        return dict(params)
    params = list(params)
    names = _PARAM_NAMES.get(dist)
    if names is None or len(params) != len(names):
        raise ValidationError(f"{dist} parameters must be {names}")
    return dict(zip(names, params))


def _dist_from_keys(params) -> str:
    """Family implied by the parameter names of a mapping, else normal."""
    if isinstance(params, Mapping):
        for dist, names in _PARAM_NAMES.items():
            if set(params) == set(names):
                return dist
    return "norm"


@dataclass(frozen=True)
class MarginalSpec:
    names: tuple[str, ...]
    marginals: tuple[Marginal, ...]

    def __getitem__(self, name) -> Marginal:
        return self.marginals[self.names.index(name)]

    def to_dict(self):
        return {n: m.to_dict() for n, m in zip(self.names, self.marginals)}


def resolve_marginals(ald: AldTable | None, names: Sequence[str], distns: Mapping[str, str] | None = None,
                      params: Mapping | None = None) -> MarginalSpec:
    """Resolve each covariate's marginal distribution.

    Precedence: explicit ``params`` (with ``distns`` naming the family, else
    the family whose parameter names match, else normal), then method of moments on the ALD mean/sd. A covariate with no
    explicit family defaults to normal, except when the ALD has a proportion
    but no sd, which gives a Bernoulli marginal.
    """
    distns = dict(distns or {})
    params = dict(params or {})
    unknown = (set(distns) | set(params)) - set(names)
    if unknown:
        raise ValidationError(f"marginal settings for unknown covariate(s) {sorted(unknown)}")
    out = []
    for name in names:
        dist = distns.get(name)
        if name in params:
            dist = dist or _dist_from_keys(params[name])
            out.append(Marginal(dist, _coerce_params(dist, params[name])))
            continue
        if ald is None:
            raise ValidationError(f"no ALD summary or parameters for covariate {name!r}")
        try:
            mean, sd = ald.covariate_summary(name)
        except KeyError:
            raise ValidationError(f"missing statistic: ALD has no mean/prop for covariate {name!r}") from None
        if dist is None:
            dist = "binom" if sd is None and ald.has(name, "prop") else "norm"
        if dist != "binom" and sd is None:
            raise ValidationError(f"missing statistic: ALD has no sd for covariate {name!r} ({dist} marginal)")
        out.append(Marginal(dist, moments_to_params(dist, mean, sd)))
    return MarginalSpec(tuple(names), tuple(out))


@dataclass(frozen=True)
class SyntheticCohort:
    values: np.ndarray
    names: tuple[str, ...]
    rho: CorrelationMatrix
    marginals: MarginalSpec
    seed: object = field(default=None, compare=False)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    def columns(self) -> dict[str, np.ndarray]:
        return {n: self.values[:, j] for j, n in enumerate(self.names)}


def simulate_cohort(rho: CorrelationMatrix, marginals: MarginalSpec, N: int, rng: np.random.Generator,
                    seed=None) -> SyntheticCohort:
    """Draw ``N`` synthetic covariate rows through the Gaussian copula."""
    if N < 1:
        raise ValidationError("synthetic cohort size N must be >= 1")
    if tuple(rho.names) != tuple(marginals.names):
        raise ValidationError(f"correlation names {rho.names} do not match marginals {marginals.names}")
    try:
        L = np.linalg.cholesky(rho.values)
    except np.linalg.LinAlgError:
        raise SingularMatrixError("Cholesky factorization of the correlation matrix failed") from None
    Z = rng.standard_normal((N, len(rho.names))) @ L.T
    X = np.column_stack([m.quantile_from_normal(Z[:, j]) for j, m in enumerate(marginals.marginals)])
    return SyntheticCohort(X, tuple(rho.names), rho, marginals, seed)


def as_correlation(rho, names: Sequence[str]) -> CorrelationMatrix:
    """Accept a CorrelationMatrix, a square array/list, or a mapping of pairs."""
    if isinstance(rho, CorrelationMatrix):
        if tuple(rho.names) != tuple(names):
            idx = [rho.names.index(n) for n in names]
            return CorrelationMatrix(rho.values[np.ix_(idx, idx)], tuple(names))
        return rho
    if isinstance(rho, (int, float)):
        k = len(names)
        return CorrelationMatrix(np.full((k, k), float(rho)) + (1 - float(rho)) * np.eye(k), tuple(names))
    return CorrelationMatrix(np.asarray(rho, dtype=float), tuple(names))
