"""Weighted generalized linear models fitted by IRLS.

Families: gaussian, binomial, poisson. Links: identity, logit, probit,
cloglog, log. Besides the canonical model-based covariance (inverse expected
information) every fit carries the HC0 sandwich covariance
``H^-1 M H^-1`` with ``H`` the observed information and ``M`` the
weighted outer product of per-row scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .data import IpdTable, ModelSpec
from .errors import ConvergenceError, NumericalError, SeparationError, SingularMatrixError, ValidationError

_CLAMP = 1e-12


@dataclass(frozen=True)
class Link:
    """Link function ``g`` with inverse and first two derivatives of ``g^-1``."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]
    dmu: Callable[[np.ndarray], np.ndarray]
    d2mu: Callable[[np.ndarray], np.ndarray]
    mu_domain: tuple[float, float]


def _clamp(mu):
    return np.clip(mu, _CLAMP, 1.0 - _CLAMP)


def _cloglog_inv(eta):
    return -np.expm1(-np.exp(eta))


def _cloglog_dmu(eta):
    return np.exp(eta - np.exp(eta))


def _probit_dmu(eta):
    return np.exp(-0.5 * eta**2) / np.sqrt(2 * np.pi)


LINKS = {
    "identity": Link("identity", lambda m: np.asarray(m, float), lambda e: np.asarray(e, float),
                     np.ones_like, np.zeros_like, (-np.inf, np.inf)),
    "logit": Link("logit", special.logit, special.expit,
                  lambda e: special.expit(e) * special.expit(-e),
                  lambda e: special.expit(e) * special.expit(-e) * np.tanh(-np.asarray(e) / 2),
                  (0.0, 1.0)),
    "probit": Link("probit", special.ndtri, lambda e: _clamp(special.ndtr(e)),
                   _probit_dmu, lambda e: -np.asarray(e) * _probit_dmu(e), (0.0, 1.0)),
    "cloglog": Link("cloglog", lambda m: np.log(-np.log1p(-np.asarray(m, float))),
                    lambda e: _clamp(_cloglog_inv(e)), _cloglog_dmu,
                    lambda e: _cloglog_dmu(e) * (1.0 - np.exp(e)), (0.0, 1.0)),
    "log": Link("log", np.log, np.exp, np.exp, np.exp, (0.0, np.inf)),
}


def get_link(name: str) -> Link:
    try:
        return LINKS[name]
    except KeyError:
        raise ValidationError(f"unknown link {name!r}; expected one of {sorted(LINKS)}") from None


class Family:
    name = ""
    estimate_dispersion = False

    def variance(self, mu):
        raise NotImplementedError

    def dvariance(self, mu):
        raise NotImplementedError

    def deviance(self, y, mu, w):
        raise NotImplementedError

    def loglik(self, y, mu, w, dispersion):
        raise NotImplementedError

    def mustart(self, y, w):
        raise NotImplementedError

    def valid_mu(self, mu):
        return np.all(np.isfinite(mu))


class Gaussian(Family):
    name = "gaussian"
    estimate_dispersion = True

    def variance(self, mu):
        return np.ones_like(mu)

    def dvariance(self, mu):
        return np.zeros_like(mu)

    def deviance(self, y, mu, w):
        return float(np.sum(w * (y - mu) ** 2))

    def loglik(self, y, mu, w, dispersion):
        sw = np.sum(w)
        sigma2 = np.sum(w * (y - mu) ** 2) / sw
        if sigma2 <= 0:
            return np.inf
        return float(-0.5 * sw * (np.log(2 * np.pi * sigma2) + 1.0))

    def mustart(self, y, w):
        return y.astype(float).copy()


class Binomial(Family):
    name = "binomial"

    def variance(self, mu):
        return mu * (1 - mu)

    def dvariance(self, mu):
        return 1 - 2 * mu

    def deviance(self, y, mu, w):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = 2 * w * (special.xlogy(y, y / mu) + special.xlogy(1 - y, (1 - y) / (1 - mu)))
        return float(np.sum(np.where(w > 0, d, 0.0)))

    def loglik(self, y, mu, w, dispersion):
        with np.errstate(divide="ignore"):
            ll = w * (special.xlogy(y, mu) + special.xlogy(1 - y, 1 - mu))
        return float(np.sum(np.where(w > 0, ll, 0.0)))

    def mustart(self, y, w):
        return (w * y + 0.5) / (w + 1)

    def valid_mu(self, mu):
        return bool(np.all(np.isfinite(mu)) and np.all(mu > 0) and np.all(mu < 1))


class Poisson(Family):
    name = "poisson"

    def variance(self, mu):
        return mu

    def dvariance(self, mu):
        return np.ones_like(mu)

    def deviance(self, y, mu, w):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = 2 * w * (special.xlogy(y, y / mu) - (y - mu))
        return float(np.sum(np.where(w > 0, d, 0.0)))

    def loglik(self, y, mu, w, dispersion):
        ll = w * (special.xlogy(y, mu) - mu - special.gammaln(y + 1))
        return float(np.sum(np.where(w > 0, ll, 0.0)))

    def mustart(self, y, w):
        return y + 0.1

    def valid_mu(self, mu):
        return bool(np.all(np.isfinite(mu)) and np.all(mu > 0))


FAMILIES = {"gaussian": Gaussian(), "binomial": Binomial(), "poisson": Poisson()}


def get_family(name: str) -> Family:
    try:
        return FAMILIES[name]
    except KeyError:
        raise ValidationError(f"unknown family {name!r}; expected one of {sorted(FAMILIES)}") from None


@dataclass(frozen=True)
class DesignMatrix:
    """Model matrix with named columns.

    Column order: ``(Intercept)``, prognostic factors, treatment indicator,
    then ``trt:EM`` products.
    """

    names: tuple[str, ...]
    values: np.ndarray
    treatment_index: int | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.names):
            raise ValidationError("design values must be n x len(names)")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def shape(self):
        return self.values.shape


def build_design(spec: ModelSpec, covariates: dict | IpdTable, treatment: np.ndarray,
                 center: dict | None = None) -> DesignMatrix:
    """Assemble the outcome-model design matrix.

    Parameters
    ----------
    spec : ModelSpec
    covariates : IpdTable or mapping of name -> array
    treatment : array
        Treatment indicator (1 = active comparator, 0 = anchor); a scalar is
        broadcast.
    center : mapping of name -> float, optional
        Values subtracted from covariates before building main effects and
        interactions.
    """
    cols = covariates.covariates if isinstance(covariates, IpdTable) else covariates
    center = center or {}
    missing = [c for c in spec.covariates if c not in cols]
    if missing:
        raise ValidationError(f"missing covariate column(s) {missing}")
    n = len(cols[spec.covariates[0]]) if spec.covariates else np.size(treatment)
    trt = np.broadcast_to(np.asarray(treatment, dtype=float), (n,))

    def col(name):
        return np.asarray(cols[name], dtype=float) - center.get(name, 0.0)

    names = ["(Intercept)", *spec.prognostic_factors, spec.treatment]
    values = [np.ones(n), *(col(c) for c in spec.prognostic_factors), trt]
    for em in spec.effect_modifiers:
        names.append(f"{spec.treatment}:{em}")
        values.append(trt * col(em))
    return DesignMatrix(tuple(names), np.column_stack(values),
                        treatment_index=1 + len(spec.prognostic_factors))


def treatment_design(n: int, treatment: np.ndarray, treatment_name: str = "trt") -> DesignMatrix:
    """Two-column design ``(Intercept), trt`` used for marginal fits."""
    trt = np.broadcast_to(np.asarray(treatment, dtype=float), (n,))
    return DesignMatrix(("(Intercept)", treatment_name), np.column_stack([np.ones(n), trt]),
                        treatment_index=1)


@dataclass
class FitResult:
    """Outcome of :func:`fit_glm`."""

    coefficients: np.ndarray
    model_cov: np.ndarray
    sandwich_cov: np.ndarray
    log_likelihood: float
    deviance: float
    converged: bool
    n_iterations: int
    dispersion: float
    family: str
    link: str
    names: tuple[str, ...] = ()
    treatment_index: int | None = None
    score: np.ndarray = field(default=None, repr=False)
    deviance_path: list = field(default_factory=list, repr=False)

    def cov(self, kind: str = "model") -> np.ndarray:
        if kind == "model":
            return self.model_cov
        if kind == "sandwich":
            return self.sandwich_cov
        raise ValidationError(f"unknown covariance kind {kind!r}")

    @property
    def treatment_effect(self) -> float:
        return float(self.coefficients[self.treatment_index])

    def summary(self) -> dict:
        return {
            "names": list(self.names),
            "coefficients": [float(c) for c in self.coefficients],
            "se_model": [float(s) for s in np.sqrt(np.diag(self.model_cov))],
            "se_sandwich": [float(s) for s in np.sqrt(np.diag(self.sandwich_cov))],
            "log_likelihood": float(self.log_likelihood),
            "deviance": float(self.deviance),
            "dispersion": float(self.dispersion),
            "converged": bool(self.converged),
            "n_iterations": int(self.n_iterations),
            "family": self.family,
            "link": self.link,
        }


def _as_array(X):
    if isinstance(X, DesignMatrix):
        return X.values, X.names, X.treatment_index
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValidationError("design must be two-dimensional")
    return X, tuple(f"x{j}" for j in range(X.shape[1])), None


def _pieces(X, beta, link):
    eta = X @ beta
    return eta, link.inverse(eta)


def fit_glm(X, y, weights=None, family: str = "binomial", link: str | None = None,
            tol: float = 1e-10, max_iter: int = 50) -> FitResult:
    """Maximum-likelihood GLM fit by iteratively reweighted least squares.

    Step-halving is applied whenever an update increases the deviance or
    leaves the mean domain. Convergence is declared when the relative
    deviance change drops below ``tol``.

    Parameters
    ----------
    X : DesignMatrix or array (n, p)
    y : array (n,)
    weights : array (n,), optional
        Non-negative prior (frequency-type) weights.
    family : {"gaussian", "binomial", "poisson"}
    link : str, optional
        Defaults to the canonical link.

    Raises
    ------
    ConvergenceError
        No convergence in ``max_iter`` iterations (``last_iterate`` holds the
        coefficients reached).
    SeparationError
        Fitted probabilities numerically 0 or 1 at the optimum.
    SingularMatrixError
        Information matrix singular (collinear design, too few weighted rows).
    """
    fam = get_family(family)
    if link is None:
        link = {"gaussian": "identity", "binomial": "logit", "poisson": "log"}[family]
    lk = get_link(link)
    Xv, names, tidx = _as_array(X)
    y = np.asarray(y, dtype=float)
    n, p = Xv.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if y.shape != (n,) or w.shape != (n,):
        raise ValidationError("y and weights must have one entry per design row")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValidationError("weights must be finite and non-negative")
    if np.count_nonzero(w > 0) < p:
        raise SingularMatrixError(f"need at least {p} positively weighted rows, got {np.count_nonzero(w > 0)}")
    if n < p:
        raise ValidationError(f"n={n} rows is fewer than p={p} parameters")

    mu = fam.mustart(y, w)
    lo, hi = lk.mu_domain
    mu = np.clip(mu, lo + 1e-8 if np.isfinite(lo) else -np.inf, hi - 1e-8 if np.isfinite(hi) else np.inf)
    eta = lk.fn(mu)
    beta = None
    # fallback point for step-halving on the very first update
    ybar = float(np.sum(w * y) / np.sum(w))
    ybar = float(np.clip(ybar, lo + 1e-6 if np.isfinite(lo) else -np.inf, hi - 1e-6 if np.isfinite(hi) else np.inf))
    beta_null = np.linalg.lstsq(Xv, np.full(n, float(lk.fn(np.array(ybar)))), rcond=None)[0]
    dev_old = np.inf
    path = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        d = lk.dmu(eta)
        var = fam.variance(mu)
        d = np.where(np.abs(d) < 1e-300, 1e-300, d)
        var = np.maximum(var, 1e-300)
        z = eta + (y - mu) / d
        W = w * d**2 / var
        sw = np.sqrt(W)
        beta_new, *_ = np.linalg.lstsq(Xv * sw[:, None], z * sw, rcond=None)
        eta_new, mu_new = _pieces(Xv, beta_new, lk)
        dev_new = fam.deviance(y, mu_new, w) if fam.valid_mu(mu_new) else np.inf
        anchor = beta if beta is not None else beta_null
        halvings = 0
        while (not np.isfinite(dev_new) or dev_new > dev_old * (1 + 1e-12) + 1e-12) and halvings < 40:
            beta_new = 0.5 * (beta_new + anchor)
            eta_new, mu_new = _pieces(Xv, beta_new, lk)
            dev_new = fam.deviance(y, mu_new, w) if fam.valid_mu(mu_new) else np.inf
            halvings += 1
        if not np.isfinite(dev_new):
            raise ConvergenceError("IRLS step left the mean domain and step-halving failed", beta_new)
        beta, eta, mu = beta_new, eta_new, mu_new
        path.append(dev_new)
        if np.isfinite(dev_old) and abs(dev_new - dev_old) / (abs(dev_new) + 0.1) < tol:
            converged = True
            break
        dev_old = dev_new

    if not converged:
        if fam.name == "binomial" and _separated(mu, w):
            raise SeparationError("perfect separation: fitted probabilities numerically 0 or 1", beta)
        raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations", beta)
    if fam.name == "binomial" and _separated(mu, w) and np.max(np.abs(eta[w > 0])) > 30:
        raise SeparationError("perfect separation: fitted probabilities numerically 0 or 1", beta)

    dev = fam.deviance(y, mu, w)
    if fam.estimate_dispersion:
        dof = np.sum(w) - p
        dispersion = float(dev / dof) if dof > 0 else float("nan")
    else:
        dispersion = 1.0
    d = lk.dmu(eta)
    var = np.maximum(fam.variance(mu), 1e-300)
    info = (Xv * (w * d**2 / var)[:, None]).T @ Xv
    model_cov = _inverse(info, "expected information") * (dispersion if fam.estimate_dispersion else 1.0)
    score_rows = _score_rows(Xv, y, mu, eta, lk, fam)
    total_score = (w[:, None] * score_rows).sum(axis=0)
    fit = FitResult(
        coefficients=beta, model_cov=_symmetrize(model_cov), sandwich_cov=None,
        log_likelihood=fam.loglik(y, mu, w, dispersion), deviance=dev, converged=True,
        n_iterations=it, dispersion=dispersion, family=fam.name, link=lk.name,
        names=names, treatment_index=tidx, score=total_score, deviance_path=path,
    )
    fit.sandwich_cov = sandwich_cov(fit, Xv, y, w)
    return fit


def _separated(mu, w):
    m = mu[w > 0]
    return bool(np.any(m < 1e-10) or np.any(m > 1 - 1e-10))


def _symmetrize(a):
    return 0.5 * (a + a.T)


def _inverse(a, what):
    try:
        cond = np.linalg.cond(a)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularMatrixError(f"singular {what} (condition number {cond:.3g})")
    return np.linalg.inv(a)


def _score_rows(X, y, mu, eta, lk, fam):
    """Per-row score of the (unit-dispersion) log-likelihood."""
    d = lk.dmu(eta)
    var = np.maximum(fam.variance(mu), 1e-300)
    return X * ((y - mu) * d / var)[:, None]


def observed_information(fit: FitResult, X, y, weights=None) -> np.ndarray:
    """Negative Hessian of the weighted (unit-dispersion) log-likelihood."""
    Xv, _, _ = _as_array(X)
    y = np.asarray(y, float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, float)
    lk, fam = get_link(fit.link), get_family(fit.family)
    eta = Xv @ fit.coefficients
    mu = lk.inverse(eta)
    d, d2 = lk.dmu(eta), lk.d2mu(eta)
    var = np.maximum(fam.variance(mu), 1e-300)
    # d/deta [dmu/deta / V(mu)]
    da = d2 / var - d**2 * fam.dvariance(mu) / var**2
    h = w * (d**2 / var - (y - mu) * da)
    return _symmetrize((Xv * h[:, None]).T @ Xv)


def sandwich_cov(fit: FitResult, X, y, weights=None) -> np.ndarray:
    """HC0 sandwich covariance ``H^-1 M H^-1``.

    ``H`` is the observed information at the fitted coefficients and
    ``M = sum_i w_i^2 s_i s_i^T`` with ``s_i`` the per-row score. The
    dispersion cancels, so the unit-dispersion forms are used throughout.
    """
    Xv, _, _ = _as_array(X)
    y = np.asarray(y, float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, float)
    lk, fam = get_link(fit.link), get_family(fit.family)
    eta = Xv @ fit.coefficients
    mu = lk.inverse(eta)
    s = _score_rows(Xv, y, mu, eta, lk, fam) * w[:, None]
    meat = s.T @ s
    bread_inv = _inverse(observed_information(fit, Xv, y, w), "observed information")
    return _symmetrize(bread_inv @ meat @ bread_inv)


def numerical_gradient(fn: Callable[[np.ndarray], float], theta: np.ndarray) -> np.ndarray:
    """Central differences with step ``max(1e-6, 1e-6 |theta_j|)``."""
    theta = np.asarray(theta, dtype=float)
    grad = np.empty_like(theta)
    for j in range(theta.size):
        h = max(1e-6, 1e-6 * abs(theta[j]))
        up, dn = theta.copy(), theta.copy()
        up[j] += h
        dn[j] -= h
        grad[j] = (fn(up) - fn(dn)) / (2 * h)
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient in delta method")
    return grad


def delta_method_var(transform: Callable[[np.ndarray], float], fit: FitResult | None = None,
                     cov: str | np.ndarray = "model", theta: np.ndarray | None = None) -> float:
    """Delta-method variance ``grad^T C grad`` of a scalar function of the coefficients.

    ``cov`` is ``"model"``, ``"sandwich"`` or an explicit matrix; ``theta``
    defaults to the fit's coefficients.
    """
    theta = fit.coefficients if theta is None else np.asarray(theta, float)
    C = fit.cov(cov) if isinstance(cov, str) else np.asarray(cov, float)
    g = numerical_gradient(transform, theta)
    return float(g @ C @ g)


def predict_mean(fit: FitResult, X_new, coefficients: np.ndarray | None = None) -> np.ndarray:
    """``g^-1(X_new @ theta)`` row by row."""
    Xv, names, _ = _as_array(X_new)
    if isinstance(X_new, DesignMatrix) and fit.names and names != tuple(fit.names):
        raise ValidationError(f"column mismatch: fit has {fit.names}, new design has {names}")
    theta = fit.coefficients if coefficients is None else coefficients
    if Xv.shape[1] != len(theta):
        raise ValidationError(f"column mismatch: expected {len(theta)} columns, got {Xv.shape[1]}")
    return get_link(fit.link).inverse(Xv @ theta)


def fit_spec(spec: ModelSpec, ipd: IpdTable, comparator: str, weights=None,
             center: dict | None = None) -> tuple[FitResult, DesignMatrix]:
    """Fit the full outcome model of ``spec`` to ``ipd``."""
    X = build_design(spec, ipd, ipd.indicator(comparator), center=center)
    return fit_glm(X, ipd.outcome, weights, family=spec.family, link=spec.link), X


def names_index(names: Sequence[str], name: str) -> int:
    return list(names).index(name)
