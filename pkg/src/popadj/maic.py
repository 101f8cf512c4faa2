"""Matching-adjusted indirect comparison.

Weights are ``w_i = exp(beta^T (x_i - xbar_target))``, with ``beta`` the
minimizer of the convex objective ``sum_i exp(beta^T (x_i - xbar_target))``.
At the minimum the weighted IPD covariate means equal the target means.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import AldTable, IpdTable, ModelSpec
from .errors import ConvergenceError, NoOverlapError, ValidationError
from .glm import fit_glm, treatment_design
from .scales import default_scale, get_scale

log = logging.getLogger(__name__)

ESS_WARNING_FRACTION = 0.3
# |beta| beyond this (in standardized units) means the minimizer runs off to infinity
_DIVERGENCE_BOUND = 50.0


@dataclass(frozen=True)
class WeightSolution:
    beta: np.ndarray
    weights: np.ndarray
    ess: float
    converged: bool
    objective_value: float
    n_iterations: int


def effective_sample_size(w) -> float:
    """``(sum w)^2 / sum w^2``."""
    w = np.asarray(w, dtype=float)
    return float(w.sum() ** 2 / np.sum(w**2))


def matched_covariate_set(spec: ModelSpec) -> list[str]:
    """Covariates whose first moments MAIC balances: PFs and EMs, deduplicated."""
    names = list(spec.covariates)
    if not names:
        raise ValidationError("nothing to match: the model has no prognostic factors or effect modifiers")
    return names


def estimate_weights(X, target_means, tol: float = 1e-8, max_iter: int = 200,
                     warn: bool = True) -> WeightSolution:
    """Solve the MAIC moment-matching problem by damped Newton iterations.

    Covariates are centered at the targets and scaled by their IPD standard
    deviations; Newton steps use the exact Hessian ``sum_i w_i z_i z_i^T`` and
    an Armijo backtracking line search (factor 0.5). The stopping rule is
    ``max |gradient| < tol`` on the standardized problem.

    Raises
    ------
    NoOverlapError
        A target lies outside the observed covariate range, or the iterates
        diverge (target outside the convex hull of the IPD rows).
    ConvergenceError
        ``max_iter`` exceeded.
    """
    X = check_array(X, ensure_2d=True, dtype=float, ensure_min_samples=2)
    target = np.asarray(target_means, dtype=float).reshape(-1)
    n, q = X.shape
    if target.size != q:
        raise ValidationError(f"{q} covariates but {target.size} target means")
    lo, hi = X.min(axis=0), X.max(axis=0)
    outside = (target < lo) | (target > hi) | ((lo == hi) & (target != lo))
    if np.any(outside):
        raise NoOverlapError(
            f"no covariate overlap: target mean(s) {target[outside]} outside the IPD range "
            f"for column(s) {np.flatnonzero(outside).tolist()}"
        )
    scale = X.std(axis=0, ddof=1)
    scale[scale == 0] = 1.0
    Z = (X - target) / scale
    # collinear columns: the target must lie in the affine span of the rows
    C = Z - Z.mean(axis=0)
    _, sv, vt = np.linalg.svd(C, full_matrices=False)
    null = vt[sv <= sv.max() * 1e-10] if sv.size and sv.max() > 0 else np.eye(q)
    if null.size and np.max(np.abs(null @ Z.mean(axis=0))) > 1e-8:
        raise NoOverlapError("no covariate overlap: targets lie off the affine span of collinear "
                             "IPD covariates")

    b = np.zeros(q)
    w = np.exp(Z @ b)
    f = w.sum()
    converged = False
    it = 0
    for it in range(max_iter + 1):
        grad = Z.T @ w
        if np.max(np.abs(grad)) < tol:
            converged = True
            break
        if it == max_iter:
            break
        H = (Z * w[:, None]).T @ Z
        # minimum-norm step copes with collinear (rank-deficient) designs
        step = -np.linalg.lstsq(H, grad, rcond=None)[0]
        slope = grad @ step
        # once the predicted decrease is below rounding in f, take the full Newton step
        tiny = -slope < 1e-12 * f
        t = 1.0
        while True:
            b_new = b + t * step
            w_new = np.exp(Z @ b_new)
            f_new = w_new.sum()
            if np.isfinite(f_new) and (tiny or f_new <= f + 1e-4 * t * slope):
                break
            t *= 0.5
            if t < 1e-12:
                break
        if t < 1e-12:
            # no further decrease available: accept if balance already holds to rounding
            if np.max(np.abs(grad)) / f < 1e-12:
                converged = True
                break
            raise ConvergenceError("line search failed in MAIC weight estimation", b)
        b, w, f = b_new, w_new, f_new
        if np.max(np.abs(b)) > _DIVERGENCE_BOUND or f < 1e-300:
            raise NoOverlapError("no covariate overlap: weight objective unbounded below "
                                 "(targets outside the convex hull of the IPD covariates)")
    if not converged:
        raise ConvergenceError(f"MAIC weights did not converge in {max_iter} iterations", b / scale)
    beta = b / scale
    weights = np.exp((X - target) @ beta)
    ess = effective_sample_size(weights)
    if warn and ess < ESS_WARNING_FRACTION * n:
        warnings.warn(f"low effective sample size {ess:.1f} (< {ESS_WARNING_FRACTION:.0%} of n={n})",
                      RuntimeWarning, stacklevel=2)
    return WeightSolution(beta=beta, weights=weights, ess=ess, converged=True,
                          objective_value=float(weights.sum()), n_iterations=it)


class MaicWeighter(TransformerMixin, BaseEstimator):
    """Exponential-tilting balancing weights as a transformer.

    ``fit(X, target_means=...)`` solves for ``beta_``; ``transform(X)``
    returns ``exp((X - target_means_) @ beta_)`` as a column.
    """

    def __init__(self, tol=1e-8, max_iter=200):
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None, target_means=None):
        if target_means is None:
            raise ValidationError("target_means is required")
        sol = estimate_weights(X, target_means, tol=self.tol, max_iter=self.max_iter)
        self.target_means_ = np.asarray(target_means, dtype=float).reshape(-1)
        self.beta_ = sol.beta
        self.weights_ = sol.weights
        self.ess_ = sol.ess
        self.n_iter_ = sol.n_iterations
        return self

    def transform(self, X):
        check_is_fitted(self, "beta_")
        X = check_array(X, dtype=float)
        return np.exp((X - self.target_means_) @ self.beta_)[:, None]


def target_means(ald: AldTable, names) -> np.ndarray:
    out = []
    for c in names:
        try:
            out.append(ald.covariate_summary(c)[0])
        except KeyError:
            raise ValidationError(f"ALD lacks a mean/prop for covariate {c!r}") from None
    return np.array(out)


def weights_for(ipd: IpdTable, ald: AldTable, spec: ModelSpec, warn: bool = True) -> WeightSolution:
    names = matched_covariate_set(spec)
    return estimate_weights(ipd.matrix(names), target_means(ald, names), warn=warn)


def weighted_arm_fit(ipd: IpdTable, spec: ModelSpec, weights, comparator: str, scale):
    """Weighted ``outcome ~ 1 + trt`` fit on the scale's link."""
    sc = get_scale(scale)
    trt = ipd.indicator(comparator)
    w = np.asarray(weights, dtype=float)
    for arm in (1.0, 0.0):
        share = w[trt == arm].sum() / w.sum()
        if share < 1e-8:
            raise ValidationError("degenerate weighted arm: total weight of one arm is ~0")
    X = treatment_design(ipd.n, trt, spec.treatment)
    return fit_glm(X, ipd.outcome, w, family=spec.family, link=sc.link), X


def maic_contrast(ipd: IpdTable, spec: ModelSpec, weights, comparator: str, scale=None):
    """Point estimates from the weighted two-group model.

    Returns ``(contrast, mean_comparator, mean_reference, fit)`` where the
    contrast is the treatment coefficient on the scale's link.
    """
    sc = get_scale(scale or default_scale(spec.family, spec.link))
    fit, _ = weighted_arm_fit(ipd, spec, weights, comparator, sc)
    theta = fit.coefficients
    return float(theta[1]), float(sc.invert(theta[0] + theta[1])), float(sc.invert(theta[0])), fit

