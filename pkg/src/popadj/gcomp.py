"""Parametric G-computation: maximum likelihood, Bayesian, and MIM variants.

All three marginalize an IPD outcome model over a synthetic cohort drawn
from the target population (see :mod:`popadj.cohort`):

* ML: one fitted model, direct standardization, bootstrap or sandwich
  variance.
* Bayesian: posterior draws from an adaptive random-walk Metropolis sampler;
  the contrast is computed per draw.
* MIM: posterior-predictive synthetic outcome datasets, each analysed with a
  marginal ``outcome ~ trt`` model, pooled by Rubin's rules.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import special

from .cohort import (CorrelationMatrix, SyntheticCohort, as_correlation, correlation_from_ipd,
                     resolve_marginals, simulate_cohort)
from .data import AldTable, IpdTable, ModelSpec
from .errors import ConvergenceError, NumericalError, SeparationError, ValidationError
from .glm import (DesignMatrix, FitResult, build_design, delta_method_var, fit_glm, fit_spec, get_link,
                  treatment_design)
from .resampling import BootstrapPlan, bootstrap_replicates, substream
from .scales import EstimateWithVar, Scale, get_scale

log = logging.getLogger(__name__)


def make_cohort(ipd: IpdTable, ald: AldTable, spec: ModelSpec, N: int = 1000, rho=None,
                marginal_distns: Mapping | None = None, marginal_params: Mapping | None = None,
                rng: np.random.Generator | None = None, seed=None) -> SyntheticCohort:
    """Synthetic target cohort over the model's covariates.

    ``rho`` defaults to the IPD correlation matrix; marginals default to
    normal with the ALD mean/sd.
    """
    names = list(spec.covariates)
    if not names:
        raise ValidationError("G-computation needs at least one covariate")
    corr = correlation_from_ipd(ipd, names) if rho is None else as_correlation(rho, names)
    marg = resolve_marginals(ald, names, marginal_distns, marginal_params)
    rng = rng if rng is not None else substream(seed, "cohort")
    return simulate_cohort(corr, marg, N, rng, seed=seed)


class Standardizer:
    """Averages model predictions over a fixed cohort under each arm."""

    def __init__(self, spec: ModelSpec, cohort: SyntheticCohort):
        cols = cohort.columns()
        self.X1 = build_design(spec, cols, 1.0).values
        self.X0 = build_design(spec, cols, 0.0).values
        self.link = get_link(spec.link)

    def means(self, theta: np.ndarray) -> tuple[float, float]:
        inv = self.link.inverse
        return float(np.mean(inv(self.X1 @ theta))), float(np.mean(inv(self.X0 @ theta)))

    def means_many(self, thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Marginal means for each row of ``thetas`` (S x p)."""
        inv = self.link.inverse
        return inv(self.X1 @ thetas.T).mean(axis=0), inv(self.X0 @ thetas.T).mean(axis=0)


def _contrast(sc: Scale, m1, m0):
    return sc.apply(m1) - sc.apply(m0)


def gcomp_ml_contrast(ipd: IpdTable, ald: AldTable, spec: ModelSpec, comparator: str, scale,
                      cohort: SyntheticCohort, var_method: str = "sample",
                      plan: BootstrapPlan | None = None):
    """Maximum-likelihood G-computation.

    Returns
    -------
    contrast : EstimateWithVar
        ``g(mean under comparator) - g(mean under anchor)`` over the cohort.
    absolute : dict
        Marginal means under each arm (natural scale) with variances.
    fit : FitResult
    """
    sc = get_scale(scale)
    fit, _ = fit_spec(spec, ipd, comparator)
    std = Standardizer(spec, cohort)
    m1, m0 = std.means(fit.coefficients)
    est = _contrast(sc, m1, m0)
    if var_method == "sandwich":
        V = fit.sandwich_cov
        var = delta_method_var(lambda t: _contrast(sc, *std.means(t)), fit, V)
        v1 = delta_method_var(lambda t: std.means(t)[0], fit, V)
        v0 = delta_method_var(lambda t: std.means(t)[1], fit, V)
    elif var_method == "sample":
        plan = plan or BootstrapPlan()

        def stat(boot: IpdTable):
            f, _ = fit_spec(spec, boot, comparator)
            b1, b0 = std.means(f.coefficients)
            return [_contrast(sc, b1, b0), b1, b0]

        reps = bootstrap_replicates(stat, ipd, plan)
        var, v1, v0 = reps.var(axis=0, ddof=1)
    else:
        raise ValidationError(f"var_method {var_method!r} not available for gcomp_ml")
    absolute = {"comparator": EstimateWithVar(m1, float(v1), "natural"),
                "reference": EstimateWithVar(m0, float(v0), "natural")}
    return EstimateWithVar(float(est), float(var), sc.name), absolute, fit


# ---------------------------------------------------------------------------
# Bayesian outcome model


@dataclass
class PosteriorDraws:
    """Retained MCMC draws for the regression coefficients.

    ``sigma`` holds the residual sd draws for gaussian models (None otherwise).
    """

    draws: np.ndarray
    names: tuple[str, ...]
    acceptance_rate: float
    rhat: np.ndarray
    ess: np.ndarray
    sigma: np.ndarray | None = None
    prior_sd: np.ndarray | None = None
    settings: dict = field(default_factory=dict)

    @property
    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)


def _loglik_fn(X, y, family, link, w):
    lk = get_link(link)
    if family == "binomial" and link == "logit":
        def ll(theta, sigma=None):
            eta = X @ theta
            return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))
    elif family == "binomial":
        def ll(theta, sigma=None):
            mu = lk.inverse(X @ theta)
            if np.any(mu <= 0) or np.any(mu >= 1):
                return -np.inf
            return float(np.sum(w * (special.xlogy(y, mu) + special.xlogy(1 - y, 1 - mu))))
    elif family == "poisson":
        def ll(theta, sigma=None):
            eta = X @ theta
            if link == "log":
                return float(np.sum(w * (y * eta - np.exp(eta))))
            mu = lk.inverse(eta)
            if np.any(mu <= 0):
                return -np.inf
            return float(np.sum(w * (special.xlogy(y, mu) - mu)))
    elif family == "gaussian":
        sw = float(np.sum(w))

        def ll(theta, sigma=None):
            r = y - lk.inverse(X @ theta)
            return float(-sw * math.log(sigma) - np.sum(w * r**2) / (2 * sigma**2))
    else:
        raise ValidationError(f"unknown family {family!r}")
    return ll


def split_rhat(x: np.ndarray) -> np.ndarray:
    """Split-chain potential scale reduction for each column of a single chain."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0] // 2
    halves = np.stack([x[:n], x[n:2 * n]])
    W = halves.var(axis=1, ddof=1).mean(axis=0)
    B = n * halves.mean(axis=1).var(axis=0, ddof=1)
    var_plus = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt(np.where(W > 0, var_plus / W, 1.0))


def effective_draws(x: np.ndarray) -> np.ndarray:
    """Effective number of draws per column (Geyer initial positive sequence)."""
    x = np.asarray(x, dtype=float)
    S = x.shape[0]
    out = np.empty(x.shape[1])
    for j in range(x.shape[1]):
        c = x[:, j] - x[:, j].mean()
        v = c @ c / S
        if v == 0:
            out[j] = S
            continue
        f = np.fft.rfft(c, n=2 * S)
        acf = np.fft.irfft(f * np.conj(f))[:S] / (S * v)
        tau = -1.0
        for k in range(0, S - 1, 2):
            pair = acf[k] + acf[k + 1]
            if pair < 0:
                break
            tau += 2 * pair
        out[j] = S / max(tau, 1e-12)
    return out


def sample_posterior(X, y, family: str, link: str, rng: np.random.Generator, prior_scale: float = 2.5,
                     prior_intercept_scale: float = 10.0, n_draws: int = 4000, n_burnin: int = 1000,
                     target_accept: float = 0.3, weights=None) -> PosteriorDraws:
    """Adaptive random-walk Metropolis for a GLM with independent normal priors.

    Priors are ``N(0, prior_scale / sd(x_j))`` on each slope (scaled further
    by ``sd(y)`` for gaussian models), ``N(0, prior_intercept_scale)`` on the
    intercept, and an exponential prior with rate ``1/sd(y)`` on the gaussian
    residual sd. The chain starts at the MLE with proposal covariance equal to
    the inverse information there; during burn-in the proposal scale is tuned
    toward ``target_accept`` and the covariance is re-estimated once from the
    burn-in draws.
    """
    Xv = X.values if isinstance(X, DesignMatrix) else np.asarray(X, float)
    names = X.names if isinstance(X, DesignMatrix) else tuple(f"x{j}" for j in range(Xv.shape[1]))
    y = np.asarray(y, float)
    n, p = Xv.shape
    if n < p:
        raise ValidationError(f"n={n} rows is fewer than p={p} parameters")
    w = np.ones(n) if weights is None else np.asarray(weights, float)
    try:
        mle = fit_glm(Xv, y, w, family=family, link=link)
    except NumericalError as exc:
        raise NumericalError(f"MLE pre-fit for the posterior sampler failed: {exc}") from exc

    gaussian = family == "gaussian"
    sy = float(np.std(y, ddof=1)) if gaussian else 1.0
    sy = sy if sy > 0 else 1.0
    xsd = Xv.std(axis=0, ddof=1)
    prior_sd = np.empty(p)
    for j in range(p):
        if xsd[j] == 0:
            prior_sd[j] = prior_intercept_scale * sy
        else:
            prior_sd[j] = prior_scale * sy / xsd[j]

    ll = _loglik_fn(Xv, y, family, link, w)

    def logpost(state):
        theta = state[:p]
        lp = -0.5 * np.sum((theta / prior_sd) ** 2)
        if gaussian:
            log_sigma = state[p]
            sigma = math.exp(log_sigma)
            lp += -sigma / sy + log_sigma  # exponential(rate=1/sd(y)) prior plus Jacobian
            return lp + ll(theta, sigma)
        return lp + ll(theta)

    start = mle.coefficients.copy()
    cov = mle.model_cov.copy()
    if gaussian:
        sigma_hat = math.sqrt(max(mle.dispersion, 1e-12))
        start = np.append(start, math.log(sigma_hat))
        cov = np.block([[cov, np.zeros((p, 1))], [np.zeros((1, p)), np.array([[0.5 / w.sum()]])]])
    d = start.size
    L = np.linalg.cholesky(cov + 1e-12 * np.eye(d))
    log_s = math.log(2.38 / math.sqrt(d))
    cur, lp_cur = start, logpost(start)
    if not np.isfinite(lp_cur):
        raise NumericalError("log posterior not finite at the MLE")

    batch = 50
    burn_store = np.empty((n_burnin, d))
    kept = np.empty((n_draws, d))
    acc_batch = 0
    acc_kept = 0
    for t in range(n_burnin + n_draws):
        prop = cur + math.exp(log_s) * (L @ rng.standard_normal(d))
        lp_prop = logpost(prop)
        accepted = math.log(rng.random()) < lp_prop - lp_cur
        if accepted:
            cur, lp_cur = prop, lp_prop
        if t < n_burnin:
            burn_store[t] = cur
            acc_batch += accepted
            if (t + 1) % batch == 0:
                k = (t + 1) // batch
                log_s += (acc_batch / batch - target_accept) * min(1.0, 2.0 / math.sqrt(k))
                acc_batch = 0
            if t + 1 == n_burnin // 2 and n_burnin >= 200:
                emp = np.cov(burn_store[n_burnin // 4: n_burnin // 2].T)
                emp = np.atleast_2d(emp)
                try:
                    L = np.linalg.cholesky(0.9 * emp + 0.1 * cov + 1e-12 * np.eye(d))
                    log_s = math.log(2.38 / math.sqrt(d))
                except np.linalg.LinAlgError:
                    pass
        else:
            kept[t - n_burnin] = cur
            acc_kept += accepted
    rate = acc_kept / max(n_draws, 1)
    if rate < 0.05:
        raise ConvergenceError(f"pathological Metropolis acceptance rate {rate:.3f} after adaptation")
    theta_draws = kept[:, :p]
    sigma = np.exp(kept[:, p]) if gaussian else None
    return PosteriorDraws(
        draws=theta_draws, names=tuple(names), acceptance_rate=rate,
        rhat=split_rhat(kept), ess=effective_draws(kept), sigma=sigma, prior_sd=prior_sd,
        settings={"n_draws": n_draws, "n_burnin": n_burnin, "target_accept": target_accept,
                  "prior_scale": prior_scale, "prior_intercept_scale": prior_intercept_scale},
    )


def posterior_for(ipd: IpdTable, spec: ModelSpec, comparator: str, rng, **kwargs) -> PosteriorDraws:
    X = build_design(spec, ipd, ipd.indicator(comparator))
    return sample_posterior(X, ipd.outcome, spec.family, spec.link, rng, **kwargs)


def gcomp_bayes_contrast(ipd: IpdTable, ald: AldTable, spec: ModelSpec, comparator: str, scale,
                         cohort: SyntheticCohort, rng: np.random.Generator, ci: float = 0.95,
                         **sampler):
    """Bayesian G-computation: posterior distribution of the marginal contrast.

    Returns
    -------
    contrast : EstimateWithVar
        Posterior mean and variance of ``g(mean_1^(m)) - g(mean_0^(m))``.
    absolute : dict
    posterior : PosteriorDraws
    summary : dict
        Equal-tailed credible interval and the per-draw contrasts.
    """
    sc = get_scale(scale)
    post = posterior_for(ipd, spec, comparator, rng, **sampler)
    std = Standardizer(spec, cohort)
    m1, m0 = std.means_many(post.draws)
    delta = _contrast(sc, m1, m0)
    alpha = (1 - ci) / 2
    lo, hi = np.quantile(delta, [alpha, 1 - alpha])
    absolute = {"comparator": EstimateWithVar(float(m1.mean()), float(m1.var(ddof=1)), "natural"),
                "reference": EstimateWithVar(float(m0.mean()), float(m0.var(ddof=1)), "natural")}
    summary = {"credible_interval": [float(lo), float(hi)], "level": ci}
    return EstimateWithVar(float(delta.mean()), float(delta.var(ddof=1)), sc.name), absolute, post, summary


# ---------------------------------------------------------------------------
# Multiple imputation marginalization


@dataclass(frozen=True)
class RubinPooled:
    qbar: float
    ubar: float
    b: float
    total_var: float
    nu: float
    m: int


def rubin_pool(Q, U, nu_com: float | None = None) -> RubinPooled:
    """Combine per-synthesis estimates ``Q`` and variances ``U`` by Rubin's rules.

    ``total_var = mean(U) + (1 + 1/M) var(Q)``. Degrees of freedom follow
    Barnard and Rubin when the complete-data degrees of freedom ``nu_com``
    are given, else the classic large-sample formula.
    """
    Q = np.asarray(Q, dtype=float)
    U = np.asarray(U, dtype=float)
    M = Q.size
    if M < 2 or U.size != M:
        raise ValidationError("Rubin pooling needs M >= 2 estimates with matching variances")
    qbar = float(Q.mean())
    ubar = float(U.mean())
    b = float(Q.var(ddof=1))
    total = ubar + (1 + 1 / M) * b
    lam = (1 + 1 / M) * b / total if total > 0 else 0.0
    nu_old = (M - 1) / lam**2 if lam > 0 else math.inf
    if nu_com is None:
        nu = nu_old
    else:
        nu_obs = (nu_com + 1) / (nu_com + 3) * nu_com * (1 - lam)
        nu = nu_obs if math.isinf(nu_old) else nu_old * nu_obs / (nu_old + nu_obs)
    return RubinPooled(qbar=qbar, ubar=ubar, b=b, total_var=total, nu=float(nu), m=M)


def _draw_outcomes(family: str, mu: np.ndarray, sigma, rng) -> np.ndarray:
    if family == "binomial":
        return (rng.random(mu.shape) < mu).astype(float)
    if family == "poisson":
        return rng.poisson(mu).astype(float)
    return mu + sigma * rng.standard_normal(mu.shape)


def mim_contrast(ipd: IpdTable, ald: AldTable, spec: ModelSpec, comparator: str, scale,
                 posterior: PosteriorDraws, cohort_factory, n_syntheses: int = 20, seed=None):
    """Multiple imputation marginalization.

    For each synthesis a posterior parameter draw and a fresh cohort (from
    ``cohort_factory(rng)``) generate outcomes under both arms; the marginal
    model ``outcome ~ trt`` on the scale's link gives ``Q^(m)`` and ``U^(m)``.

    Returns
    -------
    contrast : EstimateWithVar
    absolute : dict
    pooled : RubinPooled
    per_synthesis : dict
        ``Q`` and ``U`` lists plus the pooled degrees of freedom of each arm mean.
    """
    if n_syntheses < 2:
        raise ValidationError("MIM needs at least 2 syntheses")
    sc = get_scale(scale)
    S = posterior.draws.shape[0]
    pick = substream(seed, "mim", "draws").choice(S, size=n_syntheses, replace=S < n_syntheses)
    Q, U = [], []
    arm_means = {1: [], 0: []}
    arm_vars = {1: [], 0: []}
    for m in range(n_syntheses):
        theta = posterior.draws[pick[m]]
        sigma = None if posterior.sigma is None else posterior.sigma[pick[m]]
        for attempt in range(2):
            rng = substream(seed, "mim", m, attempt)
            cohort = cohort_factory(rng)
            std = Standardizer(spec, cohort)
            lk = std.link
            mu1, mu0 = lk.inverse(std.X1 @ theta), lk.inverse(std.X0 @ theta)
            y1 = _draw_outcomes(spec.family, mu1, sigma, rng)
            y0 = _draw_outcomes(spec.family, mu0, sigma, rng)
            degenerate = spec.family == "binomial" and (np.ptp(y1) == 0 or np.ptp(y0) == 0)
            degenerate |= spec.family == "poisson" and (y1.sum() == 0 or y0.sum() == 0)
            if not degenerate:
                break
        else:
            raise NumericalError(f"synthesis {m} produced a single-class outcome twice")
        N = cohort.N
        y = np.concatenate([y1, y0])
        trt = np.concatenate([np.ones(N), np.zeros(N)])
        fit = fit_glm(treatment_design(2 * N, trt, spec.treatment), y, family=spec.family, link=sc.link)
        Q.append(float(fit.coefficients[1]))
        U.append(float(fit.model_cov[1, 1]))
        for arm, ya in ((1, y1), (0, y0)):
            arm_means[arm].append(float(ya.mean()))
            arm_vars[arm].append(float(ya.var(ddof=1) / N))
    nu_com = 2 * cohort.N - 2
    pooled = rubin_pool(Q, U, nu_com=nu_com)
    absolute, arm_nu = {}, {}
    for key, arm in (("comparator", 1), ("reference", 0)):
        pa = rubin_pool(arm_means[arm], arm_vars[arm], nu_com=cohort.N - 1)
        absolute[key] = EstimateWithVar(pa.qbar, pa.total_var, "natural")
        arm_nu[key] = pa.nu
    return (EstimateWithVar(pooled.qbar, pooled.total_var, sc.name), absolute, pooled,
            {"Q": Q, "U": U, "arm_nu": arm_nu})
