"""Strategy estimators with a scikit-learn style parameter API.

Each estimator's ``fit(ipd, ald, comparator=..., scale=...)`` estimates the
IPD-side contrast ``Delta_AC`` in the ALD population and sets

``contrast_``
    :class:`~popadj.scales.EstimateWithVar` on the requested scale.
``absolute_``
    natural-scale marginal means under comparator and anchor.
``dof_``
    degrees of freedom keyed by ``"contrast"``, ``"comparator"``,
    ``"reference"`` (infinite unless pooled by Rubin's rules).
``extras_``
    JSON-friendly diagnostics.
"""

from __future__ import annotations

import math

from sklearn.base import BaseEstimator

from .cohort import SyntheticCohort, simulate_cohort
from .data import AldTable, IpdTable, ModelSpec
from .errors import ValidationError
from .gcomp import gcomp_bayes_contrast, gcomp_ml_contrast, make_cohort, mim_contrast, posterior_for
from .glm import delta_method_var
from .maic import maic_contrast, weights_for
from .resampling import BootstrapPlan, bootstrap_replicates, substream
from .scales import EstimateWithVar, default_scale, validate_scale
from .stc import stc_contrast

_INF_DOF = {"contrast": math.inf, "comparator": math.inf, "reference": math.inf}
_TRACE_POINTS = 1000


class _Strategy(BaseEstimator):
    method_name = ""
    var_methods: tuple[str, ...] = ("sample",)
    default_var_method = "sample"

    def _setup(self, ipd, ald, scale, var_method):
        if self.spec is None:
            raise ValidationError(f"{type(self).__name__} needs a ModelSpec (spec=...)")
        ipd.validate_for(self.spec)
        sc = validate_scale(scale or default_scale(self.spec.family, self.spec.link), self.spec.family)
        vm = var_method or self.default_var_method
        if vm not in self.var_methods:
            raise ValidationError(f"var_method {vm!r} not available for {self.method_name}; "
                                  f"choose from {list(self.var_methods)}")
        return sc, vm

    def _cohort(self, ipd, ald, rng) -> SyntheticCohort:
        return make_cohort(ipd, ald, self.spec, N=self.N, rho=self.rho, marginal_distns=self.marginal_distns,
                           marginal_params=self.marginal_params, rng=rng)

    def _cohort_extras(self, cohort: SyntheticCohort) -> dict:
        return {"N": cohort.N, "rho": cohort.rho.to_list(), "marginals": cohort.marginals.to_dict()}


class MAIC(_Strategy):
    """Matching-adjusted indirect comparison.

    ``var_method="sample"`` bootstraps the whole pipeline (weights and
    weighted fit); ``"sandwich"`` uses the robust covariance of the weighted
    fit with the weights treated as fixed.
    """

    method_name = "MAIC"
    var_methods = ("sample", "sandwich")

    def __init__(self, spec: ModelSpec | None = None, n_boot: int = 1000):
        self.spec = spec
        self.n_boot = n_boot

    def fit(self, ipd: IpdTable, ald: AldTable, comparator: str, scale=None, var_method=None,
            seed=None, n_jobs: int = 1):
        sc, vm = self._setup(ipd, ald, scale, var_method)
        sol = weights_for(ipd, ald, self.spec)
        est, m1, m0, fit = maic_contrast(ipd, self.spec, sol.weights, comparator, sc)
        if vm == "sandwich":
            V = fit.sandwich_cov
            var = float(V[1, 1])
            v1 = delta_method_var(lambda t: sc.invert(t[0] + t[1]), fit, V)
            v0 = delta_method_var(lambda t: sc.invert(t[0]), fit, V)
        else:
            def stat(boot):
                w = weights_for(boot, ald, self.spec, warn=False).weights
                return maic_contrast(boot, self.spec, w, comparator, sc)[:3]

            plan = BootstrapPlan(n_boot=self.n_boot, seed=seed, n_jobs=n_jobs)
            var, v1, v0 = bootstrap_replicates(stat, ipd, plan).var(axis=0, ddof=1)
        self.model_ = fit
        self.weights_ = sol
        self.contrast_ = EstimateWithVar(est, float(var), sc.name)
        self.absolute_ = {"comparator": EstimateWithVar(m1, float(v1), "natural"),
                          "reference": EstimateWithVar(m0, float(v0), "natural")}
        self.dof_ = dict(_INF_DOF)
        self.extras_ = {"weights": sol.weights.tolist(), "ess": sol.ess, "beta": sol.beta.tolist(),
                        "n_iterations": sol.n_iterations, "fit": fit.summary()}
        if vm == "sample":
            self.extras_["n_boot"] = self.n_boot
        return self


class STC(_Strategy):
    """Simulated treatment comparison (centered outcome regression)."""

    method_name = "STC"
    var_methods = ("sample", "sandwich")

    def __init__(self, spec: ModelSpec | None = None):
        self.spec = spec

    def fit(self, ipd, ald, comparator, scale=None, var_method=None, seed=None, n_jobs=1):
        sc, vm = self._setup(ipd, ald, scale, var_method)
        contrast, absolute, fit = stc_contrast(ipd, ald, self.spec, comparator, sc,
                                               cov="sandwich" if vm == "sandwich" else "model")
        self.model_ = fit
        self.contrast_ = contrast
        self.absolute_ = absolute
        self.dof_ = dict(_INF_DOF)
        self.extras_ = {"fit": fit.summary()}
        return self


class GCompML(_Strategy):
    """Maximum-likelihood G-computation over a synthetic target cohort."""

    method_name = "GCOMP_ML"
    var_methods = ("sample", "sandwich")

    def __init__(self, spec: ModelSpec | None = None, N: int = 1000, n_boot: int = 1000, rho=None,
                 marginal_distns=None, marginal_params=None):
        self.spec = spec
        self.N = N
        self.n_boot = n_boot
        self.rho = rho
        self.marginal_distns = marginal_distns
        self.marginal_params = marginal_params

    def fit(self, ipd, ald, comparator, scale=None, var_method=None, seed=None, n_jobs=1):
        sc, vm = self._setup(ipd, ald, scale, var_method)
        cohort = self._cohort(ipd, ald, substream(seed, "cohort"))
        plan = BootstrapPlan(n_boot=self.n_boot, seed=seed, n_jobs=n_jobs)
        contrast, absolute, fit = gcomp_ml_contrast(ipd, ald, self.spec, comparator, sc, cohort, vm, plan)
        self.model_ = fit
        self.cohort_ = cohort
        self.contrast_ = contrast
        self.absolute_ = absolute
        self.dof_ = dict(_INF_DOF)
        self.extras_ = {"fit": fit.summary(), **self._cohort_extras(cohort)}
        if vm == "sample":
            self.extras_["n_boot"] = self.n_boot
        return self


class _BayesMixin:
    def _sampler_args(self):
        return {"prior_scale": self.prior_scale, "prior_intercept_scale": self.prior_intercept_scale,
                "n_draws": self.n_draws, "n_burnin": self.n_burnin, "target_accept": self.target_accept}

    @staticmethod
    def _posterior_extras(post) -> dict:
        step = max(1, post.draws.shape[0] // _TRACE_POINTS)
        traces = {name: post.draws[::step, j].tolist() for j, name in enumerate(post.names)}
        if post.sigma is not None:
            traces["sigma"] = post.sigma[::step].tolist()
        return {"acceptance_rate": post.acceptance_rate, "rhat": post.rhat.tolist(),
                "posterior_ess": post.ess.tolist(), "posterior_mean": dict(zip(post.names, post.mean.tolist())), "traces": traces,
                "trace_thin": step, "sampler": post.settings}


class GCompBayes(_BayesMixin, _Strategy):
    """Bayesian G-computation via adaptive random-walk Metropolis."""

    method_name = "GCOMP_BAYES"

    def __init__(self, spec: ModelSpec | None = None, N: int = 1000, rho=None, marginal_distns=None,
                 marginal_params=None, prior_scale: float = 2.5, prior_intercept_scale: float = 10.0,
                 n_draws: int = 4000, n_burnin: int = 1000, target_accept: float = 0.3, ci: float = 0.95):
        self.spec = spec
        self.N = N
        self.rho = rho
        self.marginal_distns = marginal_distns
        self.marginal_params = marginal_params
        self.prior_scale = prior_scale
        self.prior_intercept_scale = prior_intercept_scale
        self.n_draws = n_draws
        self.n_burnin = n_burnin
        self.target_accept = target_accept
        self.ci = ci

    def fit(self, ipd, ald, comparator, scale=None, var_method=None, seed=None, n_jobs=1):
        sc, _ = self._setup(ipd, ald, scale, var_method)
        cohort = self._cohort(ipd, ald, substream(seed, "cohort"))
        contrast, absolute, post, summary = gcomp_bayes_contrast(
            ipd, ald, self.spec, comparator, sc, cohort, substream(seed, "mcmc"), ci=self.ci,
            **self._sampler_args())
        self.posterior_ = post
        self.cohort_ = cohort
        self.contrast_ = contrast
        self.absolute_ = absolute
        self.dof_ = dict(_INF_DOF)
        self.extras_ = {**self._posterior_extras(post), **summary, **self._cohort_extras(cohort)}
        return self


class MIM(_BayesMixin, _Strategy):
    """Multiple imputation marginalization pooled by Rubin's rules.

    ``var_method`` ``"rubin"`` (default) reports t intervals with the
    Barnard-Rubin degrees of freedom; ``"sample"`` keeps the Rubin variance
    with normal intervals.
    """

    method_name = "MIM"
    var_methods = ("rubin", "sample")
    default_var_method = "rubin"

    def __init__(self, spec: ModelSpec | None = None, N: int = 1000, M: int = 20, rho=None,
                 marginal_distns=None, marginal_params=None, prior_scale: float = 2.5,
                 prior_intercept_scale: float = 10.0, n_draws: int = 4000, n_burnin: int = 1000,
                 target_accept: float = 0.3):
        self.spec = spec
        self.N = N
        self.M = M
        self.rho = rho
        self.marginal_distns = marginal_distns
        self.marginal_params = marginal_params
        self.prior_scale = prior_scale
        self.prior_intercept_scale = prior_intercept_scale
        self.n_draws = n_draws
        self.n_burnin = n_burnin
        self.target_accept = target_accept

    def fit(self, ipd, ald, comparator, scale=None, var_method=None, seed=None, n_jobs=1):
        sc, vm = self._setup(ipd, ald, scale, var_method)
        # validates the cohort settings once up front and records rho/marginals
        template = self._cohort(ipd, ald, substream(seed, "cohort"))
        post = posterior_for(ipd, self.spec, comparator, substream(seed, "mcmc"), **self._sampler_args())

        def factory(rng):
            return simulate_cohort(template.rho, template.marginals, self.N, rng)

        contrast, absolute, pooled, per = mim_contrast(ipd, ald, self.spec, comparator, sc, post, factory,
                                                       n_syntheses=self.M, seed=seed)
        self.posterior_ = post
        self.pooled_ = pooled
        self.contrast_ = contrast
        self.absolute_ = absolute
        if vm == "rubin":
            self.dof_ = {"contrast": pooled.nu, **per["arm_nu"]}
        else:
            self.dof_ = dict(_INF_DOF)
        post_extras = self._posterior_extras(post)
        post_extras.pop("traces")
        self.extras_ = {"n_imp": pooled.m, "nu": pooled.nu, "qbar": pooled.qbar, "ubar": pooled.ubar,
                        "b": pooled.b, "total_var": pooled.total_var,
                        "b_over_ubar": pooled.b / pooled.ubar if pooled.ubar > 0 else math.inf,
                        "Q": per["Q"], "U": per["U"], **post_extras, **self._cohort_extras(template)}
        return self


STRATEGIES = {"maic": MAIC, "stc": STC, "gcomp_ml": GCompML, "gcomp_bayes": GCompBayes, "mim": MIM}


def make_strategy(name: str, spec: ModelSpec, **options) -> _Strategy:
    """Instantiate a strategy by name, rejecting unknown options."""
    key = str(name).lower()
    if key not in STRATEGIES:
        raise ValidationError(f"unknown strategy {name!r}; expected one of {sorted(STRATEGIES)}")
    cls = STRATEGIES[key]
    allowed = set(cls._get_param_names()) - {"spec"}
    bad = set(options) - allowed
    if bad:
        raise ValidationError(f"unknown option(s) {sorted(bad)} for {key}; allowed: {sorted(allowed)}")
    return cls(spec=spec, **options)
