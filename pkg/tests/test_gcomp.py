import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from popadj import ModelSpec, ValidationError, fit_glm, rubin_pool, sample_posterior
from popadj.cohort import CorrelationMatrix, Marginal, MarginalSpec, SyntheticCohort, simulate_cohort
from popadj.gcomp import (Standardizer, effective_draws, gcomp_bayes_contrast, gcomp_ml_contrast, make_cohort,
                          mim_contrast, posterior_for, split_rhat)
from popadj.glm import build_design, fit_spec
from popadj.resampling import BootstrapPlan

EM_SPEC = ModelSpec(prognostic_factors=("PF1", "EM1"), effect_modifiers=("EM1",), family="gaussian")
BIN_SPEC = ModelSpec(prognostic_factors=("PF1", "EM1"), effect_modifiers=("EM1",))


def cohort_for(pair, spec, N=1000, seed=0):
    return make_cohort(pair.ipd, pair.ald, spec, N=N, rng=np.random.default_rng(seed))


def test_identity_without_em_equals_coefficient(gaussian_pair):
    spec = ModelSpec(prognostic_factors=("PF1", "EM1"), family="gaussian")
    cohort = cohort_for(gaussian_pair, spec)
    est, _, fit = gcomp_ml_contrast(gaussian_pair.ipd, gaussian_pair.ald, spec, "A", "mean_difference", cohort,
                                    "sandwich")
    assert est.estimate == pytest.approx(fit.treatment_effect, abs=1e-10)


def test_identity_with_em_closed_form(gaussian_pair):
    cohort = cohort_for(gaussian_pair, EM_SPEC)
    est, absolute, fit = gcomp_ml_contrast(gaussian_pair.ipd, gaussian_pair.ald, EM_SPEC, "A", "mean_difference",
                                           cohort, "sandwich")
    alpha = fit.coefficients[list(fit.names).index("trt:EM1")]
    expected = fit.treatment_effect + alpha * cohort.columns()["EM1"].mean()
    assert est.estimate == pytest.approx(expected, abs=1e-10)
    assert absolute["comparator"].estimate - absolute["reference"].estimate == pytest.approx(expected, abs=1e-10)


def test_marginal_means_lie_within_row_predictions(binary_pair):
    cohort = cohort_for(binary_pair, BIN_SPEC)
    fit, _ = fit_spec(BIN_SPEC, binary_pair.ipd, "A")
    std = Standardizer(BIN_SPEC, cohort)
    m1, m0 = std.means(fit.coefficients)
    for X, m in ((std.X1, m1), (std.X0, m0)):
        rows = special.expit(X @ fit.coefficients)
        assert rows.min() <= m <= rows.max()


def test_bootstrap_deterministic_across_workers(binary_pair):
    cohort = cohort_for(binary_pair, BIN_SPEC)
    out = [gcomp_ml_contrast(binary_pair.ipd, binary_pair.ald, BIN_SPEC, "A", "log_odds", cohort, "sample",
                             BootstrapPlan(n_boot=60, seed=5, n_jobs=j))[0] for j in (1, 4)]
    assert out[0] == out[1]


def test_large_cohorts_are_monte_carlo_stable(binary_pair):
    fit, _ = fit_spec(BIN_SPEC, binary_pair.ipd, "A")
    ests = []
    for seed in (1, 2):
        std = Standardizer(BIN_SPEC, cohort_for(binary_pair, BIN_SPEC, N=10_000, seed=seed))
        m1, m0 = std.means(fit.coefficients)
        ests.append(special.logit(m1) - special.logit(m0))
        mu1, mu0 = special.expit(std.X1 @ fit.coefficients), special.expit(std.X0 @ fit.coefficients)
        infl = mu1 / (m1 * (1 - m1)) - mu0 / (m0 * (1 - m0))
        se = infl.std(ddof=1) / np.sqrt(10_000)
    # standard error of a difference between two independent cohorts
    assert abs(ests[0] - ests[1]) < 3 * np.sqrt(2) * se


def test_posterior_matches_mle_at_large_n(binary_pair):
    from conftest import binary_dgp
    from popadj import simulate_trial_pair
    pair = simulate_trial_pair(binary_dgp(n_ipd=1000), seed=3, with_truth=False)
    X = build_design(BIN_SPEC, pair.ipd, pair.ipd.indicator("A"))
    post = sample_posterior(X, pair.ipd.outcome, "binomial", "logit", np.random.default_rng(1))
    mle = fit_glm(X, pair.ipd.outcome)
    np.testing.assert_allclose(post.mean, mle.coefficients, atol=0.05)
    assert 0.1 < post.acceptance_rate < 0.6
    assert np.all(np.isfinite(post.draws))
    assert np.all(post.rhat < 1.1)


def test_posterior_is_seed_deterministic(binary_pair):
    X = build_design(BIN_SPEC, binary_pair.ipd, binary_pair.ipd.indicator("A"))
    a = sample_posterior(X, binary_pair.ipd.outcome, "binomial", "logit", np.random.default_rng(4), n_draws=300,
                         n_burnin=200)
    b = sample_posterior(X, binary_pair.ipd.outcome, "binomial", "logit", np.random.default_rng(4), n_draws=300,
                         n_burnin=200)
    np.testing.assert_array_equal(a.draws, b.draws)


def test_tight_prior_shrinks(binary_pair):
    X = build_design(BIN_SPEC, binary_pair.ipd, binary_pair.ipd.indicator("A"))
    y = binary_pair.ipd.outcome
    wide = sample_posterior(X, y, "binomial", "logit", np.random.default_rng(2), n_draws=1500)
    tight = sample_posterior(X, y, "binomial", "logit", np.random.default_rng(2), n_draws=1500, prior_scale=0.01,
                             prior_intercept_scale=0.01)
    assert np.all(np.abs(tight.mean) < np.abs(wide.mean))


def test_gaussian_posterior_sigma(gaussian_pair):
    X = build_design(EM_SPEC, gaussian_pair.ipd, gaussian_pair.ipd.indicator("A"))
    post = sample_posterior(X, gaussian_pair.ipd.outcome, "gaussian", "identity", np.random.default_rng(5))
    assert post.sigma.mean() == pytest.approx(1.0, abs=0.1)


def test_sampler_rejects_short_data():
    X = np.ones((2, 3))
    with pytest.raises(ValidationError):
        sample_posterior(X, np.array([0.0, 1.0]), "binomial", "logit", np.random.default_rng(0))


def test_bayes_agrees_with_ml_on_identity(gaussian_pair):
    cohort = cohort_for(gaussian_pair, EM_SPEC)
    ml, _, _ = gcomp_ml_contrast(gaussian_pair.ipd, gaussian_pair.ald, EM_SPEC, "A", "mean_difference", cohort,
                                 "sandwich")
    bayes, _, _, summary = gcomp_bayes_contrast(gaussian_pair.ipd, gaussian_pair.ald, EM_SPEC, "A",
                                                "mean_difference", cohort, np.random.default_rng(7))
    assert abs(bayes.estimate - ml.estimate) < 2 * bayes.se
    lo, hi = summary["credible_interval"]
    assert lo < bayes.estimate < hi


def test_single_row_cohort_gives_conditional_contrast(binary_pair):
    row = {"PF1": 0.3, "EM1": -0.2}
    names = ("PF1", "EM1")
    cohort = SyntheticCohort(np.array([[row["PF1"], row["EM1"]]]), names, CorrelationMatrix(np.eye(2), names),
                             MarginalSpec(names, (Marginal("norm", {"mean": 0, "sd": 1}),) * 2))
    est, _, post, _ = gcomp_bayes_contrast(binary_pair.ipd, binary_pair.ald, BIN_SPEC, "A", "log_odds", cohort,
                                           np.random.default_rng(8), n_draws=800, n_burnin=400)
    x1 = build_design(BIN_SPEC, {k: np.array([v]) for k, v in row.items()}, 1.0).values[0]
    x0 = build_design(BIN_SPEC, {k: np.array([v]) for k, v in row.items()}, 0.0).values[0]
    assert est.estimate == pytest.approx(float(((x1 - x0) @ post.draws.T).mean()), abs=1e-9)


def test_credible_interval_shrinks_with_n():
    from conftest import binary_dgp
    from popadj import simulate_trial_pair
    widths = []
    for n in (100, 1000):
        pair = simulate_trial_pair(binary_dgp(n_ipd=n), seed=9, with_truth=False)
        cohort = cohort_for(pair, BIN_SPEC)
        _, _, _, s = gcomp_bayes_contrast(pair.ipd, pair.ald, BIN_SPEC, "A", "log_odds", cohort,
                                          np.random.default_rng(1), n_draws=2000)
        widths.append(s["credible_interval"][1] - s["credible_interval"][0])
    assert widths[1] < widths[0]


def test_rubin_worked_example():
    pooled = rubin_pool([1.0, 3.0], [0.5, 0.5])
    assert (pooled.qbar, pooled.b, pooled.total_var) == (2.0, 2.0, 3.5)
    same = rubin_pool([1.5] * 4, [0.2, 0.3, 0.4, 0.5])
    assert same.b == 0 and same.total_var == pytest.approx(same.ubar)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(1e-3, 3)), min_size=2, max_size=30),
       st.one_of(st.none(), st.integers(2, 5000)))
def test_rubin_identities(pairs, nu_com):
    Q, U = map(np.array, zip(*pairs))
    p = rubin_pool(Q, U, nu_com=nu_com)
    M = len(Q)
    assert p.total_var == pytest.approx(p.ubar + (1 + 1 / M) * p.b, rel=1e-12)
    assert p.total_var >= p.ubar
    assert p.nu > 0
    if nu_com is not None:
        assert p.nu <= nu_com + 1e-9


def test_rubin_needs_two():
    with pytest.raises(ValidationError):
        rubin_pool([1.0], [1.0])


def test_mim_agrees_with_ml_on_identity(gaussian_pair):
    ipd, ald = gaussian_pair.ipd, gaussian_pair.ald
    template = cohort_for(gaussian_pair, EM_SPEC, N=2000)
    ml, _, _ = gcomp_ml_contrast(ipd, ald, EM_SPEC, "A", "mean_difference", template, "sandwich")
    post = posterior_for(ipd, EM_SPEC, "A", np.random.default_rng(3))
    factory = lambda r: simulate_cohort(template.rho, template.marginals, 2000, r)
    est, _, pooled, per = mim_contrast(ipd, ald, EM_SPEC, "A", "mean_difference", post, factory, n_syntheses=30,
                                       seed=4)
    assert abs(est.estimate - ml.estimate) < 2 * est.se
    assert pooled.total_var == pytest.approx(pooled.ubar + (1 + 1 / 30) * pooled.b)
    assert len(per["Q"]) == 30


def test_mim_rejects_single_synthesis(binary_pair):
    post = posterior_for(binary_pair.ipd, BIN_SPEC, "A", np.random.default_rng(0), n_draws=200, n_burnin=200)
    with pytest.raises(ValidationError):
        mim_contrast(binary_pair.ipd, binary_pair.ald, BIN_SPEC, "A", "log_odds", post, None, n_syntheses=1)


def test_chain_diagnostics_on_iid_draws(rng):
    x = rng.normal(size=(4000, 2))
    assert np.all(np.abs(split_rhat(x) - 1) < 0.01)
    assert np.all(effective_draws(x) > 2500)
    ar = np.empty(4000)
    ar[0] = 0
    for t in range(1, 4000):
        ar[t] = 0.9 * ar[t - 1] + rng.normal()
    # AR(1) with phi = 0.9: integrated autocorrelation time (1 + phi) / (1 - phi) = 19
    assert 120 < effective_draws(ar[:, None])[0] < 320
