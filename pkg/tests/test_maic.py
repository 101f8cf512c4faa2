import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from popadj import MaicWeighter, ModelSpec, NoOverlapError, ValidationError, effective_sample_size, estimate_weights
from popadj.maic import maic_contrast, matched_covariate_set


def weighted_means(X, w):
    return (w[:, None] * X).sum(axis=0) / w.sum()


def test_closed_form_single_binary():
    sol = estimate_weights(np.array([[0.0], [0.0], [1.0], [1.0]]), [0.75])
    assert sol.beta[0] == pytest.approx(math.log(3), abs=1e-8)
    assert weighted_means(np.array([[0.0], [0.0], [1.0], [1.0]]), sol.weights)[0] == pytest.approx(0.75, abs=1e-8)


def test_ess_examples():
    assert effective_sample_size(np.ones(5)) == 5
    assert effective_sample_size([1, 1e-12, 1e-12, 1e-12]) == pytest.approx(1, abs=1e-9)
    w = np.array([3**-0.75, 3**-0.75, 3**0.25, 3**0.25])
    # (2*3^-0.75 + 2*3^0.25)^2 / (2*3^-1.5 + 2*3^0.5) = 64/20 exactly
    assert effective_sample_size(w) == pytest.approx(3.2, abs=1e-12)


def test_prebalanced_gives_zero_beta(rng):
    X = rng.normal(size=(100, 3))
    sol = estimate_weights(X, X.mean(axis=0))
    np.testing.assert_allclose(sol.beta, 0, atol=1e-10)
    np.testing.assert_allclose(sol.weights, 1, atol=1e-10)


def test_hull_violation():
    with pytest.raises(NoOverlapError, match="no covariate overlap"):
        estimate_weights(np.array([[0.0], [1.0], [0.0], [1.0]]), [1.2])
    # inside each marginal range but outside the joint hull
    X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.0]])
    with pytest.raises(NoOverlapError):
        estimate_weights(X, [0.9, 0.1])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 4))
def test_moment_matching_random(seed, q):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(200, q))
    target = rng.uniform(-0.4, 0.4, q)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sol = estimate_weights(X, target)
    np.testing.assert_allclose(weighted_means(X, sol.weights), target, atol=1e-6)
    assert 0 < sol.ess <= 200 + 1e-9


def test_objective_minimum_against_perturbations(rng):
    X = rng.normal(size=(150, 2))
    target = np.array([0.3, -0.2])
    sol = estimate_weights(X, target)
    f = lambda b: np.exp((X - target) @ b).sum()
    best = f(sol.beta)
    assert best <= f(np.zeros(2))
    pert = sol.beta + rng.normal(scale=0.3, size=(1000, 2))
    assert all(best <= f(b) + 1e-12 for b in pert)


def test_low_ess_warns():
    X = np.r_[np.zeros(95), np.ones(5)][:, None]
    with pytest.warns(RuntimeWarning, match="effective sample size"):
        estimate_weights(X, [0.8])


def test_matched_set():
    assert matched_covariate_set(ModelSpec(prognostic_factors=("a", "b"), effect_modifiers=("b", "c"))) == \
        ["a", "b", "c"]
    assert matched_covariate_set(ModelSpec(effect_modifiers=("e",))) == ["e"]
    with pytest.raises(ValidationError, match="nothing to match"):
        matched_covariate_set(ModelSpec())


def test_transformer_api(rng):
    X = rng.normal(size=(80, 2))
    est = MaicWeighter(tol=1e-9)
    assert clone(est).get_params() == {"tol": 1e-9, "max_iter": 200}
    est.fit(X, target_means=[0.1, 0.2])
    np.testing.assert_allclose(est.transform(X)[:, 0], est.weights_, rtol=1e-12)


def test_equal_weights_saturated_log_odds(binary_pair):
    ipd = binary_pair.ipd
    spec = ModelSpec(prognostic_factors=("PF1",))
    est, m1, m0, _ = maic_contrast(ipd, spec, np.ones(ipd.n), "A", "log_odds")
    p1 = ipd.outcome[ipd.treatment == "A"].mean()
    p0 = ipd.outcome[ipd.treatment == "C"].mean()
    assert est == pytest.approx(math.log(p1 / (1 - p1)) - math.log(p0 / (1 - p0)), abs=1e-9)
    assert (m1, m0) == pytest.approx((p1, p0), abs=1e-9)


def test_weight_rescaling_invariance(binary_pair, rng):
    ipd = binary_pair.ipd
    spec = ModelSpec(prognostic_factors=("PF1",))
    w = rng.uniform(0.2, 2.0, ipd.n)
    a = maic_contrast(ipd, spec, w, "A", "log_odds")[0]
    b = maic_contrast(ipd, spec, 37.5 * w, "A", "log_odds")[0]
    assert a == pytest.approx(b, abs=1e-8)


def test_degenerate_arm(binary_pair):
    ipd = binary_pair.ipd
    w = np.where(ipd.treatment == "A", 1.0, 1e-12)
    with pytest.raises(ValidationError, match="degenerate"):
        maic_contrast(ipd, ModelSpec(prognostic_factors=("PF1",)), w, "A", "log_odds")


def test_collinear_but_consistent_targets():
    x = np.array([0.0, 1.0, 2.0, 3.0, 1.5])
    X = np.column_stack([x, 2 * x])
    sol = estimate_weights(X, [1.8, 3.6])
    np.testing.assert_allclose(weighted_means(X, sol.weights), [1.8, 3.6], atol=1e-6)
