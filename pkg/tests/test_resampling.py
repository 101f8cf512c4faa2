import numpy as np
import pytest

from popadj import BootstrapPlan, IpdTable, NumericalError, ValidationError, bootstrap_variance
from popadj.resampling import bootstrap_replicates, substream


def normal_ipd(rng, n=1000):
    return IpdTable({"x": rng.normal(size=n)}, np.where(np.arange(n) % 2, "A", "C"), rng.normal(size=n))


def test_constant_statistic_has_zero_variance(rng):
    assert bootstrap_variance(lambda d: 3.0, normal_ipd(rng, 50), BootstrapPlan(n_boot=20, seed=1)) == 0.0


def test_sample_mean_variance(rng):
    ipd = normal_ipd(rng)
    v = bootstrap_variance(lambda d: d.outcome.mean(), ipd, BootstrapPlan(n_boot=2000, seed=2))
    assert v == pytest.approx(ipd.outcome.var() / ipd.n, rel=0.2)
    assert v == pytest.approx(1 / 1000, rel=0.2)


def test_workers_do_not_change_results(rng):
    ipd = normal_ipd(rng, 200)
    stat = lambda d: [d.outcome.mean(), np.median(d.covariates["x"])]
    a = bootstrap_replicates(stat, ipd, BootstrapPlan(n_boot=100, seed=3, n_jobs=1))
    b = bootstrap_replicates(stat, ipd, BootstrapPlan(n_boot=100, seed=3, n_jobs=8))
    np.testing.assert_array_equal(a, b)


def test_failures_are_redrawn_then_counted(rng):
    ipd = normal_ipd(rng, 40)
    calls = {"n": 0}

    def flaky(d):
        calls["n"] += 1
        if calls["n"] % 3 == 0:
            raise NumericalError("boom")
        return d.outcome.mean()

    assert bootstrap_replicates(flaky, ipd, BootstrapPlan(n_boot=30, seed=4)).shape == (30, 1)

    def broken(d):
        raise NumericalError("always")

    with pytest.raises(NumericalError, match="failed"):
        bootstrap_replicates(broken, ipd, BootstrapPlan(n_boot=10, seed=4))


def test_plan_checks(rng):
    with pytest.raises(ValidationError):
        bootstrap_replicates(lambda d: 1.0, normal_ipd(rng, 10), BootstrapPlan(n_boot=1))


def test_substreams_are_pure_functions_of_key():
    a = substream(7, "boot", 3, 0).random(5)
    assert np.array_equal(a, substream(7, "boot", 3, 0).random(5))
    assert not np.array_equal(a, substream(7, "boot", 4, 0).random(5))
