import math

import numpy as np
import pytest
from scipy import special, stats

from popadj import ComparisonResult, RunConfig, ValidationError, compare, infer_roles
from popadj.scales import ald_contrast

FAST = {"maic": {"n_boot": 50}, "stc": {}, "gcomp_ml": {"n_boot": 50, "N": 500},
        "gcomp_bayes": {"N": 300, "n_draws": 600, "n_burnin": 300},
        "mim": {"N": 300, "M": 5, "n_draws": 600, "n_burnin": 300}}


def run(pair, strategy, **kw):
    return compare(pair.ipd, pair.ald, pair.dgp.model_spec(), strategy, seed=kw.pop("seed", 1),
                   options={**FAST[strategy], **kw.pop("options", {})}, **kw)


@pytest.mark.parametrize("strategy", sorted(FAST))
def test_variance_additivity_and_interval_width(binary_pair, strategy):
    res = run(binary_pair, strategy)
    c = res.contrasts
    assert c["AB"]["variance"] == c["AC"]["variance"] + c["BC"]["variance"]
    assert c["AB"]["estimate"] == c["AC"]["estimate"] - c["BC"]["estimate"]
    z = special.ndtri(0.975)
    bc = c["BC"]
    assert bc["upper"] - bc["estimate"] == pytest.approx(z * math.sqrt(bc["variance"]), abs=1e-12)
    if res.metadata["interval"] == "t":
        half = c["AC"]["upper"] - c["AC"]["estimate"]
        assert half == pytest.approx(stats.t.ppf(0.975, c["AC"]["dof"]) * c["AC"]["se"], rel=1e-12)
    for k in ("A", "B", "C"):
        assert 0 < res.absolute[k]["estimate"] < 1


@pytest.mark.parametrize("scale", ["risk_difference", "log_rr_log", "probit_difference"])
def test_additivity_on_other_scales(binary_pair, scale):
    for strategy in ("maic", "stc", "gcomp_ml"):
        c = run(binary_pair, strategy, scale=scale).contrasts
        assert c["AB"]["variance"] == c["AC"]["variance"] + c["BC"]["variance"]
        assert c["BC"]["estimate"] == ald_contrast(binary_pair.ald, scale, "B", "C").estimate


def test_ci_level_changes_only_bounds(binary_pair):
    a = run(binary_pair, "stc", ci=0.95)
    b = run(binary_pair, "stc", ci=0.8)
    for k in a.contrasts:
        for f in ("estimate", "variance", "se"):
            assert a.contrasts[k][f] == b.contrasts[k][f]
        assert a.contrasts[k]["upper"] > b.contrasts[k]["upper"]


def test_stc_sandwich_vs_sample(binary_pair):
    a = run(binary_pair, "stc", var_method="sample")
    b = run(binary_pair, "stc", var_method="sandwich")
    assert a.contrasts["BC"] == b.contrasts["BC"]
    assert a.contrasts["AC"]["variance"] != b.contrasts["AC"]["variance"]


@pytest.mark.parametrize("strategy,vm", [("maic", "rubin"), ("stc", "rubin"), ("gcomp_bayes", "sandwich"),
                                         ("mim", "sandwich"), ("gcomp_ml", "bogus")])
def test_disallowed_var_methods(binary_pair, strategy, vm):
    with pytest.raises(ValidationError):
        run(binary_pair, strategy, var_method=vm)


def test_invalid_scale_and_ci(binary_pair):
    with pytest.raises(ValidationError, match="mean_difference"):
        run(binary_pair, "stc", scale="mean_difference")
    with pytest.raises(ValidationError, match="CI"):
        run(binary_pair, "stc", ci=1.5)


def test_unknown_option(binary_pair):
    with pytest.raises(ValidationError, match="unknown option"):
        run(binary_pair, "stc", options={"n_boot": 10})


def test_roles_inference(binary_pair):
    roles = infer_roles(binary_pair.ipd, binary_pair.ald)
    assert (roles.ipd_comp, roles.ald_comp, roles.ref_trt) == ("A", "B", "C")
    with pytest.raises(ValidationError):
        infer_roles(binary_pair.ipd, binary_pair.ald, ref_trt="A")


def test_json_round_trip_and_determinism(binary_pair):
    a = run(binary_pair, "gcomp_ml", n_jobs=1)
    b = run(binary_pair, "gcomp_ml", n_jobs=3)
    assert a.to_json() == b.to_json()
    assert ComparisonResult.from_json(a.to_json()) == a


def test_mim_sample_mode_uses_normal_intervals(binary_pair):
    r = run(binary_pair, "mim", var_method="sample")
    assert r.metadata["interval"] == "normal"
    assert "dof" not in r.contrasts["AC"]


def test_scale_coherence_log_odds_to_risk_difference(binary_pair):
    from popadj import EstimateWithVar, absolute_from_contrast
    lo = run(binary_pair, "stc").contrasts["BC"]
    rd = run(binary_pair, "stc", scale="risk_difference").contrasts["BC"]
    p_c = binary_pair.ald.lookup("y", "sum", "C") / binary_pair.ald.lookup(None, "N", "C")
    p_b = absolute_from_contrast(p_c, EstimateWithVar(lo["estimate"], lo["variance"], "log_odds"))
    assert p_b - p_c == pytest.approx(rd["estimate"], abs=1e-10)


def test_run_config_validation(tmp_path):
    with pytest.raises(ValidationError, match="rubin"):
        RunConfig(ipd="x", ald="y", strategy="maic", formula="y ~ x + trt", var_method="rubin")
    with pytest.raises(ValidationError, match="formula"):
        RunConfig(ipd="x", ald="y", strategy="maic")
    cfg = RunConfig.from_mapping({"ipd": "a.csv", "ald": "b.csv", "strategy": "GCOMP_ML", "CI": 0.9,
                                  "formula": "y ~ PF + trt + trt:EM", "N": 200, "n_boot": 20}, base=tmp_path)
    assert cfg.options == {"N": 200, "n_boot": 20} and cfg.ci == 0.9 and cfg.ipd == str(tmp_path / "a.csv")
    assert cfg.spec.effect_modifiers == ("EM",)


def test_gaussian_and_poisson_pipelines(gaussian_pair):
    from conftest import binary_dgp
    from popadj import simulate_trial_pair
    r = run(gaussian_pair, "gcomp_ml")
    assert r.metadata["scale"] == "mean_difference"
    pois = simulate_trial_pair(binary_dgp(family="poisson", intercept=0.5, effect_A=-0.4, effect_B=-0.2), seed=4)
    for s in ("maic", "stc", "gcomp_ml"):
        res = run(pois, s)
        assert res.metadata["scale"] == "log_relative_risk"
        assert np.isfinite(res.contrasts["AB"]["estimate"])
    assert np.isfinite(run(pois, "gcomp_ml", scale="rate_difference").contrasts["AB"]["variance"])
