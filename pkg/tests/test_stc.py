import numpy as np
import pytest

from popadj import AldTable, IpdTable, ModelSpec, ValidationError, fit_glm
from popadj.glm import build_design, fit_spec, get_link
from popadj.stc import stc_absolute, stc_contrast



def test_no_em_identity_equals_uncentered(gaussian_pair):
    spec = ModelSpec(prognostic_factors=("PF1", "EM1"), family="gaussian")
    contrast, _, _ = stc_contrast(gaussian_pair.ipd, gaussian_pair.ald, spec, "A")
    plain, _ = fit_spec(spec, gaussian_pair.ipd, "A")
    assert contrast.estimate == pytest.approx(plain.treatment_effect, abs=1e-10)


def test_self_standardization(gaussian_pair):
    ipd = gaussian_pair.ipd
    spec = ModelSpec(prognostic_factors=("PF1", "EM1"), effect_modifiers=("EM1",), family="gaussian")
    own = AldTable.from_records([(c, "mean", float(ipd.covariates[c].mean()), None) for c in spec.covariates])
    contrast, _, _ = stc_contrast(ipd, own, spec, "A")
    fit, _ = fit_spec(spec, ipd, "A")
    i = list(fit.names).index("trt:EM1")
    expected = fit.treatment_effect + fit.coefficients[i] * ipd.covariates["EM1"].mean()
    assert contrast.estimate == pytest.approx(expected, abs=1e-8)


def test_centering_invariance(binary_pair):
    spec = ModelSpec(prognostic_factors=("PF1", "EM1"), effect_modifiers=("EM1",))
    contrast, _, _ = stc_contrast(binary_pair.ipd, binary_pair.ald, spec, "A")
    fit, _ = fit_spec(spec, binary_pair.ipd, "A")
    xbar = {c: binary_pair.ald.covariate_summary(c)[0] for c in spec.covariates}
    cols = {c: np.array([xbar[c]]) for c in spec.covariates}
    eta1 = build_design(spec, cols, 1.0).values @ fit.coefficients
    eta0 = build_design(spec, cols, 0.0).values @ fit.coefficients
    assert contrast.estimate == pytest.approx(float((eta1 - eta0)[0]), abs=1e-8)


def test_absolute_predictions(binary_pair):
    spec = ModelSpec(prognostic_factors=("PF1", "EM1"), effect_modifiers=("EM1",))
    contrast, absolute, fit = stc_contrast(binary_pair.ipd, binary_pair.ald, spec, "A")
    for arm in (0, 1):
        assert 0 < stc_absolute(fit, arm) < 1
    lg = get_link("logit").fn
    assert lg(absolute["comparator"].estimate) - lg(absolute["reference"].estimate) == \
        pytest.approx(contrast.estimate, abs=1e-10)


def test_affine_rescaling_invariance(binary_pair):
    ipd, ald = binary_pair.ipd, binary_pair.ald
    spec = ModelSpec(prognostic_factors=("PF1", "EM1"), effect_modifiers=("EM1",))
    base = stc_contrast(ipd, ald, spec, "A")[0].estimate
    cov = dict(ipd.covariates)
    cov["PF1"] = 3.0 * cov["PF1"] + 5.0
    ipd2 = IpdTable(cov, ipd.treatment, ipd.outcome)
    recs = [r if r.variable != "PF1" else type(r)(r.variable, r.statistic,
                                                   r.value * 3.0 + (5.0 if r.statistic == "mean" else 0.0), r.trt)
            for r in ald.records]
    assert stc_contrast(ipd2, AldTable(tuple(recs)), spec, "A")[0].estimate == pytest.approx(base, abs=1e-8)


def test_missing_target_covariate(binary_pair):
    spec = ModelSpec(prognostic_factors=("PF1", "ZZ"))
    cov = dict(binary_pair.ipd.covariates, ZZ=np.zeros(binary_pair.ipd.n) + np.arange(binary_pair.ipd.n) % 2)
    ipd = IpdTable(cov, binary_pair.ipd.treatment, binary_pair.ipd.outcome)
    with pytest.raises(ValidationError, match="ZZ"):
        stc_contrast(ipd, binary_pair.ald, spec, "A")


def test_non_link_scale_uses_delta_method(binary_pair):
    spec = ModelSpec(prognostic_factors=("PF1", "EM1"), effect_modifiers=("EM1",))
    rd, absolute, _ = stc_contrast(binary_pair.ipd, binary_pair.ald, spec, "A", "risk_difference")
    assert rd.estimate == pytest.approx(absolute["comparator"].estimate - absolute["reference"].estimate)
    assert rd.variance > 0
