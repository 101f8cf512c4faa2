import numpy as np
import pytest

from popadj import AldTable, CovariateSpec, TrialDGP, simulate_trial_pair

# B-vs-C aggregate summaries of the binary example dataset.
BINARY_ALD_ROWS = [
    ("EM_cont_1", "mean", 0.651, None), ("EM_cont_1", "sd", 0.391, None),
    ("EM_cont_2", "mean", 0.592, None), ("EM_cont_2", "sd", 0.416, None),
    ("PF_cont_1", "mean", 0.653, None), ("PF_cont_1", "sd", 0.371, None),
    ("PF_cont_2", "mean", 0.583, None), ("PF_cont_2", "sd", 0.437, None),
    ("y", "mean", 40 / 65, "C"), ("y", "sd", 0.490, "C"), ("y", "sum", 40, "C"),
    ("y", "mean", 37 / 135, "B"), ("y", "sd", 0.448, "B"), ("y", "sum", 37, "B"),
    (None, "N", 65, "C"), (None, "N", 135, "B"),
]


@pytest.fixture
def binary_ald():
    return AldTable.from_records(BINARY_ALD_ROWS)


def binary_dgp(**kw):
    base = dict(
        covariates=(CovariateSpec("PF1", 0.2, 1.0, 0.6, 1.0, prognostic=0.5),
                    CovariateSpec("EM1", 0.0, 1.0, 0.5, 1.0, prognostic=0.3, modifier=-0.6)),
        intercept=-0.2, effect_A=-1.0, effect_B=-0.5, n_ipd=400, n_ald=400, oracle_n=100_000,
    )
    base.update(kw)
    return TrialDGP(**base)


def gaussian_dgp(**kw):
    base = dict(
        covariates=(CovariateSpec("PF1", 0.0, 1.0, 0.4, 1.0, prognostic=1.0),
                    CovariateSpec("EM1", 0.0, 1.0, 0.8, 1.0, prognostic=0.5, modifier=0.7)),
        family="gaussian", intercept=1.0, effect_A=2.0, effect_B=1.0, sigma=1.0, n_ipd=400, n_ald=400,
        oracle_n=100_000,
    )
    base.update(kw)
    return TrialDGP(**base)


@pytest.fixture
def binary_pair():
    return simulate_trial_pair(binary_dgp(), seed=11)


@pytest.fixture
def gaussian_pair():
    return simulate_trial_pair(gaussian_dgp(), seed=12)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
