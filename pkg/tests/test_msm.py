import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from msmissing import dgp
from msmissing.data import PanelDataset
from msmissing.errors import SingularDesign
from msmissing.msm import (
    balance_diagnostics,
    fit_msm,
    occasion_factor,
    risk_set,
    treatment_weights,
)


def _latent(n, seed=1, **coef):
    c = dgp.DGPCoefficients().replace(**coef)
    return dgp.generate_full(dgp.ScenarioConfig("MCAR", n=n, seed=seed, dgp=c))


def test_weights_near_one_without_confounding():
    rng = np.random.default_rng(0)
    n = 20_000
    start = rng.integers(0, 4, n)
    A = (np.arange(3)[None, :] >= start[:, None]).astype(float)
    d = PanelDataset.from_arrays(
        V=np.zeros(n), L1=rng.integers(0, 2, (n, 3)), L2=rng.normal(size=(n, 3)), A=A, Y=rng.normal(size=n)
    )
    assert abs(treatment_weights(d).mean - 1) < 0.02


def test_occasion_factor_ratio():
    assert occasion_factor(np.array([1.0]), 0.5, np.array([0.25]))[0] == pytest.approx(2.0)
    assert occasion_factor(np.array([0.0]), 0.5, np.array([0.75]))[0] == pytest.approx(2.0)


def test_weights_constant_after_initiation():
    d = _latent(3000)
    w = treatment_weights(d).cumulative
    t0 = d.A[:, 0] == 1
    assert np.array_equal(w[t0, 1], w[t0, 0]) and np.array_equal(w[t0, 2], w[t0, 0])
    t1 = (d.A[:, 0] == 0) & (d.A[:, 1] == 1)
    assert np.array_equal(w[t1, 2], w[t1, 1])
    assert np.all(w > 0) and np.all(np.isfinite(w))


def test_risk_set_restriction():
    d = _latent(2000)
    base = treatment_weights(d).cumulative
    # changing confounders of already-treated subjects at k cannot change any k-model
    treated_before = d.A[:, 0] == 1
    L2 = np.array(d.L2)
    L2[treated_before, 1:] += 50.0
    assert np.allclose(treatment_weights(d.replace(L2=L2)).cumulative, base, atol=1e-12)
    assert not risk_set(d.A, 1)[treated_before].any()


def test_mean_weight_close_to_one():
    assert abs(treatment_weights(_latent(10_000)).mean - 1) < 0.05


def test_unit_weights_equal_unadjusted_bit_identical():
    d = _latent(1000)
    a = fit_msm(d, np.ones(d.n))
    b = fit_msm(d, comparator="unadjusted")
    assert np.array_equal(a.theta, b.theta)


@given(st.floats(0.01, 100.0))
def test_fit_msm_weight_scale_invariance(c):
    d = _latent(500, seed=4)
    w = treatment_weights(d).final
    assert np.allclose(fit_msm(d, w).theta, fit_msm(d, c * w).theta, atol=1e-10, rtol=0)


def test_ci_contains_estimate_and_se_positive():
    est = fit_msm(_latent(1000), None)
    assert np.all(est.se > 0)
    assert np.all((est.ci_lower <= est.theta) & (est.theta <= est.ci_upper))


def test_constant_treatment_is_singular():
    d = _latent(200)
    with pytest.raises(SingularDesign):
        fit_msm(d.replace(A=np.zeros((d.n, 3))))


def test_full_data_msm_unbiased_comparators_biased():
    cfg = dgp.ScenarioConfig("MCAR", n=100_000, seed=99)
    truth = dgp.true_effects(cfg, n_oracle=10**6).theta
    d = dgp.generate_full(cfg)
    msm = fit_msm(d, treatment_weights(d))
    assert np.all(np.abs(msm.theta - truth) <= 0.02)
    for comp in ("unadjusted", "covariate-adjusted"):
        assert np.max(np.abs(fit_msm(d, comparator=comp).theta - truth)) > 0.05


def test_null_effects_estimated_near_zero():
    d = _latent(50_000, seed=3, theta=(0.0, 0.0, 0.0))
    truth = dgp.analytic_effects(dgp.DGPCoefficients().replace(theta=(0.0, 0.0, 0.0)))
    est = fit_msm(d, treatment_weights(d))
    assert np.all(np.abs(est.theta - truth) < 4 * est.se)


def test_balance_diagnostics():
    d = _latent(50_000, seed=8)
    assert np.nanmax(np.abs(balance_diagnostics(d, treatment_weights(d)))) < 0.05
    assert np.nanmax(np.abs(balance_diagnostics(d))) > 0.1
    null = _latent(50_000, seed=8, trt_L1=0.0, trt_L2=0.0)
    assert np.nanmax(np.abs(balance_diagnostics(null))) < 0.05
