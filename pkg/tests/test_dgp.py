import numpy as np
import pytest
from scipy.special import expit

from msmissing import dgp
from msmissing import rng as rngs
from msmissing.errors import CalibrationFailed, MechanismMismatch

NO_MEDIATION = dict(l1_trans=(-0.2, 1.2, 0.0), l2_trans=(0.7, 0.0, 0.3))


def _cfg(mechanism="MCAR", n=2000, seed=3, **coef):
    return dgp.ScenarioConfig(mechanism, n=n, seed=seed, dgp=dgp.DGPCoefficients().replace(**coef))


def test_calibration_reproduces_frozen_defaults():
    assert dgp.calibrate_defaults() == dgp.DGPCoefficients()


def test_config_validation():
    with pytest.raises(ValueError):
        dgp.ScenarioConfig("MAR_XY")
    with pytest.raises(ValueError):
        dgp.ScenarioConfig("MCAR", n=0)
    with pytest.raises(ValueError):
        dgp.ScenarioConfig("MCAR", target_missing_rate=1.0)
    with pytest.raises(ValueError):
        dgp.DGPCoefficients(out_sd=0.0)
    with pytest.raises(ValueError):
        dgp.DGPCoefficients(persistence=1.5)


@pytest.mark.parametrize("mechanism", dgp.MECHANISMS)
def test_treatment_is_absorbing(mechanism):
    d = dgp.generate_full(_cfg(mechanism))
    assert np.all(np.diff(d.A, axis=1) >= 0)
    assert d.fully_observed()


def test_null_effect_regime_means_equal():
    te = dgp.true_effects(_cfg(theta=(0.0, 0.0, 0.0), **NO_MEDIATION), n_oracle=10**5)
    means = list(te.regime_means.values())
    assert len(te.regime_means) == 4
    assert np.all(np.abs(te.theta) <= np.maximum(4 * te.se, 1e-12))
    assert max(means) - min(means) < 1e-12


def test_initiation_fraction_matches_calibration_target():
    d = dgp.generate_full(_cfg(n=100_000))
    for k in range(3):
        at_risk = np.ones(d.n, bool) if k == 0 else d.A[:, k - 1] == 0
        assert abs(d.A[at_risk, k].mean() - 0.30) <= 0.03


def test_mcar_rate_per_occasion():
    _, m = dgp.simulate_replication(_cfg(n=10_000), 0)
    for k in (1, 2):
        rate = np.mean(~m.obs_L1[:, k] | ~m.obs_L2[:, k])
        assert abs(rate - 0.40) <= 0.02
    assert m.obs_L1[:, 0].all() and m.obs_L2[:, 0].all()


@pytest.mark.parametrize("mechanism", dgp.MECHANISMS)
def test_complete_case_fraction(mechanism):
    _, m = dgp.simulate_replication(_cfg(mechanism, n=20_000), 0)
    cc = np.mean(m.obs_L1.all(axis=1) & m.obs_L2.all(axis=1))
    assert abs(cc - 0.40) <= 0.05


def test_constant_masked_cells_equal_previous_value():
    latent, m = dgp.simulate_replication(_cfg("Constant"), 0)
    for k in (1, 2):
        gone = ~m.obs_L2[:, k]
        assert gone.any()
        assert np.array_equal(latent.L2[gone, k], latent.L2[gone, k - 1])
        gone1 = ~m.obs_L1[:, k]
        assert np.array_equal(latent.L1[gone1, k], latent.L1[gone1, k - 1])


def test_mar_aly_depends_on_outcome():
    latent, m = dgp.simulate_replication(_cfg("MAR_ALY", n=20_000), 0)
    lo, hi = np.quantile(latent.Y, [0.25, 0.75])
    miss = ~m.obs_L2[:, 2]
    assert miss[latent.Y >= hi].mean() - miss[latent.Y <= lo].mean() > 0.10


def test_masking_never_alters_values():
    for mech in dgp.MECHANISMS:
        latent, m = dgp.simulate_replication(_cfg(mech), 1)
        for name in ("L1", "L2"):
            obs = getattr(m, f"obs_{name}")
            assert np.array_equal(getattr(m, name)[obs], getattr(latent, name)[obs])
        assert np.array_equal(m.A, latent.A) and np.array_equal(m.Y, latent.Y)


def test_latent_data_shared_across_non_generative_mechanisms():
    base = dgp.generate_full(_cfg("MCAR"), 2)
    for mech in ("MAR_AL", "MAR_ALY", "MAR_ALV"):
        assert dgp.generate_full(_cfg(mech), 2).same_values(base)


def test_reproducible_and_independent_replications():
    a = dgp.simulate_replication(_cfg(), 0)
    b = dgp.simulate_replication(_cfg(), 0)
    c = dgp.simulate_replication(_cfg(), 1)
    assert a[0].same_values(b[0]) and a[1].same_values(b[1])
    assert abs(np.corrcoef(a[0].Y, c[0].Y)[0, 1]) < 0.1


def test_differential_mask_required():
    latent = dgp.generate_full(_cfg("MCAR"))
    with pytest.raises(MechanismMismatch):
        dgp.apply_missingness(latent, _cfg("Differential"))


def test_differential_missing_confounder_does_not_drive_treatment():
    from msmissing.numerics import fit_logistic

    latent, m = dgp.simulate_replication(_cfg("Differential", n=20_000), 0)
    for k in (1, 2):
        at_risk = latent.A[:, k - 1] == 0
        X = np.column_stack([np.ones(latent.n), latent.L1[:, k], latent.L2[:, k]])
        o1, o2 = m.obs_L1[:, k], m.obs_L2[:, k]
        for rows, tested in ((~o1 & o2, (1,)), (o1 & ~o2, (2,)), (~o1 & ~o2, (1, 2))):
            fit = fit_logistic(X[at_risk & rows], latent.A[at_risk & rows, k])
            for var in tested:
                assert abs(fit.coefficients[var]) < 4 * fit.se[var]
        # observed confounders still drive treatment
        rows = at_risk & o1 & o2
        fit = fit_logistic(X[rows], latent.A[rows, k])
        assert np.all(np.abs(fit.coefficients[1:]) > 4 * fit.se[1:])


def test_oracle_zero_effects():
    te = dgp.true_effects(
        _cfg(theta=(0.0, 0.0, 0.0), trt_L1=0.0, trt_L2=0.0, **NO_MEDIATION), n_oracle=10**5
    )
    assert np.allclose(te.theta, 0.0, atol=1e-12)


def test_oracle_equals_structural_without_mediation():
    c = dgp.DGPCoefficients().replace(**NO_MEDIATION)
    te = dgp.true_effects(dgp.ScenarioConfig("MCAR", dgp=c), n_oracle=10**5)
    assert np.all(np.abs(te.theta - np.array(c.theta)) <= np.maximum(4 * te.se, 1e-12))


@pytest.mark.parametrize("mechanism", ["MCAR", "Constant"])
def test_oracle_matches_closed_form_regime_means(mechanism):
    te = dgp.true_effects(_cfg(mechanism), n_oracle=4 * 10**5)
    analytic = dgp.analytic_regime_means(dgp.DGPCoefficients(), mechanism)
    for regime, value in analytic.items():
        # regime means carry the outcome noise, sd roughly 2 at most
        assert abs(te.regime_means[regime] - value) < 4 * 2.5 / np.sqrt(te.n_oracle)
    assert np.all(np.abs(te.theta - dgp.analytic_effects(dgp.DGPCoefficients(), mechanism)) <= np.maximum(4 * te.se, 1e-9))


def test_calibrate_intercept_symmetric_and_accurate():
    u = rngs.stream(1, 0, rngs.CALIBRATION).standard_normal(100_000)
    noise = rngs.stream(1, 1, rngs.CALIBRATION).random(100_000)

    def rate(b):
        return float(np.mean(noise < expit(b + u)))

    b = dgp.calibrate_intercept(rate, 0.5)
    assert abs(b) < 0.02
    b40 = dgp.calibrate_intercept(rate, 0.40)
    assert abs(rate(b40) - 0.40) <= 0.005
    grid = np.linspace(-12, 12, 49)
    assert np.all(np.diff([rate(x) for x in grid]) >= 0)


def test_calibrate_intercept_errors():
    with pytest.raises(ValueError):
        dgp.calibrate_intercept(lambda b: 0.5, 0.995)
    with pytest.raises(CalibrationFailed):
        dgp.calibrate_intercept(lambda b: 0.2, 0.5)
