import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from msmissing.errors import DimensionMismatch, NotConverged, Separation, SingularDesign
from msmissing.numerics import (
    EPS_PROB,
    fit_logistic,
    fit_wls,
    logistic_loglik,
    logistic_score,
    posterior_draw,
    predict_prob,
)


def grid_search_mle(X, y, w=None, half_width=8.0, points=41, tol=1e-10):
    """Brute-force MLE by repeatedly refined grids around the incumbent."""
    p = X.shape[1]
    w = np.ones(len(y)) if w is None else w
    centre = np.zeros(p)

    def ll(B):
        eta = B @ X.T
        return (w * (y * eta - np.logaddexp(0.0, eta))).sum(axis=1)

    step = 2 * half_width / (points - 1)
    offsets = np.linspace(-half_width, half_width, points)
    while step > tol:
        mesh = np.stack(np.meshgrid(*[centre[j] + offsets for j in range(p)], indexing="ij"), -1).reshape(-1, p)
        vals = ll(mesh)
        centre = mesh[int(np.argmax(vals))]
        # shrink so the new grid spans two old grid steps either side
        half_width = 2 * step
        offsets = np.linspace(-half_width, half_width, 21)
        step = 2 * half_width / 20
    return centre


# ------------------------------------------------------------------ WLS


def test_wls_unit_weight_mean():
    fit = fit_wls(np.ones((4, 1)), [1, 2, 3, 4], [1, 1, 1, 1])
    assert fit.coefficients == pytest.approx([2.5], abs=1e-12)


def test_wls_exact_interpolation():
    fit = fit_wls([[1, 0], [1, 1]], [0, 1])
    assert fit.coefficients == pytest.approx([0.0, 1.0], abs=1e-12)


def test_wls_weighted_mean_closed_form():
    fit = fit_wls(np.ones((4, 1)), [0, 0, 0, 4], [1, 1, 1, 3])
    assert fit.coefficients[0] == pytest.approx(12 / 6, abs=1e-12)


def test_wls_unit_weights_equal_ols():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n, p = rng.integers(5, 40), rng.integers(1, 5)
        X = np.column_stack([np.ones(n), rng.normal(size=(n, p))])
        y = rng.normal(size=n)
        ols = np.linalg.lstsq(X, y, rcond=None)[0]
        assert np.max(np.abs(fit_wls(X, y).coefficients - ols)) < 1e-10


def test_wls_robust_covariance_matches_hc0():
    rng = np.random.default_rng(1)
    n = 50
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    y = X @ [1.0, 2.0] + rng.normal(size=n) * (1 + np.abs(X[:, 1]))
    w = rng.uniform(0.5, 2.0, n)
    fit = fit_wls(X, y, w)
    bread = np.linalg.inv(X.T @ (w[:, None] * X))
    r = y - X @ fit.coefficients
    meat = (X * ((w * r) ** 2)[:, None]).T @ X
    assert np.allclose(fit.robust_covariance, bread @ meat @ bread, atol=1e-12)
    assert np.allclose(fit.covariance, fit.covariance.T, atol=1e-10)


def test_wls_singular_and_dimension_errors():
    with pytest.raises(SingularDesign):
        fit_wls([[1, 2], [1, 2], [1, 2]], [1, 2, 3])
    with pytest.raises(DimensionMismatch):
        fit_wls(np.ones((3, 1)), [1, 2])


@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_wls_weight_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(12), rng.normal(size=(12, 2))])
    y = rng.normal(size=12)
    w = rng.uniform(0.1, 3.0, 12)
    a = fit_wls(X, y, w).coefficients
    b = fit_wls(X, y, c * w).coefficients
    assert np.allclose(a, b, atol=1e-10, rtol=0)


# ------------------------------------------------------------- logistic


def test_logistic_symmetric_intercept_zero():
    fit = fit_logistic(np.ones((6, 1)), [0, 1, 0, 1, 0, 1])
    assert fit.coefficients[0] == pytest.approx(0.0, abs=1e-12)


def test_logistic_intercept_is_logit_of_proportion():
    fit = fit_logistic(np.ones((4, 1)), [1, 1, 1, 0])
    assert fit.coefficients[0] == pytest.approx(math.log(3), abs=1e-10)


def test_logistic_eight_points_binary_covariate_matches_grid_search():
    x = np.array([0, 0, 0, 0, 1, 1, 1, 1], dtype=float)
    y = np.array([0, 0, 1, 0, 1, 1, 0, 1], dtype=float)
    X = np.column_stack([np.ones(8), x])
    fit = fit_logistic(X, y)
    # closed form: logit(1/4) and logit(3/4) - logit(1/4)
    assert fit.coefficients == pytest.approx([-math.log(3), 2 * math.log(3)], abs=1e-9)
    assert np.max(np.abs(fit.coefficients - grid_search_mle(X, y))) < 1e-6


def _tiny_problem(rng):
    while True:
        n = int(rng.integers(8, 16))
        X = np.column_stack([np.ones(n), rng.integers(0, 2, n), rng.normal(size=n)])
        y = (rng.random(n) < 0.5).astype(float)
        try:
            fit = fit_logistic(X, y)
        except (Separation, SingularDesign):
            continue
        if np.max(np.abs(fit.coefficients)) < 6:
            return X, y, fit


def test_irls_matches_grid_search_on_random_tiny_problems():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        X, y, fit = _tiny_problem(rng)
        worst = max(worst, np.max(np.abs(fit.coefficients - grid_search_mle(X, y))))
    assert worst < 1e-6


def _fd_gradient(f, beta, h=1e-5):
    g = np.zeros_like(beta)
    for j in range(len(beta)):
        e = np.zeros_like(beta)
        e[j] = h
        g[j] = (f(beta + e) - f(beta - e)) / (2 * h)
    return g


def test_score_matches_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(10, 30))
        X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
        y = (rng.random(n) < 0.4).astype(float)
        w = rng.uniform(0.2, 2.0, n)
        beta = rng.normal(size=3)
        analytic = logistic_score(X, y, w, beta)
        numeric = _fd_gradient(lambda b: logistic_loglik(X, y, w, b), beta)
        rel = np.max(np.abs(analytic - numeric)) / max(1.0, np.max(np.abs(analytic)))
        assert rel < 1e-6


def test_converged_fit_has_small_score():
    rng = np.random.default_rng(3)
    X = np.column_stack([np.ones(200), rng.normal(size=200)])
    y = (rng.random(200) < 1 / (1 + np.exp(-X @ [0.3, 1.0]))).astype(float)
    fit = fit_logistic(X, y)
    assert fit.converged
    assert np.max(np.abs(logistic_score(X, y, None, fit.coefficients))) < 1e-6


@given(st.integers(0, 10_000))
def test_loglik_nondecreasing_and_weight_doubling(seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(40), rng.normal(size=(40, 2))])
    y = (rng.random(40) < 0.5).astype(float)
    w = rng.uniform(0.5, 1.5, 40)
    try:
        fit = fit_logistic(X, y, w)
    except Separation:
        return
    path = np.array(fit.loglik_path)
    assert np.all(np.diff(path) >= -1e-9 * np.abs(path[:-1]).max())
    doubled = fit_logistic(X, y, 2 * w)
    assert np.allclose(fit.coefficients, doubled.coefficients, atol=1e-8)


def test_separation_raises():
    X = np.column_stack([np.ones(6), [0, 0, 0, 1, 1, 1]])
    with pytest.raises(Separation):
        fit_logistic(X, [0, 0, 0, 1, 1, 1])


# -------------------------------------------------------------- predict


def test_predict_prob_examples():
    fit = fit_logistic(np.ones((4, 1)), [1, 1, 1, 0])
    assert predict_prob(fit, np.ones((2, 1))) == pytest.approx([0.75, 0.75], abs=1e-10)
    zero = fit_logistic(np.ones((2, 1)), [0, 1])
    assert np.all(predict_prob(zero, np.ones((3, 1))) == 0.5)
    extreme = zero.__class__(**{**zero.__dict__, "coefficients": np.array([1e6])})
    p, clipped = predict_prob(extreme, np.ones((1, 1)), return_n_clipped=True)
    assert p[0] == 1 - EPS_PROB and clipped == 1
    with pytest.raises(DimensionMismatch):
        predict_prob(fit, np.ones((2, 2)))


# ------------------------------------------------------------ posterior


def _linear_fit(n=60, noise=1.0, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    y = X @ [1.0, -0.5] + noise * rng.normal(size=n)
    return fit_wls(X, y, robust=False)


def test_posterior_draw_is_deterministic_per_seed():
    fit = _linear_fit()
    a = posterior_draw(fit, np.random.default_rng(5))
    b = posterior_draw(fit, np.random.default_rng(5))
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]


def test_posterior_draw_mean_close_to_estimate():
    fit = _linear_fit()
    rng = np.random.default_rng(11)
    draws = np.array([posterior_draw(fit, rng)[0] for _ in range(100_000)])
    mcse = draws.std(axis=0, ddof=1) / math.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - fit.coefficients) < 4 * mcse)


def test_posterior_draw_concentrates_with_large_n():
    fit = _linear_fit(n=20_000, noise=1e-3)
    rng = np.random.default_rng(12)
    draws = np.array([posterior_draw(fit, rng)[0] for _ in range(2000)])
    assert np.all(draws.std(axis=0, ddof=1) < 10 * fit.se)
    assert np.all(draws.std(axis=0) < 1e-4)


def test_posterior_draw_logistic_and_unconverged():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(100), rng.normal(size=100)])
    y = (rng.random(100) < 0.5).astype(float)
    fit = fit_logistic(X, y)
    beta, sigma2 = posterior_draw(fit, rng)
    assert sigma2 is None and beta.shape == (2,)
    stale = fit.__class__(**{**fit.__dict__, "converged": False})
    with pytest.raises(NotConverged):
        posterior_draw(stale, rng)
