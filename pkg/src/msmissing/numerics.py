"""Regression kernels: weighted least squares, IRLS logistic regression and
approximate posterior draws used by the imputation engine."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch, NonConvergence, NotConverged, Separation, SingularDesign

EPS_PROB = 1e-10
RCOND_MIN = 1e-12
SEPARATION_BOUND = 15.0


@dataclass(frozen=True)
class RegressionFit:
    """Result of :func:`fit_wls` or :func:`fit_logistic`.

    ``covariance`` is model based (scaled by the residual variance for linear
    fits, inverse information for logistic fits). ``robust_covariance`` is
    the heteroskedasticity-consistent sandwich treating weights as known and
    is only filled for linear fits.
    """

    kind: str
    coefficients: np.ndarray
    covariance: np.ndarray
    converged: bool
    iterations: int
    n: int
    p: int
    residual_variance: float | None = None
    robust_covariance: np.ndarray | None = None
    log_likelihood: float | None = None
    unscaled_inverse: np.ndarray | None = None
    loglik_path: tuple = field(default=(), repr=False)

    @property
    def df_resid(self) -> int:
        return self.n - self.p

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    @property
    def robust_se(self) -> np.ndarray:
        if self.robust_covariance is None:
            raise AttributeError("robust covariance only available for linear fits")
        return np.sqrt(np.diag(self.robust_covariance))


def _as_inputs(X, y, w):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if y.shape != (n,) or w.shape != (n,):
        raise DimensionMismatch(f"X has {n} rows but y has shape {y.shape} and w {w.shape}")
    if n < p:
        raise DimensionMismatch(f"fewer observations ({n}) than predictors ({p})")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
        raise ValueError("non-finite entries in regression inputs")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if w.sum() <= 0:
        raise ValueError("weights sum to zero")
    return X, y, w


def _checked_inverse(M: np.ndarray) -> np.ndarray:
    """Invert a symmetric PSD matrix, raising SingularDesign when the
    reciprocal condition number of its correlation-scaled form is below
    ``RCOND_MIN``."""
    d = np.diag(M)
    if np.any(d <= 0):
        raise SingularDesign("design has a column with zero weighted variance")
    s = 1.0 / np.sqrt(d)
    C = M * s[:, None] * s[None, :]
    ev = np.linalg.eigvalsh(C)
    if ev[0] <= RCOND_MIN * ev[-1]:
        raise SingularDesign(f"weighted normal matrix is singular (rcond={ev[0] / ev[-1]:.3g})")
    Ci = np.linalg.inv(C)
    inv = Ci * s[:, None] * s[None, :]
    return (inv + inv.T) / 2


def fit_wls(X, y, w=None, *, robust: bool = True) -> RegressionFit:
    """Weighted least squares.

    Minimises ``sum(w * (y - X @ b)**2)``. Observations with zero weight do
    not count towards the residual degrees of freedom. ``robust=False``
    skips the sandwich covariance.
    """
    X, y, w = _as_inputs(X, y, w)
    n, p = X.shape
    Xw = X * w[:, None]
    xtwx = X.T @ Xw
    inv = _checked_inverse(xtwx)
    beta = inv @ (Xw.T @ y)
    resid = y - X @ beta
    n_pos = int(np.count_nonzero(w))
    df = max(n_pos - p, 1)
    sigma2 = float(np.sum(w * resid**2) / df)
    robust_cov = None
    if robust:
        meat_rows = Xw * resid[:, None]
        meat = meat_rows.T @ meat_rows
        robust_cov = inv @ meat @ inv
        robust_cov = (robust_cov + robust_cov.T) / 2
    return RegressionFit(
        kind="linear",
        coefficients=beta,
        covariance=sigma2 * inv,
        robust_covariance=robust_cov,
        residual_variance=sigma2,
        converged=True,
        iterations=1,
        n=n_pos,
        p=p,
        unscaled_inverse=inv,
    )


def _loglik_eta(eta, y, w):
    return float(np.dot(w, y * eta - np.logaddexp(0.0, eta)))


def _loglik(X, y, w, beta):
    return _loglik_eta(X @ beta, y, w)


def logistic_score(X, y, w, beta) -> np.ndarray:
    """Gradient of the weighted Bernoulli log-likelihood."""
    X, y, w = _as_inputs(X, y, w)
    return X.T @ (w * (y - expit(X @ np.asarray(beta, dtype=float))))


def logistic_loglik(X, y, w, beta) -> float:
    X, y, w = _as_inputs(X, y, w)
    return _loglik(X, y, w, np.asarray(beta, dtype=float))


def fit_logistic(
    X,
    y,
    w=None,
    *,
    max_iter: int = 100,
    tol: float = 1e-8,
    separation_bound: float = SEPARATION_BOUND,
    start=None,
) -> RegressionFit:
    """Weighted logistic regression by IRLS (Newton-Raphson) with step halving.

    Converges when the largest coefficient change or the largest score
    component falls below ``tol``. Raises :class:`Separation` when a
    coefficient leaves ``[-separation_bound, separation_bound]``.
    """
    X, y, w = _as_inputs(X, y, w)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("logistic outcome must be 0/1")
    n, p = X.shape
    beta = np.zeros(p) if start is None else np.array(start, dtype=float)
    eta = X @ beta
    ll = _loglik_eta(eta, y, w)
    path = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(eta)
        score = X.T @ (w * (y - mu))
        if np.max(np.abs(score)) < tol:
            converged = True
            it -= 1
            break
        info = X.T @ (X * (w * mu * (1.0 - mu))[:, None])
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            step = None
        if step is None or not np.all(np.isfinite(step)):
            if np.max(np.abs(beta)) > separation_bound:
                raise Separation("information matrix degenerate with diverging coefficients")
            raise SingularDesign("information matrix is singular")
        d_eta = X @ step
        new_ll = _loglik_eta(eta + d_eta, y, w)
        halvings = 0
        while new_ll < ll - 1e-12 * max(1.0, abs(ll)) and halvings < 40:
            step = step / 2
            d_eta = d_eta / 2
            new_ll = _loglik_eta(eta + d_eta, y, w)
            halvings += 1
        beta = beta + step
        eta = eta + d_eta
        ll = max(new_ll, ll) if halvings == 40 else new_ll
        path.append(ll)
        if np.max(np.abs(step)) < tol:
            converged = True
            break
        if np.max(np.abs(beta)) > 2 * separation_bound:
            break
    if np.max(np.abs(beta)) > separation_bound:
        raise Separation(f"|coefficient| {np.max(np.abs(beta)):.1f} exceeds bound {separation_bound}")
    if not converged:
        raise NonConvergence(f"IRLS did not converge in {max_iter} iterations")
    mu = expit(X @ beta)
    info = X.T @ (X * (w * mu * (1.0 - mu))[:, None])
    cov = _checked_inverse(info)
    return RegressionFit(
        kind="logistic",
        coefficients=beta,
        covariance=cov,
        converged=True,
        iterations=it,
        n=int(np.count_nonzero(w)),
        p=p,
        log_likelihood=ll,
        loglik_path=tuple(path),
    )


def predict_prob(fit: RegressionFit, X, *, eps: float = EPS_PROB, return_n_clipped: bool = False):
    """``expit(X @ beta)`` clipped to ``[eps, 1 - eps]``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if fit.kind != "logistic":
        raise ValueError("predict_prob requires a logistic fit")
    if X.shape[1] != fit.p:
        raise DimensionMismatch(f"fit has {fit.p} coefficients, X has {X.shape[1]} columns")
    raw = expit(X @ fit.coefficients)
    out = np.clip(raw, eps, 1.0 - eps)
    if return_n_clipped:
        return out, int(np.count_nonzero(out != raw))
    return out


def _mvn(rng: np.random.Generator, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        L = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return mean + L @ rng.standard_normal(mean.shape[0])


def posterior_draw(fit: RegressionFit, rng: np.random.Generator, kind: str | None = None):
    """Approximate posterior draw of the coefficients.

    Linear fits: residual variance from a scaled inverse chi-square with
    ``n - p`` degrees of freedom, then coefficients from a normal centred at
    the estimate. Logistic fits: normal with the fit covariance.

    Returns ``(beta, sigma2)``; ``sigma2`` is ``None`` for logistic fits.
    """
    kind = kind or fit.kind
    if kind != fit.kind:
        raise ValueError(f"requested {kind} draw from a {fit.kind} fit")
    if not fit.converged:
        raise NotConverged("cannot draw from an unconverged fit")
    if kind == "linear":
        df = fit.df_resid
        sigma2 = fit.residual_variance * df / rng.chisquare(df)
        beta = _mvn(rng, fit.coefficients, sigma2 * fit.unscaled_inverse)
        return beta, float(sigma2)
    return _mvn(rng, fit.coefficients, fit.covariance), None
