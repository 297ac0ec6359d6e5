"""Stabilised inverse-probability-of-treatment weights and the weighted
outcome model giving the three regime-contrast parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import PanelDataset
from .errors import EmptyRiskSet, SingularDesign, ValidationError
from .numerics import EPS_PROB, fit_logistic, fit_wls, predict_prob

Z975 = 1.959963984540054
COMPARATORS = ("none", "unadjusted", "covariate-adjusted")


@dataclass(frozen=True)
class WeightVector:
    cumulative: np.ndarray  # (n, 3) weight after each occasion
    n_clipped: int = 0
    truncation: tuple | None = None
    final_override: np.ndarray | None = field(default=None, repr=False)

    @property
    def final(self) -> np.ndarray:
        return self.cumulative[:, -1] if self.final_override is None else self.final_override

    @property
    def mean(self) -> float:
        return float(self.final.mean())

    @property
    def max(self) -> float:
        return float(self.final.max())


@dataclass(frozen=True)
class EffectEstimates:
    theta: np.ndarray
    se: np.ndarray
    covariance: np.ndarray
    n_used: int
    method: str = "msm"
    df: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def ci_lower(self) -> np.ndarray:
        return self.theta - Z975 * self.se

    @property
    def ci_upper(self) -> np.ndarray:
        return self.theta + Z975 * self.se


def risk_set(A: np.ndarray, k: int) -> np.ndarray:
    """Subjects still untreated before occasion ``k``."""
    return np.ones(len(A), dtype=bool) if k == 0 else A[:, k - 1] == 0


def prob_treated(X: np.ndarray, y: np.ndarray, start=None):
    """Fitted ``P(y = 1 | X)`` and the number of clipped predictions.

    Intercept-only designs use the sample proportion directly, which avoids
    a divergent intercept when every subject shares the same outcome.
    """
    if X.shape[1] == 1 and np.all(X == 1):
        p = float(np.clip(y.mean(), EPS_PROB, 1 - EPS_PROB))
        return np.full(len(y), p), int(p in (EPS_PROB, 1 - EPS_PROB))
    fit = fit_logistic(X, y, start=start)
    return predict_prob(fit, X, return_n_clipped=True)


def occasion_factor(y: np.ndarray, p_num: np.ndarray, p_den: np.ndarray) -> np.ndarray:
    """Ratio of numerator to denominator probability of the observed value."""
    return np.where(y == 1, p_num / p_den, (1 - p_num) / (1 - p_den))


def weights_from_factors(factors: np.ndarray, n_clipped: int = 0, truncate: tuple | None = None) -> WeightVector:
    cumulative = np.cumprod(factors, axis=1)
    final = None
    if truncate is not None:
        lo, hi = np.percentile(cumulative[:, -1], truncate)
        final = np.clip(cumulative[:, -1], lo, hi)
    return WeightVector(cumulative=cumulative, n_clipped=n_clipped, truncation=truncate, final_override=final)


def confounder_design(L1k: np.ndarray, L2k: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(len(L1k)), L1k, L2k])


def treatment_weights(data: PanelDataset, truncate: tuple | None = None) -> WeightVector:
    """Stabilised weights from one logistic model per occasion.

    At occasion k the denominator regresses ``A[k]`` on ``L1[k]`` and
    ``L2[k]`` among subjects untreated at ``k - 1``; the numerator is the
    marginal initiation probability in the same risk set. Treated subjects
    leave the risk set, so their weight stays fixed after initiation.
    ``truncate`` optionally clips final weights to a percentile pair such
    as ``(1, 99)``.
    """
    if not (data.obs_A.all() and data.obs_L1.all() and data.obs_L2.all()):
        raise ValidationError("treatment_weights needs observed treatment and confounders")
    A = data.A
    factors = np.ones((data.n, 3))
    clipped = 0
    for k in range(3):
        at_risk = risk_set(A, k)
        if not at_risk.any():
            raise EmptyRiskSet(f"no untreated subjects remain at occasion {k}")
        y = A[at_risk, k]
        X = confounder_design(data.L1[at_risk, k], data.L2[at_risk, k])
        p_den, c = prob_treated(X, y)
        p_num = np.clip(y.mean(), EPS_PROB, 1 - EPS_PROB)
        factors[at_risk, k] = occasion_factor(y, p_num, p_den)
        clipped += c
    return weights_from_factors(factors, clipped, truncate)


def _final_weights(weights, n):
    if weights is None:
        return np.ones(n)
    if isinstance(weights, WeightVector):
        return weights.final
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"weights must have length {n}")
    return w


def msm_design(data: PanelDataset, comparator: str = "none") -> np.ndarray:
    cols = [np.ones(data.n), data.A[:, 0], data.A[:, 1], data.A[:, 2]]
    if comparator == "covariate-adjusted":
        cols += [data.L1[:, k] for k in range(3)] + [data.L2[:, k] for k in range(3)] + [data.V]
    return np.column_stack(cols)


def fit_msm(data: PanelDataset, weights=None, comparator: str = "none", method: str | None = None) -> EffectEstimates:
    """Weighted regression of Y on the three treatment indicators.

    ``comparator='unadjusted'`` ignores the weights; ``'covariate-adjusted'``
    ignores the weights and adds every confounder and V to the design.
    Standard errors are the robust sandwich with weights treated as known.
    """
    if comparator not in COMPARATORS:
        raise ValueError(f"comparator must be one of {COMPARATORS}")
    if not (data.obs_Y.all() and data.obs_A.all()):
        raise ValidationError("fit_msm needs observed treatment and outcome for every analysed subject")
    if comparator == "covariate-adjusted" and not (data.obs_L1.all() and data.obs_L2.all()):
        raise ValidationError("covariate adjustment needs observed confounders")
    w = _final_weights(weights, data.n) if comparator == "none" else np.ones(data.n)
    X = msm_design(data, comparator)
    for k in range(3):
        if np.ptp(data.A[:, k]) == 0:
            raise SingularDesign(f"treatment indicator A_{k} is constant in the analysis sample")
    fit = fit_wls(X, data.Y, w)
    cov = fit.robust_covariance[1:4, 1:4]
    return EffectEstimates(
        theta=fit.coefficients[1:4].copy(),
        se=np.sqrt(np.diag(cov)),
        covariance=cov,
        n_used=data.n,
        method=method or ("msm" if comparator == "none" else comparator),
    )


def _wstats(x, w):
    m = np.average(x, weights=w)
    v = np.average((x - m) ** 2, weights=w)
    return m, v


def balance_diagnostics(data: PanelDataset, weights=None) -> np.ndarray:
    """Weighted standardised mean differences of L1 and L2 between treated
    and untreated at each occasion, within that occasion's risk set.

    Returns an array of shape (3, 2): rows are occasions, columns L1, L2.
    ``weights`` may be a :class:`WeightVector` (the cumulative weight up to
    each occasion is used), a final-weight vector, or ``None``.
    """
    out = np.full((3, 2), np.nan)
    for k in range(3):
        at_risk = risk_set(data.A, k)
        if isinstance(weights, WeightVector):
            w = weights.cumulative[:, k]
        else:
            w = _final_weights(weights, data.n)
        a = data.A[:, k]
        t = at_risk & (a == 1)
        u = at_risk & (a == 0)
        if not t.any() or not u.any():
            continue
        for j, L in enumerate((data.L1[:, k], data.L2[:, k])):
            m1, v1 = _wstats(L[t], w[t])
            m0, v0 = _wstats(L[u], w[u])
            pooled = np.sqrt((v1 + v0) / 2)
            out[k, j] = 0.0 if pooled == 0 else (m1 - m0) / pooled
    return out
