"""Inverse probability of missingness weighting with monotone censoring."""

from __future__ import annotations

import numpy as np

from ..data import PanelDataset
from ..errors import InsufficientCompleteCases
from ..msm import confounder_design, fit_msm, occasion_factor, prob_treated, risk_set, treatment_weights, weights_from_factors
from ..numerics import EPS_PROB

DEFAULT_EXTREME_WEIGHT = 100.0


def complete_at(data: PanelDataset) -> np.ndarray:
    """(n, 3) indicator that every confounder and the treatment are observed."""
    return data.obs_L1 & data.obs_L2 & data.obs_A


def _history(data: PanelDataset, upto: int) -> np.ndarray:
    cols = [np.ones(data.n), data.V]
    cols += [data.A[:, j] for j in range(upto)]
    cols += [data.L1[:, j] for j in range(upto)]
    cols += [data.L2[:, j] for j in range(upto)]
    return np.column_stack(cols)


def _prob_complete(X, r):
    if r.all():
        return np.ones(len(r))
    keep = np.ones(X.shape[1], dtype=bool)
    keep[1:] = np.ptp(X[:, 1:], axis=0) > 0
    p, _ = prob_treated(X[:, keep], r.astype(float))
    return p


def missingness_weights(data: PanelDataset, stabilized: bool = False):
    """Per-subject inverse probability of remaining uncensored.

    A subject is censored from their first incomplete occasion onwards,
    even if later cells are observed. At occasion k the probability of
    being complete is modelled among subjects uncensored before k using V
    and the treatment and confounder history up to ``k - 1``. A missing
    outcome is handled as one further censoring step given the full
    history.

    Returns ``(weights, complete_case_mask)``; weights are 1 outside the
    complete cases.
    """
    R = complete_at(data)
    steps = [R[:, k] for k in range(3)] + [data.obs_Y]
    uncensored = np.ones(data.n, dtype=bool)
    prob = np.ones(data.n)
    stab = np.ones(data.n)
    for step, r in enumerate(steps):
        upto = min(step, 3)
        rows = uncensored
        if rows.any() and not r[rows].all():
            X = _history(data, upto)[rows]
            p = np.ones(data.n)
            p[rows] = _prob_complete(X, r[rows])
            prob = prob * np.where(rows, p, 1.0)
            stab = stab * np.clip(r[rows].mean(), EPS_PROB, 1.0)
        uncensored = uncensored & r
    w = np.where(uncensored, (stab if stabilized else 1.0) / prob, 1.0)
    return w, uncensored


def sequential_treatment_weights(data: PanelDataset, truncate=None):
    """Treatment weights whose occasion-k model is fitted among subjects
    still uncensored at k (complete at every occasion up to and including
    k), rather than among the final complete cases.

    Fitting on the final complete cases conditions on later missingness,
    which depends on post-treatment variables; the missingness weights then
    correct that selection a second time.
    """
    uncensored = np.cumprod(complete_at(data), axis=1).astype(bool)
    A = data.A
    factors = np.ones((data.n, 3))
    clipped = 0
    for k in range(3):
        rows = uncensored[:, k] & risk_set(np.nan_to_num(A), k)
        if rows.sum() < 3:
            raise InsufficientCompleteCases(f"only {int(rows.sum())} uncensored subjects at risk at occasion {k}")
        y = A[rows, k]
        p_den, c = prob_treated(confounder_design(data.L1[rows, k], data.L2[rows, k]), y)
        p_num = np.clip(y.mean(), EPS_PROB, 1 - EPS_PROB)
        factors[rows, k] = occasion_factor(y, p_num, p_den)
        clipped += c
    return weights_from_factors(factors, clipped, truncate)


TREATMENT_FITS = ("sequential", "complete-case")


def ipmw_analyze(
    data: PanelDataset,
    stabilized: bool = False,
    extreme_weight: float = DEFAULT_EXTREME_WEIGHT,
    truncate=None,
    treatment_fit: str = "sequential",
):
    """Complete cases weighted by treatment weight times missingness weight.

    ``treatment_fit='sequential'`` (default) fits each occasion's treatment
    model among subjects uncensored at that occasion;
    ``'complete-case'`` fits every occasion on the final complete cases,
    which is inconsistent when missingness depends on earlier treatment or
    on confounders affected by it.
    """
    if treatment_fit not in TREATMENT_FITS:
        raise ValueError(f"treatment_fit must be one of {TREATMENT_FITS}")
    mw, cc = missingness_weights(data, stabilized=stabilized)
    if cc.sum() < 3:
        raise InsufficientCompleteCases(f"only {int(cc.sum())} complete cases")
    sub = data.subset(cc)
    if treatment_fit == "sequential":
        tw = sequential_treatment_weights(data, truncate=None).final[cc]
        if truncate is not None:
            lo, hi = np.percentile(tw, truncate)
            tw = np.clip(tw, lo, hi)
    else:
        tw = treatment_weights(sub, truncate=truncate).final
    w = tw * mw[cc]
    est = fit_msm(sub, w, method="IPMW")
    est.diagnostics.update(
        n_complete=int(cc.sum()),
        max_missingness_weight=float(mw[cc].max()),
        max_weight=float(w.max()),
        extreme_weight=bool(w.max() > extreme_weight),
    )
    return est
