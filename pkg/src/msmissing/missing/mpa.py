"""Missingness pattern approach: treatment-weight models fitted separately
within each confounder missingness pattern."""

from __future__ import annotations

import numpy as np

from ..data import Pattern, PanelDataset, patterns
from ..errors import MethodNotApplicable, MissingBaseline, SparsePattern
from ..msm import EffectEstimates, fit_msm, occasion_factor, prob_treated, risk_set, weights_from_factors
from ..numerics import EPS_PROB

MIN_INTERCEPT_CELL = 5

PATTERN_COVARIATES = {
    Pattern.BOTH_OBSERVED: ("L1", "L2"),
    Pattern.L1_MISSING: ("L2",),
    Pattern.L2_MISSING: ("L1",),
    Pattern.BOTH_MISSING: (),
}


def min_cell_size(p: int) -> int:
    return max(25, 5 * p)


def _prevalence(values: np.ndarray, name: str) -> float:
    # continuous covariates count as fully prevalent; binary ones by minority share
    if name == "L1":
        m = float(values.mean())
        return min(m, 1.0 - m)
    return 1.0


def pattern_designs(data: PanelDataset, k: int, at_risk=None):
    """Per pattern present in the risk set at ``k``: ``(rows, covariates,
    decisions)`` after applying the sparse-cell policy.

    A cell smaller than ``max(25, 5p)`` loses its least prevalent covariate
    (binary by minority share, continuous last) until it is large enough or
    only the intercept remains.
    """
    at_risk = risk_set(data.A, k) if at_risk is None else at_risk
    pat = patterns(data, k)
    out = {}
    for g in Pattern:
        rows = at_risk & (pat == g)
        size = int(rows.sum())
        if size == 0:
            continue
        covs = list(PATTERN_COVARIATES[g])
        decisions = []
        while covs and size < min_cell_size(1 + len(covs)):
            vals = {c: getattr(data, c)[rows, k] for c in covs}
            drop = min(covs, key=lambda c: (_prevalence(vals[c], c), c))
            covs.remove(drop)
            decisions.append(f"k={k} pattern={g.name}: n={size} < {min_cell_size(2 + len(covs))}, dropped {drop}")
        if not covs and size < MIN_INTERCEPT_CELL:
            raise SparsePattern(f"pattern {g.name} at occasion {k} has only {size} subjects at risk")
        out[g] = (rows, tuple(covs), decisions)
    return out


def mpa_analyze(data: PanelDataset, truncate=None) -> EffectEstimates:
    """Pattern-specific denominators, one pooled numerator per risk set, and
    the MSM fitted on the whole sample."""
    if not (data.obs_A.all() and data.obs_Y.all()):
        raise MethodNotApplicable("MPA cannot accommodate missing treatment or outcome values")
    if not (data.obs_L1[:, 0].all() and data.obs_L2[:, 0].all()):
        raise MissingBaseline("MPA needs observed baseline confounders")
    A = data.A
    factors = np.ones((data.n, 3))
    clipped = 0
    log = []
    for k in range(3):
        at_risk = risk_set(A, k)
        p_num = np.clip(A[at_risk, k].mean(), EPS_PROB, 1 - EPS_PROB)
        for g, (rows, covs, decisions) in pattern_designs(data, k, at_risk).items():
            log.extend(decisions)
            y = A[rows, k]
            X = np.column_stack([np.ones(int(rows.sum()))] + [getattr(data, c)[rows, k] for c in covs])
            p_den, c = prob_treated(X, y)
            clipped += c
            factors[rows, k] = occasion_factor(y, p_num, p_den)
    est = fit_msm(data, weights_from_factors(factors, clipped, truncate), method="MPA")
    est.diagnostics["decisions"] = log
    return est
