"""Multiple imputation by chained equations followed by per-dataset MSM
fits pooled with Rubin's rules.

Only effect estimates are pooled. There is deliberately no entry point that
averages weights across imputations.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.special import expit

from .. import rng as rngs
from ..data import PanelDataset
from ..errors import FailedImputation, MSMError, MTooSmall
from ..msm import fit_msm, treatment_weights
from ..numerics import fit_logistic, fit_wls, posterior_draw
from .rubin import PooledEstimate, rubin_pool

log = logging.getLogger(__name__)

# column layout of the working matrix
NAMES = ["V", "L1_0", "L1_1", "L1_2", "L2_0", "L2_1", "L2_2", "A_0", "A_1", "A_2", "Y"]
BINARY = {"L1_0", "L1_1", "L1_2", "A_0", "A_1", "A_2"}
A_COLS = (7, 8, 9)
MAX_FAILED_FRACTION = 0.2


def _matrix(data: PanelDataset):
    vals = np.column_stack([data.V, data.L1, data.L2, data.A, data.Y])
    obs = np.column_stack([np.isfinite(data.V), data.obs_L1, data.obs_L2, data.obs_A, data.obs_Y])
    return vals, obs


def _to_dataset(data: PanelDataset, D: np.ndarray) -> PanelDataset:
    ones = np.ones((data.n, 3), dtype=bool)
    return data.replace(
        L1=D[:, 1:4], L2=D[:, 4:7], A=D[:, 7:10], Y=D[:, 10],
        obs_L1=ones, obs_L2=ones, obs_A=ones, obs_Y=np.ones(data.n, dtype=bool),
    )


class _Chain:
    """One chained-equations run producing a single completed dataset."""

    def __init__(self, D, obs, rng):
        self.D = D
        self.obs = obs
        self.rng = rng
        self.starts = {}
        self.incomplete = [j for j in range(1, D.shape[1]) if not obs[:, j].all()]

    def initial_fill(self):
        for j in self.incomplete:
            pool = self.D[self.obs[:, j], j]
            miss = ~self.obs[:, j]
            self.D[miss, j] = self.rng.choice(pool, size=int(miss.sum()))
        self._enforce_absorbing()

    def _enforce_absorbing(self):
        # keep imputed treatment paths absorbing; observed cells never move
        A = self.D[:, A_COLS]
        oA = self.obs[:, A_COLS]
        for k in (1, 2):
            forced = ~oA[:, k] & (A[:, k - 1] == 1)
            A[forced, k] = 1
        for k in (1, 0):
            forced = ~oA[:, k] & (A[:, k + 1] == 0)
            A[forced, k] = 0
        self.D[:, A_COLS] = A

    def _design(self, j, exclude=()):
        cols = [c for c in range(self.D.shape[1]) if c != j and c not in exclude]
        return np.column_stack([np.ones(len(self.D)), self.D[:, cols]])

    def update(self, j):
        name = NAMES[j]
        miss = ~self.obs[:, j]
        fit_rows = self.obs[:, j]
        if j in A_COLS:
            k = A_COLS.index(j)
            X = self._design(j, exclude=A_COLS)
            if k > 0:
                fit_rows = fit_rows & (self.D[:, A_COLS[k - 1]] == 0)
        else:
            X = self._design(j)
        Xf = X[fit_rows]
        keep = _varying(Xf)
        if not keep.all():
            X, Xf = X[:, keep], Xf[:, keep]
        Xm = X[miss]
        y = self.D[fit_rows, j]
        if name in BINARY:
            start = self.starts.get(j)
            if start is not None and start.shape[0] != Xf.shape[1]:
                start = None
            fit = fit_logistic(Xf, y, start=start)
            self.starts[j] = fit.coefficients
            beta, _ = posterior_draw(fit, self.rng)
            p = expit(Xm @ beta)
            self.D[miss, j] = (self.rng.random(Xm.shape[0]) < p).astype(float)
        else:
            fit = fit_wls(Xf, y, robust=False)
            beta, sigma2 = posterior_draw(fit, self.rng)
            noise = self.rng.standard_normal(Xm.shape[0]) * np.sqrt(sigma2)
            self.D[miss, j] = Xm @ beta + noise
        if j in A_COLS:
            self._enforce_absorbing()

    def run(self, cycles):
        self.initial_fill()
        for _ in range(cycles):
            for j in self.incomplete:
                self.update(j)
        return self.D


def _varying(X):
    """Columns to keep: the intercept plus every column that is not constant."""
    keep = np.ones(X.shape[1], dtype=bool)
    keep[1:] = (X[:, 1:] != X[:1, 1:]).any(axis=0)
    return keep


def mice_impute(data: PanelDataset, M: int = 10, cycles: int = 10, rng: np.random.Generator | None = None):
    """``M`` completed datasets, each from an independent chain.

    Every incomplete variable is regressed on all other columns (all
    confounder occasions, treatment indicators, V and Y); binary variables
    use a logistic posterior draw plus Bernoulli sampling, continuous ones a
    linear posterior draw plus Gaussian noise. Initial values are drawn from
    each variable's observed values.
    """
    rng = rng if rng is not None else np.random.default_rng()
    D0, obs = _matrix(data)
    if not obs[:, 0].all():
        raise ValueError("V must be fully observed for imputation")
    out = []
    for sub in rngs.substreams(rng, M):
        chain = _Chain(D0.copy(), obs, sub)
        out.append(_to_dataset(data, chain.run(cycles)))
    return out


def mi_analyze(
    data: PanelDataset,
    M: int = 10,
    cycles: int = 10,
    rng: np.random.Generator | None = None,
    truncate=None,
) -> PooledEstimate:
    """Impute, fit the weighted MSM in each completed dataset, pool."""
    if M < 2:
        raise MTooSmall("multiple imputation needs M >= 2")
    rng = rng if rng is not None else np.random.default_rng()
    D0, obs = _matrix(data)
    results, failures = [], []
    for m, sub in enumerate(rngs.substreams(rng, M)):
        try:
            if obs.all():
                completed = data
            else:
                completed = _to_dataset(data, _Chain(D0.copy(), obs, sub).run(cycles))
            results.append(fit_msm(completed, treatment_weights(completed, truncate=truncate)))
        except MSMError as exc:
            log.debug("imputation %d failed: %s", m, exc)
            failures.append(f"{type(exc).__name__}: {exc}")
    if len(failures) > MAX_FAILED_FRACTION * M or len(results) < 2:
        raise FailedImputation(f"{len(failures)} of {M} imputations failed: {failures[:3]}")
    pooled = rubin_pool(results, n_used=data.n)
    pooled.diagnostics["failed_imputations"] = len(failures)
    return pooled
