"""Rubin's rules for combining per-imputation estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..errors import DimensionMismatch, MTooSmall


@dataclass(frozen=True)
class PooledEstimate:
    theta: np.ndarray
    total_variance: np.ndarray
    within: np.ndarray
    between: np.ndarray
    M: int
    df: np.ndarray
    n_used: int = 0
    method: str = "MI"
    diagnostics: dict = field(default_factory=dict)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.total_variance))

    @property
    def covariance(self) -> np.ndarray:
        return self.total_variance

    def quantile(self) -> np.ndarray:
        return np.where(np.isinf(self.df), stats.norm.ppf(0.975), stats.t.ppf(0.975, np.where(np.isinf(self.df), 1.0, self.df)))

    @property
    def ci_lower(self) -> np.ndarray:
        return self.theta - self.quantile() * self.se

    @property
    def ci_upper(self) -> np.ndarray:
        return self.theta + self.quantile() * self.se


def _fsum(arrays):
    # math.fsum is exactly rounded, so the result does not depend on input order
    stacked = np.stack(arrays)
    flat = stacked.reshape(len(arrays), -1)
    return np.array([math.fsum(flat[:, j]) for j in range(flat.shape[1])]).reshape(stacked.shape[1:])


def rubin_pool(estimates, n_used: int = 0) -> PooledEstimate:
    """Pool ``(theta, variance)`` pairs (or objects with ``theta`` and
    ``covariance``) from M imputed datasets.

    Total variance is ``W + (1 + 1/M) B`` with degrees of freedom
    ``(M - 1) * (1 + W / ((1 + 1/M) B))**2`` per coefficient (infinite when
    ``B`` is zero).
    """
    pairs = []
    for e in estimates:
        if hasattr(e, "theta"):
            pairs.append((np.atleast_1d(np.asarray(e.theta, float)), np.atleast_2d(np.asarray(e.covariance, float))))
        else:
            t, v = e
            t = np.atleast_1d(np.asarray(t, float))
            v = np.asarray(v, float)
            v = np.diag(v) if v.ndim == 1 and len(t) > 1 else np.atleast_2d(v)
            pairs.append((t, v))
    M = len(pairs)
    if M < 2:
        raise MTooSmall("Rubin's rules need at least two imputations")
    p = pairs[0][0].shape[0]
    for t, v in pairs:
        if t.shape != (p,) or v.shape != (p, p):
            raise DimensionMismatch("inconsistent estimate dimensions across imputations")
    thetas = [t for t, _ in pairs]
    theta = _fsum(thetas) / M
    W = _fsum([v for _, v in pairs]) / M
    dev = [np.outer(t - theta, t - theta) for t in thetas]
    B = _fsum(dev) / (M - 1)
    T = W + (1 + 1 / M) * B
    b = np.diag(B)
    w = np.diag(W)
    with np.errstate(divide="ignore", invalid="ignore"):
        df = np.where(b > 0, (M - 1) * (1 + w / ((1 + 1 / M) * b)) ** 2, np.inf)
    return PooledEstimate(theta=theta, total_variance=T, within=W, between=B, M=M, df=df, n_used=n_used)
