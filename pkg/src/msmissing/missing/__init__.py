"""Strategies for partially observed time-varying confounders."""

from __future__ import annotations

from .cc import cc_analyze
from .ipmw import ipmw_analyze, missingness_weights
from .locf import locf_analyze, locf_impute
from .mi import mi_analyze, mice_impute
from .mpa import mpa_analyze, pattern_designs
from .rubin import PooledEstimate, rubin_pool

METHODS = ("CC", "LOCF", "MPA", "MI", "IPMW")


def analyze(
    data,
    method: str,
    rng=None,
    *,
    M: int = 10,
    cycles: int = 10,
    truncate=None,
    ipmw_stabilized: bool = False,
    ipmw_treatment_fit: str = "sequential",
):
    """Dispatch one of the five strategies by name."""
    if method == "CC":
        return cc_analyze(data, truncate=truncate)
    if method == "LOCF":
        return locf_analyze(data, truncate=truncate)
    if method == "MPA":
        return mpa_analyze(data, truncate=truncate)
    if method == "MI":
        return mi_analyze(data, M=M, cycles=cycles, rng=rng, truncate=truncate)
    if method == "IPMW":
        return ipmw_analyze(data, stabilized=ipmw_stabilized, truncate=truncate, treatment_fit=ipmw_treatment_fit)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


__all__ = [
    "METHODS",
    "PooledEstimate",
    "analyze",
    "cc_analyze",
    "ipmw_analyze",
    "locf_analyze",
    "locf_impute",
    "mi_analyze",
    "mice_impute",
    "missingness_weights",
    "mpa_analyze",
    "pattern_designs",
    "rubin_pool",
]
