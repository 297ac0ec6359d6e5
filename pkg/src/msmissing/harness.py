"""Replication engine, performance measures and bootstrap intervals."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import dgp
from . import rng as rngs
from .data import PanelDataset
from .errors import MSMError, TooFewReplications, TooManyFailures
from .missing import METHODS, analyze
from .msm import Z975, fit_msm, treatment_weights

log = logging.getLogger(__name__)

# comparators fitted on the latent (fully observed) data
FULL_DATA_METHODS = ("FULL", "UNADJ", "ADJ")
METHOD_ORDER = FULL_DATA_METHODS + METHODS
MAX_FAILURE_RATE = 0.10

SUMMARY_COLUMNS = (
    "scenario", "method", "k", "bias", "emp_se", "coverage", "mse",
    "mcse_bias", "mcse_coverage", "s_success", "s_fail",
)
RAW_COLUMNS = ("scenario", "method", "k", "replication", "estimate", "se")


@dataclass(frozen=True)
class MethodOptions:
    """Tuning knobs passed to every analysis in a run."""

    M: int = 10
    cycles: int = 10
    truncate: tuple | None = None
    ipmw_stabilized: bool = False
    ipmw_treatment_fit: str = "sequential"


@dataclass(frozen=True)
class PerformanceMeasures:
    bias: float
    emp_se: float
    coverage: float
    mse: float
    mcse_bias: float
    mcse_coverage: float
    mcse_emp_se: float
    S: int


def _quantiles(df, S):
    if df is None:
        return np.full(S, Z975)
    df = np.broadcast_to(np.asarray(df, dtype=float), (S,))
    q = np.full(S, Z975)
    finite = np.isfinite(df)
    q[finite] = stats.t.ppf(0.975, df[finite])
    return q


def performance_measures(estimates, ses, theta_true: float, df=None) -> PerformanceMeasures:
    """Bias, empirical SE, 95% coverage and MSE with Monte-Carlo SEs.

    Intervals are ``estimate +/- q * se`` with ``q`` the normal quantile, or
    the t quantile for replications with a finite ``df`` entry.
    """
    est = np.asarray(estimates, dtype=float)
    se = np.asarray(ses, dtype=float)
    S = est.shape[0]
    if S < 2:
        raise TooFewReplications(f"performance measures need at least 2 replications, got {S}")
    if se.shape != est.shape:
        raise ValueError("estimates and standard errors must have the same length")
    q = _quantiles(df, S)
    err = est - theta_true
    bias = math.fsum(err) / S
    centred = est - math.fsum(est) / S
    emp_se = math.sqrt(math.fsum(centred**2) / (S - 1))
    covered = np.abs(err) <= q * se
    coverage = float(np.count_nonzero(covered)) / S
    mse = math.fsum(err**2) / S
    return PerformanceMeasures(
        bias=bias,
        emp_se=emp_se,
        coverage=coverage,
        mse=mse,
        mcse_bias=emp_se / math.sqrt(S),
        mcse_coverage=math.sqrt(coverage * (1 - coverage) / S),
        mcse_emp_se=emp_se / math.sqrt(2 * (S - 1)),
        S=S,
    )


@dataclass
class PerformanceReport:
    """Per-method replication results for one scenario.

    ``estimates``, ``ses`` and ``dfs`` map a method to an ``(S, 3)`` array
    with NaN rows for failed replications (``dfs`` is infinite for methods
    using normal intervals).
    """

    scenario: str
    methods: tuple
    S: int
    theta_true: np.ndarray
    estimates: dict
    ses: dict
    dfs: dict
    failures: dict
    measures: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return bool(self.flags)

    def summary_rows(self):
        rows = []
        for m in self.methods:
            for k in range(3):
                pm = self.measures.get((m, k))
                n_fail = len(self.failures[m])
                row = {"scenario": self.scenario, "method": m, "k": k, "s_success": self.S - n_fail, "s_fail": n_fail}
                for col in ("bias", "emp_se", "coverage", "mse", "mcse_bias", "mcse_coverage"):
                    row[col] = getattr(pm, col) if pm is not None else float("nan")
                rows.append(row)
        return rows

    def raw_rows(self):
        rows = []
        for m in self.methods:
            for k in range(3):
                for r in range(self.S):
                    rows.append(
                        {
                            "scenario": self.scenario, "method": m, "k": k, "replication": r,
                            "estimate": self.estimates[m][r, k], "se": self.ses[m][r, k],
                        }
                    )
        return rows


def _ordered(methods) -> tuple:
    unknown = set(methods) - set(METHOD_ORDER)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}; expected a subset of {METHOD_ORDER}")
    return tuple(m for m in METHOD_ORDER if m in set(methods))


def _fit_one(method, latent, masked, config, replication, options):
    if method == "FULL":
        return fit_msm(latent, treatment_weights(latent, truncate=options.truncate))
    if method == "UNADJ":
        return fit_msm(latent, comparator="unadjusted")
    if method == "ADJ":
        return fit_msm(latent, comparator="covariate-adjusted")
    # stream keyed by the method's fixed position so results do not depend
    # on which other methods were requested
    r = rngs.stream(config.seed, replication, rngs.METHOD, METHOD_ORDER.index(method))
    return analyze(
        masked, method, rng=r, M=options.M, cycles=options.cycles, truncate=options.truncate,
        ipmw_stabilized=options.ipmw_stabilized, ipmw_treatment_fit=options.ipmw_treatment_fit,
    )


def run_replication(config, replication: int, methods, options: MethodOptions = MethodOptions()):
    """Generate, mask and analyse one replication.

    Returns ``{method: (theta, se, df) or error string}``.
    """
    latent, masked = dgp.simulate_replication(config, replication)
    out = {}
    for m in methods:
        try:
            est = _fit_one(m, latent, masked, config, replication, options)
        except MSMError as exc:
            out[m] = f"{type(exc).__name__}: {exc}"
            continue
        df = getattr(est, "df", None)
        df = np.full(3, np.inf) if df is None else np.asarray(df, dtype=float)
        out[m] = (np.asarray(est.theta, dtype=float), np.asarray(est.se, dtype=float), df)
    return out


def _chunk(args):
    config, reps, methods, options = args
    return [(r, run_replication(config, r, methods, options)) for r in reps]


def default_threads() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # pragma: no cover - non-Linux
        return max(1, os.cpu_count() or 1)


def _replicate_all(config, S, methods, options, threads):
    if threads <= 1:
        return dict(_chunk((config, range(S), methods, options)))
    n_chunks = min(S, threads * 4)
    bounds = np.linspace(0, S, n_chunks + 1).astype(int)
    jobs = [(config, range(a, b), methods, options) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    results = {}
    with ProcessPoolExecutor(max_workers=threads) as pool:
        for part in pool.map(_chunk, jobs):
            results.update(part)
    return results


def run_scenario(
    config: dgp.ScenarioConfig,
    methods=METHODS,
    S: int = 500,
    *,
    threads: int = 1,
    options: MethodOptions = MethodOptions(),
    theta_true=None,
    n_oracle: int = 10**6,
) -> PerformanceReport:
    """Run ``S`` replications of ``config`` and summarise every method.

    The master seed is ``config.seed``. Results are merged by replication
    index, so any ``threads`` value gives the same report. A method failing
    in more than 10% of replications flags the report.
    """
    if S < 2:
        raise TooFewReplications("a scenario needs at least 2 replications")
    methods = _ordered(methods)
    if theta_true is None:
        theta_true = dgp.true_effects(config, n_oracle=n_oracle).theta
    theta_true = np.asarray(theta_true, dtype=float)
    results = _replicate_all(config, S, methods, options, threads)

    estimates = {m: np.full((S, 3), np.nan) for m in methods}
    ses = {m: np.full((S, 3), np.nan) for m in methods}
    dfs = {m: np.full((S, 3), np.inf) for m in methods}
    failures = {m: [] for m in methods}
    for r in range(S):
        for m, res in results[r].items():
            if isinstance(res, str):
                failures[m].append((r, res))
                kind = res.split(":", 1)[0]
                log.warning(
                    "replication_failed scenario=%s method=%s replication=%d error=%s",
                    config.mechanism, m, r, kind,
                )
            else:
                estimates[m][r], ses[m][r], dfs[m][r] = res

    report = PerformanceReport(
        scenario=config.mechanism, methods=methods, S=S, theta_true=theta_true,
        estimates=estimates, ses=ses, dfs=dfs, failures=failures,
    )
    for m in methods:
        ok = np.all(np.isfinite(estimates[m]), axis=1)
        if len(failures[m]) > MAX_FAILURE_RATE * S:
            report.flags.append(f"{m}: {len(failures[m])} of {S} replications failed")
        if ok.sum() < 2:
            continue
        for k in range(3):
            report.measures[(m, k)] = performance_measures(
                estimates[m][ok, k], ses[m][ok, k], theta_true[k], df=dfs[m][ok, k]
            )
    return report


# ---------------------------------------------------------------- output


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    x = float(value)
    return "NA" if math.isnan(x) else repr(x)


def _sorted_reports(reports):
    if isinstance(reports, PerformanceReport):
        return [reports]
    return list(reports)


def emit_report(reports, out_dir, fmt: str = "csv", include_raw: bool = False, stem: str = "summary") -> list:
    """Write the summary table (``summary.csv`` or ``summary.md``) and
    optionally ``raw.csv`` into ``out_dir``; returns the written paths.

    Floats use the shortest repr that round-trips exactly; missing values
    are ``NA``. Rows follow report order, then method order, then k.
    """
    if fmt not in ("csv", "markdown"):
        raise ValueError("format must be 'csv' or 'markdown'")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = _sorted_reports(reports)
    rows = [row for rep in reports for row in rep.summary_rows()]
    paths = []
    if fmt == "csv":
        path = out_dir / f"{stem}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_COLUMNS)
            for row in rows:
                w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    else:
        path = out_dir / f"{stem}.md"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("| " + " | ".join(SUMMARY_COLUMNS) + " |\n")
            fh.write("|" + "---|" * len(SUMMARY_COLUMNS) + "\n")
            for row in rows:
                fh.write("| " + " | ".join(_fmt(row[c]) for c in SUMMARY_COLUMNS) + " |\n")
    paths.append(path)
    if include_raw:
        path = out_dir / "raw.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RAW_COLUMNS)
            for rep in reports:
                for row in rep.raw_rows():
                    w.writerow([_fmt(row[c]) for c in RAW_COLUMNS])
        paths.append(path)
    return paths


def read_markdown_summary(path) -> list:
    """Parse a markdown summary written by :func:`emit_report` back into rows."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    header = [c.strip() for c in lines[0].strip("|").split("|")]
    for ln in lines[2:]:
        cells = [c.strip() for c in ln.strip("|").split("|")]
        rows.append(dict(zip(header, cells)))
    return rows


# ------------------------------------------------------------- bootstrap


@dataclass(frozen=True)
class BootstrapResult:
    theta: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    B: int
    n_failed: int
    replicates: np.ndarray = field(repr=False)


def bootstrap_ci(
    data: PanelDataset,
    method: str,
    B: int = 500,
    rng: np.random.Generator | None = None,
    *,
    level: float = 0.95,
    options: MethodOptions = MethodOptions(),
    estimator=None,
) -> BootstrapResult:
    """Percentile intervals from subject-level resampling.

    Every resample reruns the whole pipeline (weights re-estimated). Failed
    resamples are dropped and counted; more than 10% failures raise
    :class:`TooManyFailures`. ``estimator(data, rng)`` overrides the named
    method.
    """
    if B < 100:
        raise ValueError("bootstrap needs B >= 100 resamples")
    rng = rng if rng is not None else np.random.default_rng()
    if estimator is None:

        def estimator(d, r):
            return analyze(
                d, method, rng=r, M=options.M, cycles=options.cycles, truncate=options.truncate,
                ipmw_stabilized=options.ipmw_stabilized, ipmw_treatment_fit=options.ipmw_treatment_fit,
            ).theta

    point_rng, *streams = rngs.substreams(rng, B + 1)
    theta = np.asarray(estimator(data, point_rng), dtype=float)
    reps = []
    failed = 0
    for r in streams:
        idx = r.integers(0, data.n, size=data.n)
        try:
            reps.append(np.asarray(estimator(data.subset(idx), r), dtype=float))
        except MSMError as exc:
            log.debug("bootstrap resample failed: %s", exc)
            failed += 1
    if failed > MAX_FAILURE_RATE * B:
        raise TooManyFailures(f"{failed} of {B} bootstrap resamples failed")
    reps = np.array(reps)
    a = (1 - level) / 2 * 100
    lower, upper = np.percentile(reps, [a, 100 - a], axis=0)
    return BootstrapResult(theta=theta, lower=lower, upper=upper, B=B, n_failed=failed, replicates=reps)
