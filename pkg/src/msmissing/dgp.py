"""Simulation model: time-varying confounding with treatment-confounder
feedback over three occasions, six missingness mechanisms, intercept
calibration and a g-computation oracle for the true regime contrasts."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import rng as rngs
from .data import PanelDataset
from .errors import CalibrationFailed, MechanismMismatch

MECHANISMS = ("MCAR", "MAR_AL", "MAR_ALY", "MAR_ALV", "Constant", "Differential")
REGIMES = ((0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 1, 1))


@dataclass(frozen=True)
class MissingnessModel:
    """``logit P(cell missing at k) = intercept[var][k-1] + coef_A*A[k-1]
    + coef_L1*L1[k-1] + coef_L2*L2[k-1] + coef_Y*Y + coef_V*V``.

    ``intercepts`` is indexed ``[variable][k - 1]`` with variable 0 = L1 and
    1 = L2.
    """

    intercepts: tuple = ((0.0, 0.0), (0.0, 0.0))
    coef_A: float = 0.0
    coef_L1: float = 0.0
    coef_L2: float = 0.0
    coef_Y: float = 0.0
    coef_V: float = 0.0

    def prob_missing(self, var: int, k: int, A, L1, L2, Y, V) -> np.ndarray:
        eta = (
            self.intercepts[var][k - 1]
            + self.coef_A * A[:, k - 1]
            + self.coef_L1 * L1[:, k - 1]
            + self.coef_L2 * L2[:, k - 1]
            + self.coef_Y * Y
            + self.coef_V * V
        )
        return expit(eta)


def _default_missingness() -> dict:
    # intercepts are calibrated (see calibrate_defaults) and shared by L1 and L2
    def both(k1, k2):
        return ((k1, k2), (k1, k2))

    mar = dict(coef_A=0.5, coef_L1=0.5, coef_L2=0.5)
    return {
        "MCAR": MissingnessModel(intercepts=both(-1.23046875, -1.23046875)),
        "MAR_AL": MissingnessModel(intercepts=both(-1.69921875, -2.484375), **mar),
        "MAR_ALY": MissingnessModel(intercepts=both(-3.43359375, -4.21875), coef_Y=0.4, **mar),
        "MAR_ALV": MissingnessModel(intercepts=both(-1.79296875, -2.58984375), coef_V=1.0, **mar),
        "Differential": MissingnessModel(intercepts=both(-1.693359375, -2.4609375), **mar),
    }


@dataclass(frozen=True)
class DGPCoefficients:
    """Structural parameters. Intercepts marked *calibrated* are produced by
    :func:`calibrate_defaults` and frozen here."""

    trt_intercepts: tuple = (-1.8515625, -1.72265625, -1.6875)  # calibrated
    trt_L1: float = 1.5
    trt_L2: float = 1.0
    trt_V: float = 0.0
    # logit P(L1[k]=1) = l1_trans[0] + l1_trans[1]*L1[k-1] + l1_trans[2]*A[k-1]
    l1_trans: tuple = (-0.2, 1.2, -0.6)
    # L2[k] = l2_drift + l2_trans[0]*L2[k-1] + l2_trans[1]*A[k-1] + Normal(0, l2_trans[2])
    l2_trans: tuple = (0.7, -0.5, 0.3)
    l2_drift: float = 1.5
    theta: tuple = (1.0, 0.8, 0.6)
    out_L1: float = 1.5
    out_L2: float = 1.0
    out_V: float = 0.4
    out_sd: float = 1.0
    # Constant mechanism: carry-over probability and L1 keep-probabilities
    persistence: float = 0.2254033307585166
    l1_keep: tuple = (0.31827322335346725, 0.3132096615361948)  # calibrated
    missingness: dict = field(default_factory=_default_missingness)
    target_missing_rate: float = 0.40

    def __post_init__(self):
        if self.out_sd <= 0 or self.l2_trans[2] <= 0:
            raise ValueError("noise standard deviations must be positive")
        if not 0.0 <= self.persistence <= 1.0:
            raise ValueError("persistence probability must lie in [0, 1]")

    def replace(self, **changes) -> "DGPCoefficients":
        return dataclasses.replace(self, **changes)

    def l2_center(self, k: int) -> float:
        """Mean of L2 at occasion ``k`` along the never-treated path without
        carry-over; the treatment model uses L2 centred at this value."""
        m = 0.0
        for _ in range(k):
            m = self.l2_drift + self.l2_trans[0] * m
        return m


@dataclass(frozen=True)
class ScenarioConfig:
    mechanism: str
    n: int = 2000
    seed: int = 20190601
    dgp: DGPCoefficients = field(default_factory=DGPCoefficients)
    target_missing_rate: float = 0.40

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}; expected one of {MECHANISMS}")
        if self.n <= 0:
            raise ValueError("n must be positive")
        if not 0.0 < self.target_missing_rate < 1.0:
            raise ValueError("target missing rate must lie in (0, 1)")

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class _Draws:
    V: np.ndarray
    uL1_0: np.ndarray
    zL2_0: np.ndarray
    uA: np.ndarray
    uL1: np.ndarray
    zL2: np.ndarray
    uP1: np.ndarray
    uP2: np.ndarray
    uR: np.ndarray
    eY: np.ndarray

    @classmethod
    def draw(cls, rng: np.random.Generator, n: int) -> "_Draws":
        # fixed draw order: every mechanism consumes the same numbers
        return cls(
            V=rng.standard_normal(n),
            uL1_0=rng.random(n),
            zL2_0=rng.standard_normal(n),
            uA=rng.random((n, 3)),
            uL1=rng.random((n, 2)),
            zL2=rng.standard_normal((n, 2)),
            uP1=rng.random((n, 2)),
            uP2=rng.random((n, 2)),
            uR=rng.random((n, 2, 2)),
            eY=rng.standard_normal(n),
        )


def _simulate(c: DGPCoefficients, d: _Draws, mechanism: str, forced=None):
    """Run the structural model on pre-drawn noise.

    ``forced`` fixes the treatment path (a regime tuple) for the oracle.
    Returns ``V, L1, L2, A, Y, miss`` with ``miss`` shaped (n, 2 vars, 3)
    (only filled for the Differential mechanism).
    """
    n = len(d.V)
    V = d.V
    L1 = np.empty((n, 3))
    L2 = np.empty((n, 3))
    A = np.zeros((n, 3))
    miss = np.zeros((n, 2, 3), dtype=bool)
    L1[:, 0] = (d.uL1_0 < 0.5).astype(float)
    L2[:, 0] = d.zL2_0
    constant = mechanism == "Constant"
    diff = mechanism == "Differential"
    for k in range(3):
        if k > 0:
            a_prev = A[:, k - 1]
            p1 = expit(c.l1_trans[0] + c.l1_trans[1] * L1[:, k - 1] + c.l1_trans[2] * a_prev)
            new1 = (d.uL1[:, k - 1] < p1).astype(float)
            new2 = c.l2_drift + c.l2_trans[0] * L2[:, k - 1] + c.l2_trans[1] * a_prev + c.l2_trans[2] * d.zL2[:, k - 1]
            if constant:
                new1 = np.where(d.uP1[:, k - 1] < c.persistence, L1[:, k - 1], new1)
                new2 = np.where(d.uP2[:, k - 1] < c.persistence, L2[:, k - 1], new2)
            L1[:, k] = new1
            L2[:, k] = new2
            if diff:
                model = c.missingness["Differential"]
                for var in (0, 1):
                    p = model.prob_missing(var, k, A, L1, L2, 0.0, V)
                    miss[:, var, k] = d.uR[:, var, k - 1] < p
        if forced is not None:
            A[:, k] = forced[k]
            continue
        eta = c.trt_intercepts[k] + c.trt_V * V
        eta = eta + c.trt_L1 * np.where(miss[:, 0, k], 0.0, L1[:, k])
        eta = eta + c.trt_L2 * np.where(miss[:, 1, k], 0.0, L2[:, k] - c.l2_center(k))
        start = (d.uA[:, k] < expit(eta)).astype(float)
        A[:, k] = start if k == 0 else np.maximum(A[:, k - 1], start)
    Y = A @ np.asarray(c.theta) + c.out_L1 * L1[:, 2] + c.out_L2 * L2[:, 2] + c.out_V * V + c.out_sd * d.eY
    return V, L1, L2, A, Y, miss


def generate_full(config: ScenarioConfig, replication: int = 0, rng: np.random.Generator | None = None) -> PanelDataset:
    """Latent, fully observed dataset for one replication.

    Mechanisms other than Constant and Differential share identical latent
    data for a given ``(seed, replication)``.
    """
    rng = rng if rng is not None else rngs.stream(config.seed, replication, rngs.LATENT)
    d = _Draws.draw(rng, config.n)
    V, L1, L2, A, Y, miss = _simulate(config.dgp, d, config.mechanism)
    extra = {}
    if config.mechanism == "Differential":
        extra = {"planned_miss_L1": miss[:, 0, :], "planned_miss_L2": miss[:, 1, :]}
    return PanelDataset.from_arrays(V=V, L1=L1, L2=L2, A=A, Y=Y, **extra)


def missingness_indicators(latent: PanelDataset, config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Boolean array (n, 2 vars, 3 occasions) of cells to mask."""
    c = config.dgp
    mech = config.mechanism
    n = latent.n
    u = rng.random((n, 2, 2))
    miss = np.zeros((n, 2, 3), dtype=bool)
    if mech == "Differential":
        if latent.planned_miss_L1 is None or latent.planned_miss_L2 is None:
            raise MechanismMismatch("Differential mechanism needs the mask drawn during generation")
        miss[:, 0, :] = latent.planned_miss_L1
        miss[:, 1, :] = latent.planned_miss_L2
        return miss
    if mech == "Constant":
        for k in (1, 2):
            miss[:, 1, k] = latent.L2[:, k] == latent.L2[:, k - 1]
            miss[:, 0, k] = (latent.L1[:, k] == latent.L1[:, k - 1]) & (u[:, 0, k - 1] < c.l1_keep[k - 1])
        return miss
    model = c.missingness[mech]
    for k in (1, 2):
        for var in (0, 1):
            p = model.prob_missing(var, k, latent.A, latent.L1, latent.L2, latent.Y, latent.V)
            miss[:, var, k] = u[:, var, k - 1] < p
    return miss


def apply_missingness(
    latent: PanelDataset, config: ScenarioConfig, replication: int = 0, rng: np.random.Generator | None = None
) -> PanelDataset:
    """Mask confounder cells at occasions 1 and 2 per the scenario's mechanism."""
    if not latent.fully_observed():
        raise ValueError("apply_missingness expects a fully observed latent dataset")
    rng = rng if rng is not None else rngs.stream(config.seed, replication, rngs.MASK)
    miss = missingness_indicators(latent, config, rng)
    L1 = np.where(miss[:, 0, :], np.nan, latent.L1)
    L2 = np.where(miss[:, 1, :], np.nan, latent.L2)
    return latent.replace(L1=L1, L2=L2, obs_L1=~miss[:, 0, :], obs_L2=~miss[:, 1, :])


def simulate_replication(config: ScenarioConfig, replication: int):
    """``(latent, masked)`` pair for one replication."""
    latent = generate_full(config, replication)
    return latent, apply_missingness(latent, config, replication)


# ---------------------------------------------------------------- oracle


@dataclass(frozen=True)
class TrueEffects:
    theta: np.ndarray
    se: np.ndarray
    regime_means: dict
    n_oracle: int


def true_effects(config: ScenarioConfig, n_oracle: int = 10**6, seed: int | None = None) -> TrueEffects:
    """g-computation: simulate every subject under the four absorbing
    regimes with shared noise, then read the MSM parameters off the regime
    contrasts ``theta_0 = E[Y^111] - E[Y^011]``, ``theta_1 = E[Y^011] -
    E[Y^001]``, ``theta_2 = E[Y^001] - E[Y^000]``."""
    rng = rngs.stream(config.seed if seed is None else seed, 0, rngs.ORACLE)
    d = _Draws.draw(rng, n_oracle)
    ys = {}
    for regime in REGIMES:
        ys[regime] = _simulate(config.dgp, d, config.mechanism, forced=regime)[4]
    contrasts = np.stack(
        [
            ys[(1, 1, 1)] - ys[(0, 1, 1)],
            ys[(0, 1, 1)] - ys[(0, 0, 1)],
            ys[(0, 0, 1)] - ys[(0, 0, 0)],
        ]
    )
    theta = contrasts.mean(axis=1)
    se = contrasts.std(axis=1, ddof=1) / np.sqrt(n_oracle)
    # contrasts with zero spread still carry the regime-mean noise
    means = {r: float(y.mean()) for r, y in ys.items()}
    return TrueEffects(theta=theta, se=se, regime_means=means, n_oracle=n_oracle)


def analytic_regime_means(c: DGPCoefficients, mechanism: str = "MCAR") -> dict:
    """Closed-form ``E[Y^a]`` for each regime by propagating the L1 Markov
    chain probabilities and the L2 means under forced treatment."""
    pi = c.persistence if mechanism == "Constant" else 0.0
    out = {}
    for regime in REGIMES:
        p1, m2 = 0.5, 0.0
        for k in (1, 2):
            a = regime[k - 1]
            q1 = expit(c.l1_trans[0] + c.l1_trans[1] + c.l1_trans[2] * a)
            q0 = expit(c.l1_trans[0] + c.l1_trans[2] * a)
            p1 = pi * p1 + (1 - pi) * (p1 * q1 + (1 - p1) * q0)
            m2 = pi * m2 + (1 - pi) * (c.l2_drift + c.l2_trans[0] * m2 + c.l2_trans[1] * a)
        out[regime] = float(np.dot(c.theta, regime) + c.out_L1 * p1 + c.out_L2 * m2)
    return out


def analytic_effects(c: DGPCoefficients, mechanism: str = "MCAR") -> np.ndarray:
    m = analytic_regime_means(c, mechanism)
    return np.array(
        [m[(1, 1, 1)] - m[(0, 1, 1)], m[(0, 1, 1)] - m[(0, 0, 1)], m[(0, 0, 1)] - m[(0, 0, 0)]]
    )


# ----------------------------------------------------------- calibration


def calibrate_intercept(rate_fn, target: float, bracket=(-12.0, 12.0), tol: float = 0.005, max_iter: int = 40) -> float:
    """Bisection on an intercept until ``rate_fn(intercept)`` is within
    ``tol`` of ``target``. ``rate_fn`` must be nondecreasing."""
    if not 0.01 < target < 0.99:
        raise ValueError("target rate must lie in (0.01, 0.99)")
    lo, hi = bracket
    r_lo, r_hi = rate_fn(lo), rate_fn(hi)
    if not r_lo <= target <= r_hi:
        raise CalibrationFailed(f"target {target} outside achievable range [{r_lo:.4f}, {r_hi:.4f}]")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        r = rate_fn(mid)
        if abs(r - target) < tol:
            return mid
        if r < target:
            lo = mid
        else:
            hi = mid
    raise CalibrationFailed(f"no intercept within {tol} of {target} after {max_iter} bisection steps")


def _initiation_rate(c, d, mechanism, k):
    A = _simulate(c, d, mechanism)[3]
    at_risk = np.ones(len(d.V), dtype=bool) if k == 0 else A[:, k - 1] == 0
    return float(A[at_risk, k].mean())


def incomplete_rate(miss: np.ndarray, k: int) -> float:
    return float((miss[:, 0, k] | miss[:, 1, k]).mean())


def calibrate_defaults(
    c: DGPCoefficients | None = None,
    initiation: float = 0.30,
    target_missing_rate: float = 0.40,
    n: int = 100_000,
    seed: int = 7,
    tol: float = 0.001,
) -> DGPCoefficients:
    """Recompute every calibrated intercept.

    Treatment intercepts hit ``initiation`` among the untreated at each
    occasion; missingness intercepts (shared by L1 and L2 at an occasion)
    make the fraction of subjects with at least one missing confounder at
    occasions 1 and 2 equal to ``target_missing_rate``.
    """
    c = c or DGPCoefficients()
    d = _Draws.draw(rngs.stream(seed, 0, rngs.CALIBRATION), n)
    mrng = rngs.stream(seed, 1, rngs.CALIBRATION)
    alphas = list(c.trt_intercepts)
    for k in range(3):

        def rate(a, k=k):
            alphas[k] = a
            return _initiation_rate(c.replace(trt_intercepts=tuple(alphas)), d, "MCAR", k)

        alphas[k] = calibrate_intercept(rate, initiation, tol=tol)
    c = c.replace(trt_intercepts=tuple(alphas))

    per_var = 1.0 - np.sqrt(1.0 - target_missing_rate)
    c = c.replace(persistence=float(per_var), target_missing_rate=target_missing_rate)
    models = dict(c.missingness)
    mask_u = mrng.random((n, 2, 2))
    for mech, model in list(models.items()):
        ints = [list(model.intercepts[0]), list(model.intercepts[1])]
        for k in (1, 2):

            def rate(b, k=k, mech=mech):
                ints[0][k - 1] = ints[1][k - 1] = b
                m = dataclasses.replace(models[mech], intercepts=(tuple(ints[0]), tuple(ints[1])))
                trial = c.replace(missingness={**models, mech: m})
                if mech == "Differential":
                    miss = _simulate(trial, d, mech)[5]
                else:
                    V, L1, L2, A, Y, _ = _simulate(trial, d, "MCAR")
                    miss = np.zeros((n, 2, 3), dtype=bool)
                    for var in (0, 1):
                        miss[:, var, k] = mask_u[:, var, k - 1] < m.prob_missing(var, k, A, L1, L2, Y, V)
                return incomplete_rate(miss, k)

            rate(calibrate_intercept(rate, target_missing_rate, tol=tol))
        models[mech] = dataclasses.replace(model, intercepts=(tuple(ints[0]), tuple(ints[1])))
    c = c.replace(missingness=models)

    V, L1, L2, A, Y, _ = _simulate(c, d, "Constant")
    keep = []
    for k in (1, 2):
        eq1 = L1[:, k] == L1[:, k - 1]
        miss2 = L2[:, k] == L2[:, k - 1]

        def rate(logit_keep, k=k, eq1=eq1, miss2=miss2):
            m1 = eq1 & (mask_u[:, 0, k - 1] < expit(logit_keep))
            return float((m1 | miss2).mean())

        keep.append(float(expit(calibrate_intercept(rate, target_missing_rate, tol=tol))))
    return c.replace(l1_keep=tuple(keep))
