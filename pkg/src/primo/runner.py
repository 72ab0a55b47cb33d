"""Epoch-based IGW bandit algorithms with imputed covariates, and regret traces.

Within an epoch the policy is fixed, so every round of the epoch is
simulated in one vectorised block. Each epoch s >= 2 fits the reward model
on the rows of epoch s - 1 only; the first epoch plays uniformly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calibration import InsufficientDataError, calibrate
from .core import Dataset, EpochSchedule, Purpose, derive_stream, split_into_epochs
from .elasticity import RateSpec, rate_value
from .environment import EnvironmentSpec, instant_regrets, sample_rounds
from .function_classes import fit_erm_squared, propensity_map
from .policy import igw_probabilities, sample_actions

__all__ = [
    "ALGORITHMS",
    "BASELINES",
    "GammaSchedule",
    "RunConfig",
    "RegretTrace",
    "AlgorithmSummary",
    "gamma_theory",
    "theory_big_gamma",
    "theory_upsilon",
    "gamma_practical",
    "run_algorithm",
    "run_primo",
    "run_primo_cal",
    "run_baseline",
    "aggregate",
]

BASELINES = ("uniform", "drop-missing", "oracle-covariate", "clairvoyant")
ALGORITHMS = ("primo", "primo-cal") + BASELINES


@dataclass(frozen=True)
class GammaSchedule:
    """Exploration parameter per epoch.

    ``practical``: gamma_s = c * sqrt(K * 2^(s * rho)).
    ``theory``: gamma_s = sqrt(K) / (2 * Gamma_s) with Gamma_s built from the
    rate table, the elasticity (or, with ``calibrated``, the calibration
    error term) and the lower bound ``upsilon``.
    """

    n_actions: int
    mode: str = "practical"
    c: float = 1.0
    rho: float = 0.5
    # theory inputs
    lam: float = 1.0
    delta: float = 0.1
    reward_rate: RateSpec = RateSpec("linear", 1.0)
    elasticity: float = 0.0
    upsilon: float = 1.0
    calibrated: bool = False
    lipschitz_z: float = 1.0
    eps0: float = 0.1
    delta0: float = 0.0
    tau: float = 0.0
    omega0: float = 0.0
    propensity_rate: RateSpec = RateSpec("linear", 1.0)
    cover_d: float = 1.0

    def __post_init__(self):
        if self.n_actions < 2:
            raise ValueError("need at least two actions")
        if self.mode not in ("practical", "theory"):
            raise ValueError(f"unknown gamma mode {self.mode!r}")
        if not self.c > 0 or not 0 < self.rho <= 1:
            raise ValueError("practical schedule needs c > 0 and rho in (0, 1]")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.elasticity < 0 or self.lam < 0:
            raise ValueError("elasticity and lambda must be nonnegative")

    def __call__(self, s: int) -> float:
        if self.mode == "practical":
            return gamma_practical(s, self)
        return gamma_theory(s, self)


def _log_guard(a: float, r: float) -> float:
    """log2(4a / r), floored at 2."""
    if a <= 0:
        return 2.0
    return max(math.log2(4.0 * a / r), 2.0)


def theory_upsilon(s: int, sch: GammaSchedule) -> float:
    d = sch.cover_d
    q = rate_value(RateSpec("centered", sch.delta0, d), 2.0 ** (s / 2 - 1.5))
    srate = rate_value(sch.propensity_rate, 2.0 ** (s - 3))
    half = 2.0 ** ((s - 3) / 2)
    inner = (
        sch.delta0 ** (d / (d + 1)) * 2.0 ** (-2 * (s - 3) / (d + 2))
        + (1 + sch.tau) * math.sqrt(2 * s * s * math.log(_log_guard(1 + sch.tau, q) / sch.delta)) / half
        + srate
        + math.log(2 * s * s * _log_guard(2.0, srate) / sch.delta) / half
    )
    return sch.lipschitz_z / sch.eps0 * inner + sch.lipschitz_z * sch.omega0


def theory_big_gamma(s: int, sch: GammaSchedule) -> float:
    if s < 2:
        raise ValueError("the theory schedule starts at epoch 2")
    n = 2.0 ** (s - 2)
    r = rate_value(sch.reward_rate, n)
    m = max(4.0, sch.lam)
    log_a = math.log(4 * s * s * _log_guard(sch.lam, r) / sch.delta)
    imputation = theory_upsilon(s, sch) if sch.calibrated else math.sqrt(sch.elasticity)
    if sch.upsilon <= 0:
        raise ValueError("upsilon must be positive for the theory schedule")
    value = (
        (m + 1) * r
        + imputation
        + 4 * m * math.sqrt(2 * log_a / n)
        + log_a / (r * n)
        + 4 / math.sqrt(sch.upsilon) * math.sqrt(math.log(8 * s * s / sch.delta) / n)
    )
    if not math.isfinite(value) or value <= 0:
        raise ValueError(f"non-finite or non-positive Gamma at epoch {s}")
    return value


def gamma_theory(s: int, sch: GammaSchedule) -> float:
    return math.sqrt(sch.n_actions) / (2 * theory_big_gamma(s, sch))


def gamma_practical(s: int, sch: GammaSchedule) -> float:
    return sch.c * math.sqrt(sch.n_actions * 2.0 ** (s * sch.rho))


@dataclass(frozen=True)
class RunConfig:
    horizon: int
    gamma: GammaSchedule
    reward_norm_bound: float = 3.0
    propensity_lifts: tuple[str, ...] = ()
    radius_scale: float = 1.0
    schedule: EpochSchedule = field(default_factory=EpochSchedule)


@dataclass
class RegretTrace:
    algo: str
    replication: int
    epoch: np.ndarray
    gamma: np.ndarray
    instant: np.ndarray
    cumulative: np.ndarray
    missing: np.ndarray
    fallback_epochs: tuple[int, ...] = ()
    fit_rounds: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.instant.size

    @property
    def rounds(self) -> np.ndarray:
        return np.arange(1, self.horizon + 1)

    def tail_mean(self, fraction: float = 0.25) -> float:
        k = max(1, int(round(self.horizon * fraction)))
        return float(self.instant[-k:].mean())


def run_algorithm(spec: EnvironmentSpec, cfg: RunConfig, seed: int, replication: int, algo: str) -> RegretTrace:
    if algo not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algo!r}; expected one of {ALGORITHMS}")
    T = cfg.horizon
    ranges = split_into_epochs(T, cfg.schedule)
    K = spec.n_actions
    rmap = spec.reward_map
    pmap = propensity_map(spec.d_x, cfg.propensity_lifts)
    env_streams: dict = {}
    policy_rng = derive_stream(seed, replication, Purpose.POLICY).rng
    shuffle = derive_stream(seed, replication, Purpose.SHUFFLE)

    epoch = np.empty(T, dtype=np.int64)
    gammas = np.zeros(T)
    instant = np.empty(T)
    missing = np.empty(T, dtype=np.int8)
    fallbacks: list[int] = []
    fit_rounds: dict[int, np.ndarray] = {}
    prev: Dataset | None = None

    for s, (lo, hi) in enumerate(ranges, start=1):
        n = hi - lo
        batch = sample_rounds(spec, seed, replication, n, env_streams)
        true_vals = spec.f_star.action_values(batch.X, batch.z)
        imputer = spec.g_tilde
        f_hat = None
        gamma = 0.0

        if algo == "clairvoyant":
            P = np.zeros((n, K))
            P[np.arange(n), np.argmax(true_vals, axis=1)] = 1.0
        else:
            if s >= 2 and algo != "uniform":
                train = prev.observed_only() if algo == "drop-missing" else prev
                if len(train) == 0:
                    fallbacks.append(s)
                else:
                    Phi = rmap.reward_features(train.contexts, train.covariate_used, train.actions)
                    f_hat, _ = fit_erm_squared(
                        Phi, train.rewards, cfg.reward_norm_bound, feature_map=rmap, clip=(0.0, 1.0)
                    )
                    fit_rounds[s] = train.rounds
                    gamma = cfg.gamma(s)
                if algo == "primo-cal":
                    try:
                        res = calibrate(
                            prev, spec.g_tilde, spec.delta0, shuffle,
                            propensity_map=pmap, eps0=spec.eps0, radius_scale=cfg.radius_scale,
                        )
                        imputer = res.g_hat
                    except InsufficientDataError:
                        fallbacks.append(s)
            if algo == "oracle-covariate":
                z_used = batch.z
            else:
                z_used = np.where(batch.b == 1, batch.z, imputer.predict_context(batch.X))
            if f_hat is None:
                P = np.full((n, K), 1.0 / K)
            else:
                P, _ = igw_probabilities(f_hat.action_values(batch.X, z_used), gamma)

        if algo == "clairvoyant":
            z_used = batch.z
        actions = sample_actions(P, policy_rng)
        rewards = true_vals[np.arange(n), actions] + batch.xi
        epoch[lo:hi] = s
        gammas[lo:hi] = gamma
        instant[lo:hi] = instant_regrets(true_vals, P)
        missing[lo:hi] = 1 - batch.b
        prev = Dataset(
            batch.X, batch.b, z_used, actions, rewards,
            z_true=batch.z, rounds=np.arange(lo + 1, hi + 1), epoch_index=s,
        )

    return RegretTrace(
        algo, replication, epoch, gammas, instant, np.cumsum(instant), missing,
        tuple(sorted(set(fallbacks))), fit_rounds,
    )


def run_primo(spec: EnvironmentSpec, cfg: RunConfig, seed: int, replication: int = 0) -> RegretTrace:
    return run_algorithm(spec, cfg, seed, replication, "primo")


def run_primo_cal(spec: EnvironmentSpec, cfg: RunConfig, seed: int, replication: int = 0) -> RegretTrace:
    return run_algorithm(spec, cfg, seed, replication, "primo-cal")


def run_baseline(spec: EnvironmentSpec, cfg: RunConfig, kind: str, seed: int, replication: int = 0) -> RegretTrace:
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINES}")
    return run_algorithm(spec, cfg, seed, replication, kind)


@dataclass
class AlgorithmSummary:
    algo: str
    horizon: int
    replications: list[int]
    mean: np.ndarray
    median: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    final_by_replication: np.ndarray
    tail_by_replication: np.ndarray

    @property
    def iqr(self) -> np.ndarray:
        return self.q75 - self.q25

    def final_stats(self) -> dict:
        f = self.final_by_replication
        return {
            "mean": float(f.mean()),
            "std": float(f.std(ddof=1)) if f.size > 1 else 0.0,
            "median": float(np.median(f)),
            "q25": float(np.quantile(f, 0.25)),
            "q75": float(np.quantile(f, 0.75)),
            "min": float(f.min()),
            "max": float(f.max()),
        }


def aggregate(traces: list[RegretTrace], tail_fraction: float = 0.25) -> dict[str, AlgorithmSummary]:
    """Per-round cumulative-regret statistics across replications, per algorithm."""
    if not traces:
        raise ValueError("nothing to aggregate")
    horizons = {t.horizon for t in traces}
    if len(horizons) != 1:
        raise ValueError(f"traces have mismatched horizons {sorted(horizons)}")
    out = {}
    for algo in dict.fromkeys(t.algo for t in traces):
        group = sorted((t for t in traces if t.algo == algo), key=lambda t: t.replication)
        C = np.stack([t.cumulative for t in group])
        out[algo] = AlgorithmSummary(
            algo,
            C.shape[1],
            [t.replication for t in group],
            C.mean(axis=0),
            np.median(C, axis=0),
            np.quantile(C, 0.25, axis=0),
            np.quantile(C, 0.75, axis=0),
            C[:, -1].copy(),
            np.array([t.tail_mean(tail_fraction) for t in group]),
        )
    return out
