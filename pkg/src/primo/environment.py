"""Synthetic ground truth: contexts, latent covariates, missingness, rewards.

Data-generating process per round::

    x   ~ context law on [-x_max, x_max]^d_x
    z*  = g*(x) + eta,          eta zero-mean, |eta| <= tau, sd <= omega0
    b   ~ missingness mechanism (MCAR / MAR / MNAR)
    r   = f*(x, z*, a) + xi,    xi ~ U[-lambda, lambda]
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .core import Context, Purpose, RandomStream, derive_stream
from .function_classes import REWARD_TERMS, FeatureMap, LinearModel, covariate_map, propensity_map, reward_map

__all__ = [
    "MCAR",
    "MAR",
    "MNAR",
    "EnvironmentSpec",
    "EnvRound",
    "EnvBatch",
    "SpecError",
    "sample_contexts",
    "sample_eta",
    "sample_rounds",
    "sample_round",
    "realize_reward",
    "realize_rewards",
    "oracle_action",
    "instant_regret",
    "instant_regrets",
    "population_moment",
    "population_distance",
    "make_pretrained",
    "default_ground_truth",
    "build_environment",
]

MC_SAMPLES = 100_000


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class MCAR:
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise SpecError("MCAR probability must lie in [0, 1]")

    @property
    def name(self) -> str:
        return "mcar"


@dataclass(frozen=True)
class MAR:
    propensity: LinearModel

    @property
    def name(self) -> str:
        return "mar"


@dataclass(frozen=True)
class MNAR:
    """b = 1{z* <= threshold}, each bit flipped with probability ``flip_prob``."""

    threshold: float
    flip_prob: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise SpecError("flip probability must lie in [0, 1]")

    @property
    def name(self) -> str:
        return "mnar"


Missingness = Union[MCAR, MAR, MNAR]


@dataclass(frozen=True)
class EnvironmentSpec:
    d_x: int
    n_actions: int
    f_star: LinearModel
    g_star: LinearModel
    g_tilde: LinearModel
    missingness: Missingness
    eta_bound: float = 0.0
    eta_std: float = 0.0
    xi_bound: float = 0.0
    eps0: float = 0.1
    delta0: float = 1.0
    context_law: str = "uniform"
    x_max: float = 1.0
    context_std: float = 0.5

    def __post_init__(self) -> None:
        if self.d_x < 1:
            raise SpecError("d_x must be at least 1")
        if self.n_actions < 2:
            raise SpecError("need at least two actions")
        if self.eta_bound < 0 or self.eta_std < 0 or self.xi_bound < 0:
            raise SpecError("noise bounds must be nonnegative")
        if not 0.0 < self.eps0 <= 1.0:
            raise SpecError("eps0 must lie in (0, 1]")
        if self.delta0 < 0:
            raise SpecError("delta0 must be nonnegative")
        if self.context_law not in ("uniform", "gaussian"):
            raise SpecError(f"unknown context law {self.context_law!r}")
        if not self.x_max > 0:
            raise SpecError("x_max must be positive")
        fm = self.f_star.feature_map
        if fm is None or fm.kind != "reward" or fm.d_x != self.d_x or fm.n_actions != self.n_actions:
            raise SpecError("f_star must use a reward map matching d_x and n_actions")
        if self.f_star.clip != (0.0, 1.0):
            raise SpecError("f_star must be clipped to [0, 1]")
        for name in ("g_star", "g_tilde"):
            m = getattr(self, name).feature_map
            if m is None or m.kind != "covariate" or m.d_x != self.d_x:
                raise SpecError(f"{name} must use a covariate map with d_x={self.d_x}")
        if self.g_star.feature_map != self.g_tilde.feature_map:
            raise SpecError("g_star and g_tilde must share a feature map")
        if isinstance(self.missingness, MAR):
            e = self.missingness.propensity
            if e.feature_map is None or e.feature_map.d_x != self.d_x:
                raise SpecError("propensity model must use a context map with matching d_x")
            if e.clip is None or e.clip[0] < self.eps0 or e.clip[1] > 1.0:
                raise SpecError("propensity must be clipped into [eps0, 1]")

    @property
    def reward_map(self) -> FeatureMap:
        return self.f_star.feature_map

    @property
    def covariate_map(self) -> FeatureMap:
        return self.g_star.feature_map


@dataclass(frozen=True)
class EnvRound:
    context: Context
    z_true: float
    b: int
    reward_noise: float


@dataclass(frozen=True)
class EnvBatch:
    """A block of i.i.d. rounds stored column-wise."""

    X: np.ndarray
    z: np.ndarray
    b: np.ndarray
    xi: np.ndarray

    def __len__(self) -> int:
        return self.X.shape[0]

    def round(self, i: int) -> EnvRound:
        return EnvRound(Context(self.X[i]), float(self.z[i]), int(self.b[i]), float(self.xi[i]))


def sample_contexts(spec: EnvironmentSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    if spec.context_law == "uniform":
        return rng.uniform(-spec.x_max, spec.x_max, size=(n, spec.d_x))
    # truncated Gaussian on the box, by rejection
    out = rng.normal(0.0, spec.context_std, size=(n, spec.d_x))
    bad = np.any(np.abs(out) > spec.x_max, axis=1)
    while bad.any():
        k = int(bad.sum())
        out[bad] = rng.normal(0.0, spec.context_std, size=(k, spec.d_x))
        bad = np.any(np.abs(out) > spec.x_max, axis=1)
    return out


def sample_eta(spec: EnvironmentSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """Scaled sum of three U(-1,1) draws (sd = eta_std), truncated to [-tau, tau]."""
    tau, omega = spec.eta_bound, spec.eta_std
    if tau == 0.0 or omega == 0.0:
        return np.zeros(n)

    def draw(k):
        return omega * rng.uniform(-1.0, 1.0, size=(k, 3)).sum(axis=1)

    eta = draw(n)
    bad = np.abs(eta) > tau
    while bad.any():
        eta[bad] = draw(int(bad.sum()))
        bad = np.abs(eta) > tau
    return eta


def _observe_bits(spec: EnvironmentSpec, X, z, u) -> np.ndarray:
    m = spec.missingness
    if isinstance(m, MCAR):
        return (u < m.p).astype(np.int8)
    if isinstance(m, MAR):
        return (u < m.propensity.predict_context(X)).astype(np.int8)
    # MNAR: one uniform per round decides the flip
    base = z <= m.threshold
    return (base ^ (u < m.flip_prob)).astype(np.int8)


def sample_rounds(
    spec: EnvironmentSpec,
    seed: int,
    replication: int,
    n: int,
    streams: dict | None = None,
) -> EnvBatch:
    """Draw ``n`` rounds. ``streams`` caches the per-purpose generators
    so successive calls continue the same sequences."""
    if streams is None:
        streams = {}
    for p in (Purpose.CONTEXT, Purpose.COVARIATE_NOISE, Purpose.REWARD_NOISE, Purpose.MISSINGNESS):
        if p not in streams:
            streams[p] = derive_stream(seed, replication, p)
    X = sample_contexts(spec, streams[Purpose.CONTEXT].rng, n)
    z = spec.g_star.predict_context(X) + sample_eta(spec, streams[Purpose.COVARIATE_NOISE].rng, n)
    xi = streams[Purpose.REWARD_NOISE].rng.uniform(-spec.xi_bound, spec.xi_bound, size=n)
    u = streams[Purpose.MISSINGNESS].rng.random(n)
    b = _observe_bits(spec, X, z, u)
    return EnvBatch(X, z, b, xi)


def sample_round(spec: EnvironmentSpec, stream: RandomStream) -> EnvRound:
    """Draw one round using a single stream for every component."""
    rng = stream.rng
    X = sample_contexts(spec, rng, 1)
    z = spec.g_star.predict_context(X) + sample_eta(spec, rng, 1)
    xi = rng.uniform(-spec.xi_bound, spec.xi_bound, size=1)
    b = _observe_bits(spec, X, z, rng.random(1))
    return EnvBatch(X, z, b, xi).round(0)


def _check_action(spec, action):
    a = np.asarray(action)
    if np.any((a < 0) | (a >= spec.n_actions)):
        raise ValueError(f"action out of range [0, {spec.n_actions})")


def realize_reward(spec: EnvironmentSpec, rnd: EnvRound, action: int) -> float:
    _check_action(spec, action)
    v = spec.f_star.action_values(rnd.context.values[None, :], [rnd.z_true])[0, action]
    return float(v + rnd.reward_noise)


def realize_rewards(spec: EnvironmentSpec, batch: EnvBatch, actions) -> np.ndarray:
    actions = np.asarray(actions, dtype=np.int64)
    _check_action(spec, actions)
    v = spec.f_star.action_values(batch.X, batch.z)
    return v[np.arange(len(batch)), actions] + batch.xi


def oracle_action(spec: EnvironmentSpec, rnd: EnvRound) -> int:
    v = spec.f_star.action_values(rnd.context.values[None, :], [rnd.z_true])[0]
    return int(np.argmax(v))


def instant_regrets(true_values: np.ndarray, probabilities: np.ndarray) -> np.ndarray:
    """max_a f*(.,a) - sum_a p(a) f*(.,a) row-wise."""
    return true_values.max(axis=1) - np.einsum("ij,ij->i", probabilities, true_values)


def instant_regret(spec: EnvironmentSpec, rnd: EnvRound, policy_dist) -> float:
    p = np.asarray(getattr(policy_dist, "probabilities", policy_dist), dtype=float)
    if p.shape != (spec.n_actions,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("policy distribution must be a probability vector over the actions")
    v = spec.f_star.action_values(rnd.context.values[None, :], [rnd.z_true])
    return float(instant_regrets(v, p[None, :])[0])


# -- construction helpers ---------------------------------------------------


def population_moment(spec_like, fmap: FeatureMap, rng: np.random.Generator, n: int = MC_SAMPLES) -> np.ndarray:
    """Monte-Carlo E[psi(x) psi(x)'] under the context law."""
    P = fmap.context_features(sample_contexts(spec_like, rng, n))
    return P.T @ P / n


def population_distance(a: LinearModel, b: LinearModel, spec_like, rng, n: int = MC_SAMPLES) -> tuple[float, float]:
    """Monte-Carlo ||a - b||_2 under the context law and its standard error."""
    X = sample_contexts(spec_like, rng, n)
    d2 = (a.predict_context(X, clip=False) - b.predict_context(X, clip=False)) ** 2
    m = float(d2.mean())
    dist = np.sqrt(m)
    se = float(d2.std(ddof=1) / np.sqrt(n)) / (2 * dist) if dist > 0 else 0.0
    return float(dist), se


def make_pretrained(g_star: LinearModel, direction, distance: float, moment: np.ndarray) -> LinearModel:
    """g_tilde = g* + c * direction with ||g_tilde - g*||_2 = distance under ``moment``."""
    v = np.asarray(direction, dtype=float).reshape(-1)
    if v.size != g_star.weights.size:
        raise SpecError("perturbation direction has the wrong length")
    if distance < 0:
        raise SpecError("perturbation scale must be nonnegative")
    if distance == 0:
        return g_star.with_weights(g_star.weights.copy())
    norm = float(np.sqrt(v @ moment @ v))
    if norm == 0:
        raise SpecError("perturbation direction has zero population norm")
    return g_star.with_weights(g_star.weights + v * (distance / norm))


@dataclass(frozen=True)
class _LawOnly:
    d_x: int
    context_law: str
    x_max: float
    context_std: float


def default_ground_truth(
    d_x: int,
    n_actions: int,
    x_max: float,
    structure_seed: int = 0,
    *,
    covariate_range: float = 0.3,
    slope: float = 1.3,
    bump: float = 0.1,
    context_effect: float = 0.1,
    interaction: float = 0.03,
) -> dict:
    """A reproducible (f*, g*, e*, perturbation direction) weight set.

    g* ranges over [-covariate_range, covariate_range] on the box. Action a
    has covariate slope alpha_a spread over [-slope, slope] and an intercept
    bump that favours the flatter middle actions near z = 0, so the optimal
    action changes several times along z. Context effects and interactions
    have total (L1) size ``context_effect`` and ``interaction``.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=structure_seed, spawn_key=(d_x, n_actions)))

    def l1_scaled(size, total):
        v = rng.uniform(-1.0, 1.0, size)
        return v * (total / (np.abs(v).sum() * x_max))

    g = np.concatenate([[0.0], l1_scaled(d_x, covariate_range)])
    alphas = np.linspace(-slope, slope, n_actions)
    bumps = bump * (1.0 - (alphas / slope) ** 2) if slope > 0 else np.zeros(n_actions)
    blocks = []
    for a in range(n_actions):
        blocks.append(np.concatenate(
            [[0.5 + bumps[a]], l1_scaled(d_x, context_effect), [alphas[a]], l1_scaled(d_x, interaction)]
        ))
    f = np.concatenate(blocks)
    e = np.concatenate([[0.6], l1_scaled(d_x, 0.3)])
    direction = np.concatenate([[1.0], l1_scaled(d_x, 0.5)])
    return {"f_star": f, "g_star": g, "e_star": e, "direction": direction}


def build_environment(
    *,
    d_x: int = 3,
    n_actions: int = 4,
    structure_seed: int = 0,
    context_law: str = "uniform",
    x_max: float = 1.0,
    context_std: float = 0.5,
    eta_bound: float = 0.0,
    eta_std: float | None = None,
    xi_bound: float = 0.5,
    eps0: float = 0.1,
    delta0: float = 0.5,
    perturbation_scale: float = 0.3,
    perturbation_direction=None,
    missingness: str = "mar",
    mcar_p: float = 0.5,
    mnar_threshold: float | None = None,
    mnar_flip_prob: float = 0.1,
    reward_terms=("intercept", "z"),
    reward_norm_bound: float = 3.0,
    covariate_lifts=(),
    propensity_lifts=(),
    f_star=None,
    g_star=None,
    e_star=None,
    propensity_range: tuple[float, float] | None = None,
    ground_truth: dict | None = None,
    check_delta0: bool = True,
) -> EnvironmentSpec:
    """Assemble an :class:`EnvironmentSpec` from scalar settings.

    Explicit weight vectors override the generated defaults. The pre-trained
    model is g* shifted along ``perturbation_direction`` to the requested
    population L2 distance; that distance is then checked against delta0.
    """
    if eta_std is None:
        eta_std = eta_bound / 3.0
    law = _LawOnly(d_x, context_law, x_max, context_std)
    cmap = covariate_map(d_x, covariate_lifts)
    pmap = propensity_map(d_x, propensity_lifts)
    rmap = reward_map(d_x, n_actions, reward_terms)
    gen = default_ground_truth(d_x, n_actions, x_max, structure_seed, **(ground_truth or {}))
    if propensity_range is not None:
        lo, hi = propensity_range
        if not eps0 <= lo <= hi <= 1.0:
            raise SpecError("propensity range must satisfy eps0 <= low <= high <= 1")
        # rescale the generated slopes so e*(x) spans [lo, hi] on the box
        e = gen["e_star"]
        spread = np.abs(e[1:]).sum() * x_max
        gen["e_star"] = np.concatenate([[0.5 * (lo + hi)], e[1:] * (0.5 * (hi - lo) / spread)])

    def fit_len(v, size, name):
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.size > size:
            raise SpecError(f"{name} has {v.size} weights, map emits {size}")
        return np.concatenate([v, np.zeros(size - v.size)])

    if f_star is None:
        full = reward_map(d_x, n_actions)
        sizes = {"intercept": 1, "x": d_x, "z": 1, "zx": d_x}
        starts = dict(zip(REWARD_TERMS, np.cumsum([0] + [sizes[t] for t in REWARD_TERMS[:-1]])))
        cols = np.concatenate([np.arange(starts[t], starts[t] + sizes[t]) for t in rmap.terms])
        # generated blocks use the full term list; keep the chosen terms
        f_star = gen["f_star"].reshape(n_actions, full.block_dim)[:, cols].reshape(-1)
    f_model = LinearModel(fit_len(f_star, rmap.output_dim, "f_star"), rmap, reward_norm_bound, (0.0, 1.0))
    g_model = LinearModel(fit_len(gen["g_star"] if g_star is None else g_star, cmap.output_dim, "g_star"), cmap)

    construction = derive_stream(structure_seed, 0, Purpose.CONSTRUCTION).rng
    moment = population_moment(law, cmap, construction)
    direction = gen["direction"] if perturbation_direction is None else perturbation_direction
    g_tilde = make_pretrained(g_model, fit_len(direction, cmap.output_dim, "perturbation_direction"),
                              perturbation_scale, moment)

    if missingness == "mcar":
        mech: Missingness = MCAR(mcar_p)
    elif missingness == "mar":
        e_w = fit_len(gen["e_star"] if e_star is None else e_star, pmap.output_dim, "e_star")
        mech = MAR(LinearModel(e_w, pmap, clip=(eps0, 1.0)))
    elif missingness == "mnar":
        if mnar_threshold is None:
            tmp = EnvironmentSpec(d_x, n_actions, f_model, g_model, g_tilde, MCAR(1.0), eta_bound, eta_std,
                                  xi_bound, eps0, delta0, context_law, x_max, context_std)
            X = sample_contexts(tmp, construction, MC_SAMPLES)
            z = g_model.predict_context(X) + sample_eta(tmp, construction, MC_SAMPLES)
            mnar_threshold = float(np.median(z))
        mech = MNAR(float(mnar_threshold), mnar_flip_prob)
    else:
        raise SpecError(f"unknown missingness mode {missingness!r}")

    spec = EnvironmentSpec(d_x, n_actions, f_model, g_model, g_tilde, mech, eta_bound, eta_std, xi_bound,
                           eps0, delta0, context_law, x_max, context_std)
    if check_delta0:
        dist, se = population_distance(g_tilde, g_model, law, construction)
        if dist > delta0 + 3 * se + 1e-12:
            raise SpecError(
                f"pre-trained model is {dist:.4g} from g* in L2, exceeding delta0={delta0:.4g}"
            )
    return spec
