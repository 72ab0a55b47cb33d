"""Model elasticity of a covariate model, its lower bound upsilon, and
closed-form critical-radius rates.

Elasticity of g over the reward class {theta : ||theta|| <= B}:

    sup_{theta, a} E[(theta' (phi(x, z*, a) - phi(x, g(x), a)))^2]
        = B^2 * max_a lambda_max(E[dphi_a dphi_a'])
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import RandomStream
from .environment import EnvironmentSpec, sample_contexts, sample_eta
from .function_classes import FeatureMap, LinearModel, power_iteration

__all__ = [
    "ElasticityEstimate",
    "RateSpec",
    "RADIUS_KINDS",
    "estimate_elasticity",
    "estimate_upsilon",
    "upsilon_per_action",
    "radius_rate",
    "rate_value",
    "lipschitz_in_z",
]

MIN_SAMPLES = 1000
SUP_DRAWS = 512


@dataclass(frozen=True)
class ElasticityEstimate:
    value: float
    method: str
    samples_used: int
    per_action_values: np.ndarray


def _draw_xz(spec: EnvironmentSpec, n: int, stream: RandomStream):
    if n < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {n}")
    X = sample_contexts(spec, stream.rng, n)
    z = spec.g_star.predict_context(X) + sample_eta(spec, stream.rng, n)
    return X, z


def _block_differences(fmap: FeatureMap, X, z, zg) -> np.ndarray:
    d = fmap.base_features(X, z) - fmap.base_features(X, zg)
    if not np.all(np.isfinite(d)):
        raise ValueError("non-finite features")
    return d


def estimate_elasticity(
    spec: EnvironmentSpec,
    reward_class: tuple[FeatureMap, float],
    g_model: LinearModel,
    n_samples: int,
    stream: RandomStream,
    *,
    method: str = "closed-form-eigen",
    feature_fn: Callable | None = None,
) -> ElasticityEstimate:
    """Monte-Carlo elasticity of ``g_model`` for the norm-ball reward class.

    ``closed-form-eigen`` uses B^2 * lambda_max of the per-action second
    moment of feature differences. ``monte-carlo-sup`` maximises over 512
    random directions on the radius-B sphere, restricted to the feature
    columns that vary with z, and is therefore a lower bound; it accepts
    any ``feature_fn(X, z, a) -> (n, p)``.
    """
    fmap, B = reward_class
    if not B > 0:
        raise ValueError("norm bound must be positive")
    X, z = _draw_xz(spec, n_samples, stream)
    zg = g_model.predict_context(X, clip=False)
    K = fmap.n_actions
    if method == "closed-form-eigen":
        # only the played action's block is nonzero, so each action shares one q x q moment
        D = _block_differences(fmap, X, z, zg)
        M = D.T @ D / n_samples
        lam = power_iteration(M, tol=1e-8)
        per_action = np.full(K, B * B * lam)
    elif method == "monte-carlo-sup":
        if feature_fn is None:
            feature_fn = fmap.reward_features
        per_action = np.zeros(K)
        for a in range(K):
            acts = np.full(n_samples, a)
            D = feature_fn(X, z, acts) - feature_fn(X, zg, acts)
            if not np.all(np.isfinite(D)):
                raise ValueError("non-finite features")
            # columns that never move with z cannot contribute; draw directions on the rest
            active = np.flatnonzero(np.any(D != 0, axis=0))
            if active.size == 0:
                continue
            thetas = stream.rng.standard_normal((SUP_DRAWS, active.size))
            thetas *= B / np.linalg.norm(thetas, axis=1, keepdims=True)
            per_action[a] = float(np.max(np.mean((D[:, active] @ thetas.T) ** 2, axis=0)))
    else:
        raise ValueError(f"unknown elasticity method {method!r}")
    return ElasticityEstimate(float(per_action.max()), method, int(n_samples), per_action)


def upsilon_per_action(
    spec: EnvironmentSpec, f_star: LinearModel, g_model: LinearModel, n_samples: int, stream: RandomStream
) -> np.ndarray:
    """E[(f*(x, z*, a) - f*(x, g(x), a))^2] for each action."""
    X, z = _draw_xz(spec, n_samples, stream)
    zg = g_model.predict_context(X, clip=False)
    diff = f_star.action_values(X, z) - f_star.action_values(X, zg)
    return np.mean(diff * diff, axis=0)


def estimate_upsilon(
    spec: EnvironmentSpec, f_star: LinearModel, g_model: LinearModel, n_samples: int, stream: RandomStream
) -> float:
    """Smallest per-action value of the squared reward discrepancy at f*."""
    return float(upsilon_per_action(spec, f_star, g_model, n_samples, stream).min())


# -- critical radius table --------------------------------------------------

RADIUS_KINDS = ("linear", "lipschitz", "convex-lipschitz", "twice-differentiable", "centered")


@dataclass(frozen=True)
class RateSpec:
    """A closed-form critical-radius rate r(N).

    ``param`` is d for linear, L for the Lipschitz kinds, c0 for
    twice-differentiable (C(c0) taken as c0), and delta0 for the centred
    class (whose covering exponent is ``cover_d``).
    """

    kind: str
    param: float = 1.0
    cover_d: float = 1.0

    def __post_init__(self):
        if self.kind not in RADIUS_KINDS:
            raise ValueError(f"unknown radius kind {self.kind!r}; expected one of {RADIUS_KINDS}")
        if self.kind == "centered":
            if self.param < 0 or not self.cover_d > 0:
                raise ValueError("centered rate needs delta0 >= 0 and cover_d > 0")
        elif not self.param > 0:
            raise ValueError("rate parameter must be positive")

    def __call__(self, n: float) -> float:
        return rate_value(self, n)


def rate_value(rate: RateSpec, n: float) -> float:
    """Evaluate the rate at a real-valued sample size n > 0."""
    if not n > 0:
        raise ValueError("sample size must be positive")
    k, c = rate.kind, rate.param
    if k == "linear":
        return float(np.sqrt(c / n))
    if k == "lipschitz":
        return float((c / n) ** (1 / 3))
    if k == "convex-lipschitz":
        return float((c / n) ** (2 / 5))
    if k == "twice-differentiable":
        return float(c / n ** (2 / 5))
    d = rate.cover_d
    return float(c ** (d / (d + 2)) * n ** (-1 / (d + 2)))


def radius_rate(kind: str | RateSpec, N: int, param: float = 1.0) -> float:
    rate = kind if isinstance(kind, RateSpec) else RateSpec(kind, param)
    if N < 1:
        raise ValueError("N must be at least 1")
    return rate_value(rate, N)


def lipschitz_in_z(fmap: FeatureMap, norm_bound: float, x_max: float) -> float:
    """B * sup_x ||d phi / dz||, which for [1, x, z, zx] blocks is
    B * sqrt(z_term + d_x * x_max^2) (z_term = 1 when z is present)."""
    s = 0.0
    if "z" in fmap.terms:
        s += 1.0
    if "zx" in fmap.terms:
        s += fmap.d_x * x_max**2
    return float(norm_bound * np.sqrt(s))
