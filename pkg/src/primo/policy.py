"""Inverse-gap-weighting action distributions and inverse-CDF sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Context, RandomStream
from .function_classes import LinearModel

__all__ = ["PolicyDistribution", "igw_probabilities", "igw_distribution", "sample_action", "sample_actions"]


@dataclass(frozen=True)
class PolicyDistribution:
    probabilities: np.ndarray
    greedy_action: int

    def __post_init__(self) -> None:
        p = np.array(self.probabilities, dtype=float).reshape(-1)
        if p.size < 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be nonnegative and sum to one")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    @property
    def n_actions(self) -> int:
        return self.probabilities.size


def igw_probabilities(values, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise IGW over a (n, K) array of estimated action values.

    Non-greedy actions get 1 / (K + gamma * gap); the greedy action (lowest
    index among maximisers) takes the remaining mass. ``gamma = 0`` gives
    the uniform distribution.
    """
    V = np.atleast_2d(np.asarray(values, dtype=float))
    n, K = V.shape
    if K < 2:
        raise ValueError("IGW needs at least two actions")
    if not gamma >= 0 or not np.isfinite(gamma):
        raise ValueError("gamma must be a finite nonnegative number")
    greedy = np.argmax(V, axis=1)
    gaps = V[np.arange(n), greedy][:, None] - V
    P = 1.0 / (K + gamma * gaps)
    P[np.arange(n), greedy] = 0.0
    P[np.arange(n), greedy] = 1.0 - P.sum(axis=1)
    return P, greedy


def igw_distribution(f_hat: LinearModel, gamma: float, x: Context | np.ndarray, z: float) -> PolicyDistribution:
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    xv = x.values if isinstance(x, Context) else np.asarray(x, dtype=float)
    values = f_hat.action_values(xv.reshape(1, -1), [z])
    P, greedy = igw_probabilities(values, gamma)
    return PolicyDistribution(P[0], int(greedy[0]))


def sample_actions(P, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling, one uniform per row, actions in index order."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    cdf = np.cumsum(P, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(P.shape[0])
    return (cdf <= u[:, None]).sum(axis=1)


def sample_action(dist: PolicyDistribution, stream: RandomStream) -> int:
    return int(sample_actions(dist.probabilities[None, :], stream.rng)[0])
