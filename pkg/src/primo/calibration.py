"""Cross-fitted recalibration of a pre-trained covariate model under MAR.

The data are split in two. The first half fits a propensity model e(x) for
P(b = 1 | x) by clipped least squares. The second half fits g by inverse
propensity weighted least squares on the observed rows, constrained to an
empirical-L2 ball of radius delta0 around the pre-trained model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, RandomStream
from .function_classes import FeatureMap, FitReport, LinearModel, fit_erm_centered, fit_erm_squared

__all__ = [
    "CalibrationResult",
    "InsufficientDataError",
    "cross_fit_split",
    "fit_propensity",
    "fit_calibrated_g",
    "calibrate",
]


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationResult:
    e_hat: LinearModel
    g_hat: LinearModel
    split_sizes: tuple[int, int]
    propensity_fit: FitReport
    target_fit: FitReport


def cross_fit_split(data: Dataset, stream: RandomStream) -> tuple[Dataset, Dataset]:
    """Seeded random halves of sizes ceil(N/2) and floor(N/2)."""
    n = len(data)
    if n < 4:
        raise InsufficientDataError(f"cross-fitting needs at least 4 rows, got {n}")
    perm = stream.rng.permutation(n)
    k = (n + 1) // 2
    return data.subset(np.sort(perm[:k])), data.subset(np.sort(perm[k:]))


def fit_propensity(
    half: Dataset, feature_map: FeatureMap, eps0: float = 0.1, *, report: bool = False
):
    """Least-squares fit of b on chi(x), predictions clipped to [eps0, 1]."""
    if len(half) == 0:
        raise InsufficientDataError("propensity fit needs at least one row")
    if not 0.0 < eps0 <= 1.0:
        raise ValueError("eps0 must lie in (0, 1]")
    model, rep = fit_erm_squared(
        feature_map.context_features(half.contexts),
        half.observed.astype(float),
        feature_map=feature_map,
        clip=(eps0, 1.0),
    )
    return (model, rep) if report else model


def fit_calibrated_g(
    half: Dataset,
    e_hat: LinearModel,
    g_tilde: LinearModel,
    delta0: float,
    *,
    radius_scale: float = 1.0,
    report: bool = False,
):
    """IPW-weighted constrained regression of z on psi(x) over observed rows.

    Rows with b = 0 drop out (their term carries a factor b). The ball is
    measured on every context of the half, observed or not.
    """
    if delta0 < 0:
        raise ValueError("delta0 must be nonnegative")
    obs = half.observed == 1
    if not obs.any():
        raise InsufficientDataError("no observed covariates in the calibration half")
    fmap = g_tilde.feature_map
    probe = fmap.context_features(half.contexts)
    e = e_hat.predict_context(half.contexts[obs])
    if np.any(e <= 0):
        raise ValueError("propensity estimate must be strictly positive")
    model, rep = fit_erm_centered(
        probe[obs],
        half.covariate_used[obs],
        g_tilde,
        delta0 * radius_scale,
        weights=1.0 / e,
        probe=probe,
    )
    return (model, rep) if report else model


def calibrate(
    data: Dataset,
    g_tilde: LinearModel,
    delta0: float,
    stream: RandomStream,
    *,
    propensity_map: FeatureMap | None = None,
    eps0: float = 0.1,
    radius_scale: float = 1.0,
) -> CalibrationResult:
    if propensity_map is None:
        propensity_map = g_tilde.feature_map
    first, second = cross_fit_split(data, stream)
    e_hat, e_rep = fit_propensity(first, propensity_map, eps0, report=True)
    g_hat, g_rep = fit_calibrated_g(second, e_hat, g_tilde, delta0, radius_scale=radius_scale, report=True)
    return CalibrationResult(e_hat, g_hat, (len(first), len(second)), e_rep, g_rep)
