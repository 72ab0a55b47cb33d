"""Linear-in-features hypothesis classes and their least-squares solvers.

Three feature maps are supported:

* reward map ``phi(x, z, a)``: one block per action, each block a subset of
  ``[1, x, z, z*x]``; only the block of the played action is nonzero.
* covariate map ``psi(x)`` and propensity map ``chi(x)``: ``[1, x]`` plus
  optional squares and pairwise products.

Fits minimise a (weighted) mean squared error over a Euclidean norm ball or
over a ball around a centre model measured in the empirical L2 norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

__all__ = [
    "FeatureMap",
    "LinearModel",
    "FitReport",
    "reward_map",
    "covariate_map",
    "propensity_map",
    "predict",
    "power_iteration",
    "fit_erm_squared",
    "fit_erm_centered",
    "empirical_l2_distance",
]

REWARD_TERMS = ("intercept", "x", "z", "zx")
CONTEXT_LIFTS = ("squares", "pairwise")

RIDGE_JITTER = 1e-10
GRAD_TOL = 1e-9
MAX_ITER = 100_000


@dataclass(frozen=True)
class FeatureMap:
    kind: str  # "reward" | "covariate" | "propensity"
    d_x: int
    n_actions: int = 1
    terms: tuple[str, ...] = REWARD_TERMS
    lifts: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("reward", "covariate", "propensity"):
            raise ValueError(f"unknown feature map kind {self.kind!r}")
        if self.d_x < 1:
            raise ValueError("d_x must be at least 1")
        if self.kind == "reward":
            bad = set(self.terms) - set(REWARD_TERMS)
            if bad or not self.terms:
                raise ValueError(f"reward terms must be a non-empty subset of {REWARD_TERMS}")
            if self.n_actions < 2:
                raise ValueError("the reward map needs at least two actions")
            # canonical order keeps weight layouts comparable across configs
            object.__setattr__(self, "terms", tuple(t for t in REWARD_TERMS if t in self.terms))
        else:
            bad = set(self.lifts) - set(CONTEXT_LIFTS)
            if bad:
                raise ValueError(f"context lifts must be a subset of {CONTEXT_LIFTS}")
            object.__setattr__(self, "lifts", tuple(t for t in CONTEXT_LIFTS if t in self.lifts))

    @property
    def block_dim(self) -> int:
        """Size of one per-action block (reward map) or of the whole map."""
        d = self.d_x
        if self.kind == "reward":
            sizes = {"intercept": 1, "x": d, "z": 1, "zx": d}
            return sum(sizes[t] for t in self.terms)
        n = 1 + d
        if "squares" in self.lifts:
            n += d
        if "pairwise" in self.lifts:
            n += d * (d - 1) // 2
        return n

    @property
    def output_dim(self) -> int:
        if self.kind == "reward":
            return self.n_actions * self.block_dim
        return self.block_dim

    # -- reward map -------------------------------------------------------

    def base_features(self, X, z) -> np.ndarray:
        """Per-action block features ``[1, x, z, z*x]`` (subset), shape (n, q)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        z = np.asarray(z, dtype=float).reshape(-1)
        cols = []
        for t in self.terms:
            if t == "intercept":
                cols.append(np.ones((X.shape[0], 1)))
            elif t == "x":
                cols.append(X)
            elif t == "z":
                cols.append(z[:, None])
            else:
                cols.append(z[:, None] * X)
        return np.hstack(cols)

    def z_gradient(self, X) -> np.ndarray:
        """d(base features)/dz, shape (n, q). The map is affine in z."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[0]
        cols = []
        for t in self.terms:
            if t == "intercept":
                cols.append(np.zeros((n, 1)))
            elif t == "x":
                cols.append(np.zeros_like(X))
            elif t == "z":
                cols.append(np.ones((n, 1)))
            else:
                cols.append(X)
        return np.hstack(cols)

    def reward_features(self, X, z, actions) -> np.ndarray:
        """Full one-hot-blocked features, shape (n, K*q)."""
        base = self.base_features(X, z)
        actions = np.asarray(actions, dtype=np.int64).reshape(-1)
        n, q = base.shape
        if actions.shape != (n,):
            raise ValueError("need one action per row")
        if np.any((actions < 0) | (actions >= self.n_actions)):
            raise ValueError("action index out of range")
        out = np.zeros((n, self.n_actions * q))
        cols = actions[:, None] * q + np.arange(q)[None, :]
        np.put_along_axis(out, cols, base, axis=1)
        return out

    # -- covariate / propensity maps --------------------------------------

    def context_features(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.d_x:
            raise ValueError(f"expected {self.d_x} context coordinates, got {X.shape[1]}")
        cols = [np.ones((X.shape[0], 1)), X]
        if "squares" in self.lifts:
            cols.append(X**2)
        if "pairwise" in self.lifts and self.d_x > 1:
            cols.append(np.column_stack([X[:, i] * X[:, j] for i, j in combinations(range(self.d_x), 2)]))
        return np.hstack(cols)


def reward_map(d_x: int, n_actions: int, terms=REWARD_TERMS) -> FeatureMap:
    return FeatureMap("reward", d_x, n_actions, tuple(terms))


def covariate_map(d_x: int, lifts=()) -> FeatureMap:
    return FeatureMap("covariate", d_x, lifts=tuple(lifts))


def propensity_map(d_x: int, lifts=()) -> FeatureMap:
    return FeatureMap("propensity", d_x, lifts=tuple(lifts))


@dataclass(frozen=True)
class LinearModel:
    """Weights over a feature map, a norm bound, and an optional output clip."""

    weights: np.ndarray
    feature_map: FeatureMap | None = None
    norm_bound: float = np.inf
    clip: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if self.feature_map is not None and w.size != self.feature_map.output_dim:
            raise ValueError(f"weights have length {w.size}, feature map emits {self.feature_map.output_dim}")
        if not self.norm_bound > 0:
            raise ValueError("norm bound must be positive")
        if np.linalg.norm(w) > self.norm_bound * (1 + 1e-9) + 1e-8:
            raise ValueError(f"weight norm {np.linalg.norm(w):.6g} exceeds bound {self.norm_bound:.6g}")
        if self.clip is not None:
            lo, hi = self.clip
            if not lo <= hi:
                raise ValueError("clip interval must satisfy lo <= hi")
            object.__setattr__(self, "clip", (float(lo), float(hi)))
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def _clip(self, v):
        if self.clip is None:
            return v
        return np.clip(v, *self.clip)

    def raw(self, features) -> np.ndarray:
        return np.asarray(features, dtype=float) @ self.weights

    def predict_features(self, features) -> np.ndarray:
        return self._clip(self.raw(features))

    # convenience paths for the concrete maps

    def predict_context(self, X, *, clip: bool = True) -> np.ndarray:
        v = self.feature_map.context_features(X) @ self.weights
        return self._clip(v) if clip else v

    def action_values(self, X, z, *, clip: bool = True) -> np.ndarray:
        """Predictions for every action at each (x, z), shape (n, K)."""
        fm = self.feature_map
        base = fm.base_features(X, z)
        W = self.weights.reshape(fm.n_actions, fm.block_dim)
        v = base @ W.T
        return self._clip(v) if clip else v

    def with_weights(self, weights) -> "LinearModel":
        return LinearModel(weights, self.feature_map, self.norm_bound, self.clip)


@dataclass(frozen=True)
class FitReport:
    objective_value: float
    iterations: int
    converged: bool
    projection_active: bool
    gradient_norm: float = 0.0


def predict(model: LinearModel, features) -> float:
    f = np.asarray(features, dtype=float).reshape(-1)
    if f.size != model.weights.size:
        raise ValueError(f"feature length {f.size} does not match weight length {model.weights.size}")
    return float(model._clip(f @ model.weights))


def power_iteration(M, tol: float = 1e-8, max_iter: int = 20_000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix.

    Stops once the Rayleigh quotient changes by less than ``tol`` relative.
    The start vector is fixed so results are reproducible.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if n == 0:
        return 0.0
    x = np.random.default_rng(0).standard_normal(n) + 1.0
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = M @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        lam_new = float(x @ y)
        x = y / ny
        if abs(lam_new - lam) <= tol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    # final Rayleigh quotient at the normalised iterate
    return max(float(x @ (M @ x)), lam)


def _validate_rows(features, targets, weights):
    Phi = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float).reshape(-1)
    if Phi.shape[0] == 0 or y.size == 0:
        raise ValueError("cannot fit on empty data")
    if Phi.shape[0] != y.size:
        raise ValueError("features and targets disagree on the number of rows")
    if not (np.all(np.isfinite(Phi)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite feature or target")
    if weights is None:
        w = np.ones(y.size)
    else:
        w = np.asarray(weights, dtype=float).reshape(-1)
        if w.shape != y.shape:
            raise ValueError("need one weight per row")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("row weights must be finite and strictly positive")
    return Phi, y, w


def _weighted_objective(Phi, y, w, theta) -> float:
    r = Phi @ theta - y
    return float((w * r * r).sum() / w.sum())


def _moments(Phi, y, w):
    sw = w.sum()
    Pw = Phi * w[:, None]
    return Pw.T @ Phi / sw, Pw.T @ y / sw


def _project_ball(u, radius):
    n = math.sqrt(u @ u)
    if n <= radius:
        return u
    return u * (radius / n)


def _ball_quadratic(A, g, radius, tol=GRAD_TOL, max_iter=MAX_ITER):
    """Minimise u'Au - 2g'u over ||u|| <= radius (A symmetric PSD).

    Returns (u, iterations, converged, projection_active, gradient_norm).
    Unconstrained: ridge-jittered normal equations. Otherwise projected
    gradient with constant step 1/L, L = 2 * lambda_max(A), with Nesterov
    momentum restarted whenever it stops decreasing the objective
    (gradient-mapping restart test). The reported gradient norm is that of
    the projected-gradient mapping.
    """
    p = A.shape[0]
    u = np.linalg.solve(A + RIDGE_JITTER * np.eye(p), g)
    if math.sqrt(u @ u) <= radius:
        return u, 0, True, False, float(np.linalg.norm(2 * (A @ u - g)))
    L = 2.0 * power_iteration(A)
    if L <= 0.0:
        # flat objective: any feasible point is optimal
        return _project_ball(u, radius), 0, True, True, 0.0
    u = _project_ball(u, radius)
    step_A = (2.0 / L) * A
    step_g = (2.0 / L) * g
    y = u
    t = 1.0
    gnorm = np.inf
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        u_next = _project_ball(y - (step_A @ y - step_g), radius)
        mapping = y - u_next
        gnorm = L * math.sqrt(mapping @ mapping)
        if gnorm <= tol:
            u = u_next
            converged = True
            break
        if mapping @ (u_next - u) > 0:
            # momentum is pointing uphill: restart from the plain step
            t = 1.0
            y = u_next
        else:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            y = u_next + ((t - 1.0) / t_next) * (u_next - u)
            t = t_next
        u = u_next
    return u, it, converged, True, gnorm


def fit_erm_squared(
    features,
    targets,
    norm_bound: float = np.inf,
    weights=None,
    *,
    feature_map: FeatureMap | None = None,
    clip: tuple[float, float] | None = None,
) -> tuple[LinearModel, FitReport]:
    """Least squares over the ball ``||w||_2 <= norm_bound``.

    The objective is sum_i w_i (phi_i'theta - y_i)^2 / sum_i w_i, evaluated
    before any output clip.
    """
    Phi, y, w = _validate_rows(features, targets, weights)
    if not norm_bound > 0:
        raise ValueError("norm bound must be positive")
    G, h = _moments(Phi, y, w)
    theta, it, conv, active, gnorm = _ball_quadratic(G, h, norm_bound)
    if active:
        # land exactly on the sphere so the bound is met to rounding
        theta = theta * (norm_bound / np.linalg.norm(theta))
    report = FitReport(_weighted_objective(Phi, y, w, theta), it, conv, active, gnorm)
    return LinearModel(theta, feature_map, norm_bound, clip), report


def fit_erm_centered(
    features,
    targets,
    center: LinearModel,
    radius: float,
    weights=None,
    *,
    probe=None,
    clip: tuple[float, float] | None = None,
) -> tuple[LinearModel, FitReport]:
    """Weighted least squares over ``{g : ||g - center||_N <= radius}``.

    ``||.||_N`` is the empirical L2 norm over the ``probe`` feature rows
    (defaults to ``features``). Directions the probe cannot see are left at
    the centre, so the probe rows must span the fitting rows.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    Phi, y, w = _validate_rows(features, targets, weights)
    theta0 = center.weights
    if Phi.shape[1] != theta0.size:
        raise ValueError("centre model and features disagree on dimension")
    out_clip = center.clip if clip is None else clip
    if radius == 0:
        model = LinearModel(theta0.copy(), center.feature_map, center.norm_bound, out_clip)
        return model, FitReport(_weighted_objective(Phi, y, w, theta0), 0, True, True, 0.0)

    P = Phi if probe is None else np.atleast_2d(np.asarray(probe, dtype=float))
    if P.shape[0] == 0:
        raise ValueError("probe must be non-empty")
    M = P.T @ P / P.shape[0]
    mu, V = np.linalg.eigh(M)
    keep = mu > max(mu.max(), 0.0) * 1e-12
    # whitening: theta = theta0 + S u with ||u|| = ||theta - theta0||_N
    S = V[:, keep] / np.sqrt(mu[keep])
    G, h = _moments(Phi, y, w)
    A = S.T @ G @ S
    A = 0.5 * (A + A.T)
    g = S.T @ (h - G @ theta0)
    u, it, conv, active, gnorm = _ball_quadratic(A, g, radius)
    if active:
        u = u * (radius / np.linalg.norm(u))
    theta = theta0 + S @ u
    report = FitReport(_weighted_objective(Phi, y, w, theta), it, conv, active, gnorm)
    bound = max(center.norm_bound, float(np.linalg.norm(theta)))
    return LinearModel(theta, center.feature_map, bound, out_clip), report


def empirical_l2_distance(a: LinearModel, b: LinearModel, probe) -> float:
    """sqrt(mean((a(x) - b(x))^2)) over the probe feature rows, before clipping."""
    P = np.atleast_2d(np.asarray(probe, dtype=float))
    if P.shape[0] == 0 or P.size == 0:
        raise ValueError("probe must be non-empty")
    if a.weights.size != b.weights.size:
        raise ValueError("models do not share a feature map")
    d = P @ (a.weights - b.weights)
    return float(np.sqrt(np.mean(d * d)))
