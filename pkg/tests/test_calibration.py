import numpy as np
import pytest

from primo.calibration import (
    InsufficientDataError,
    calibrate,
    cross_fit_split,
    fit_calibrated_g,
    fit_propensity,
)
from primo.core import Dataset, derive_stream
from primo.environment import build_environment, population_distance, sample_rounds
from primo.function_classes import LinearModel, covariate_map, empirical_l2_distance, propensity_map


def _dataset(spec, seed, n, rep=0):
    """Rows as the learner would store them: z where observed, g-tilde elsewhere."""
    b = sample_rounds(spec, seed, rep, n)
    z_used = np.where(b.b == 1, b.z, spec.g_tilde.predict_context(b.X))
    return Dataset(b.X, b.b, z_used, np.zeros(n, int), np.zeros(n), z_true=b.z)


def _plain(n, observed=None, d_x=2, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (n, d_x))
    obs = np.ones(n) if observed is None else observed
    return Dataset(X, obs, rng.uniform(-1, 1, n), np.zeros(n, int), np.zeros(n))


def _err(spec, g, seed=99):
    return population_distance(g, spec.g_star, spec, np.random.default_rng(seed))[0]


class TestSplit:
    @pytest.mark.parametrize("n,sizes", [(10, (5, 5)), (11, (6, 5))])
    def test_sizes(self, n, sizes):
        a, b = cross_fit_split(_plain(n), derive_stream(1, 0, "shuffle"))
        assert (len(a), len(b)) == sizes
        assert set(a.rounds).isdisjoint(b.rounds)
        assert sorted(np.r_[a.rounds, b.rounds]) == list(range(1, n + 1))

    def test_deterministic(self):
        ds = _plain(40)
        a1, _ = cross_fit_split(ds, derive_stream(3, 2, "shuffle"))
        a2, _ = cross_fit_split(ds, derive_stream(3, 2, "shuffle"))
        np.testing.assert_array_equal(a1.rounds, a2.rounds)

    def test_too_small(self):
        with pytest.raises(InsufficientDataError):
            cross_fit_split(_plain(3), derive_stream(1, 0, "shuffle"))


class TestPropensity:
    def test_all_observed(self):
        e = fit_propensity(_plain(200), propensity_map(2))
        X = np.random.default_rng(1).uniform(-1, 1, (50, 2))
        np.testing.assert_allclose(e.predict_context(X), 1.0, atol=1e-9)

    def test_mcar_intercept(self):
        spec = build_environment(missingness="mcar", mcar_p=0.6)
        e = fit_propensity(_dataset(spec, 1, 20_000), propensity_map(3))
        assert abs(e.weights[0] - 0.6) <= 0.015

    def test_linear_truth_recovered(self):
        spec = build_environment(missingness="mar")
        pmap = propensity_map(3)
        e = fit_propensity(_dataset(spec, 2, 20_000), pmap, spec.eps0)
        X = np.random.default_rng(3).uniform(-1, 1, (50_000, 3))
        truth = spec.missingness.propensity.predict_context(X)
        assert np.sqrt(np.mean((e.predict_context(X) - truth) ** 2)) <= 0.05

    def test_clip_floor(self):
        obs = np.zeros(100)
        obs[:2] = 1
        e = fit_propensity(_plain(100, obs), propensity_map(2), 0.2)
        X = np.random.default_rng(1).uniform(-1, 1, (100, 2))
        assert e.predict_context(X).min() >= 0.2

    def test_bad_eps0(self):
        with pytest.raises(ValueError):
            fit_propensity(_plain(10), propensity_map(2), 0.0)


class TestCalibratedG:
    def test_all_missing_raises(self):
        ds = _plain(20, np.zeros(20))
        g = LinearModel(np.zeros(3), covariate_map(2))
        e = LinearModel([1.0, 0, 0], propensity_map(2), clip=(0.1, 1.0))
        with pytest.raises(InsufficientDataError):
            fit_calibrated_g(ds, e, g, 0.5)

    def test_zero_radius_returns_pretrained(self):
        spec = build_environment(missingness="mcar", mcar_p=0.7, eta_bound=0.2)
        ds = _dataset(spec, 4, 2000)
        e = fit_propensity(ds, propensity_map(3))
        g = fit_calibrated_g(ds, e, spec.g_tilde, 0.0)
        np.testing.assert_allclose(g.weights, spec.g_tilde.weights, atol=1e-12)

    def test_ball_feasibility(self):
        spec = build_environment(missingness="mar", eta_bound=0.3, perturbation_scale=0.3, delta0=0.5)
        ds = _dataset(spec, 5, 3000)
        e = fit_propensity(ds, propensity_map(3), spec.eps0)
        for radius in (0.05, 0.1, 0.2):
            g = fit_calibrated_g(ds, e, spec.g_tilde, radius)
            dist = empirical_l2_distance(g, spec.g_tilde, spec.covariate_map.context_features(ds.contexts))
            assert dist <= radius * (1 + 1e-6) + 1e-12

    def test_unconstrained_matches_ipw_regression(self):
        spec = build_environment(missingness="mar", eta_bound=0.3)
        ds = _dataset(spec, 6, 3000)
        e = fit_propensity(ds, propensity_map(3), spec.eps0)
        g = fit_calibrated_g(ds, e, spec.g_tilde, 100.0)
        obs = ds.observed == 1
        Psi = spec.covariate_map.context_features(ds.contexts[obs])
        w = 1.0 / e.predict_context(ds.contexts[obs])
        A = Psi.T @ (w[:, None] * Psi)
        ref = np.linalg.solve(A, Psi.T @ (w * ds.covariate_used[obs]))
        np.testing.assert_allclose(g.weights, ref, atol=1e-6)


class TestCalibrate:
    def test_matches_manual_composition(self):
        spec = build_environment(missingness="mar", eta_bound=0.3)
        ds = _dataset(spec, 7, 1001)
        res = calibrate(ds, spec.g_tilde, spec.delta0, derive_stream(7, 0, "shuffle"),
                        propensity_map=propensity_map(3), eps0=spec.eps0)
        a, b = cross_fit_split(ds, derive_stream(7, 0, "shuffle"))
        e = fit_propensity(a, propensity_map(3), spec.eps0)
        g = fit_calibrated_g(b, e, spec.g_tilde, spec.delta0)
        assert res.split_sizes == (501, 500)
        np.testing.assert_array_equal(res.e_hat.weights, e.weights)
        np.testing.assert_array_equal(res.g_hat.weights, g.weights)

    def test_delta0_zero_is_identity(self):
        spec = build_environment(missingness="mar", eta_bound=0.3, perturbation_scale=0.0, delta0=0.0)
        res = calibrate(_dataset(spec, 8, 500), spec.g_tilde, 0.0, derive_stream(8, 0, "shuffle"))
        np.testing.assert_allclose(res.g_hat.weights, spec.g_tilde.weights, atol=1e-12)

    def test_improves_on_pretrained_under_mcar(self):
        spec = build_environment(missingness="mcar", mcar_p=0.6, eta_bound=0.3)
        base = _err(spec, spec.g_tilde)
        wins = 0
        for r in range(20):
            res = calibrate(_dataset(spec, 9, 1000, r), spec.g_tilde, spec.delta0, derive_stream(9, r, "shuffle"))
            wins += _err(spec, res.g_hat) < base
        assert wins >= 18

    def test_error_shrinks_with_n(self):
        spec = build_environment(missingness="mar", eta_bound=0.3)
        means = []
        for n in (500, 2000, 8000):
            errs = [
                _err(spec, calibrate(_dataset(spec, 10, n, r), spec.g_tilde, spec.delta0,
                                     derive_stream(10, r, "shuffle"), eps0=spec.eps0).g_hat)
                for r in range(10)
            ]
            means.append(np.mean(errs))
        assert means[0] > means[1] > means[2]
        slope = np.polyfit(np.log([500, 2000, 8000]), np.log(means), 1)[0]
        assert -0.75 <= slope <= -0.25
