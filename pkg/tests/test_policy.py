import numpy as np
import pytest

from primo.core import Context, derive_stream
from primo.function_classes import LinearModel, reward_map
from primo.policy import PolicyDistribution, igw_distribution, igw_probabilities, sample_action, sample_actions


def _model(values):
    """A reward model whose action values are the given constants."""
    K = len(values)
    fm = reward_map(1, K, ("intercept",))
    return LinearModel(values, fm, clip=(0.0, 1.0))


class TestIGW:
    def test_equal_values_uniform(self):
        d = igw_distribution(_model([0.3] * 4), 50.0, Context([0.0]), 0.0)
        np.testing.assert_allclose(d.probabilities, 0.25, atol=1e-15)

    def test_two_actions(self):
        d = igw_distribution(_model([1.0, 0.5]), 10.0, Context([0.2]), 0.0)
        assert d.greedy_action == 0
        assert d.probabilities[1] == pytest.approx(1 / 7, abs=1e-15)
        assert d.probabilities[0] == pytest.approx(6 / 7, abs=1e-15)

    def test_tie_at_top(self):
        d = igw_distribution(_model([0.9, 0.9, 0.1]), 20.0, np.array([0.0]), 0.0)
        assert d.greedy_action == 0
        np.testing.assert_allclose(d.probabilities, [1 - 1 / 3 - 1 / 19, 1 / 3, 1 / 19], atol=1e-15)

    def test_requires_positive_gamma(self):
        with pytest.raises(ValueError):
            igw_distribution(_model([0.1, 0.2]), 0.0, Context([0.0]), 0.0)

    def test_gamma_zero_vectorised_is_uniform(self):
        P, _ = igw_probabilities(np.array([[0.1, 0.9, 0.3]]), 0.0)
        np.testing.assert_allclose(P, 1 / 3)

    @pytest.mark.parametrize("gamma", [-1.0, np.inf, np.nan])
    def test_bad_gamma(self, gamma):
        with pytest.raises(ValueError):
            igw_probabilities(np.zeros((1, 2)), gamma)

    def test_single_action_rejected(self):
        with pytest.raises(ValueError):
            igw_probabilities(np.zeros((1, 1)), 1.0)

    def test_greedy_mass_at_least_one_over_k(self):
        rng = np.random.default_rng(0)
        V = rng.uniform(0, 1, (1000, 6))
        P, g = igw_probabilities(V, 100.0)
        assert np.all(P[np.arange(1000), g] >= 1 / 6 - 1e-15)


class TestDistribution:
    def test_rejects_invalid(self):
        with pytest.raises(ValueError):
            PolicyDistribution([0.5, 0.6], 0)
        with pytest.raises(ValueError):
            PolicyDistribution([1.2, -0.2], 0)


class TestSampling:
    def test_point_mass(self):
        s = derive_stream(1, 0, "policy")
        d = PolicyDistribution([0, 0, 1.0, 0], 2)
        assert all(sample_action(d, s) == 2 for _ in range(200))

    def test_uniform_frequencies(self):
        a = sample_actions(np.full((100_000, 4), 0.25), derive_stream(2, 0, "policy").rng)
        freq = np.bincount(a, minlength=4) / a.size
        assert np.all(np.abs(freq - 0.25) <= 0.005)

    def test_frequencies_within_three_se(self):
        p = np.array([0.1, 0.6, 0.05, 0.25])
        n = 100_000
        a = sample_actions(np.tile(p, (n, 1)), derive_stream(3, 0, "policy").rng)
        freq = np.bincount(a, minlength=4) / n
        assert np.all(np.abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / n))

    def test_replay(self):
        P = np.tile([0.2, 0.3, 0.5], (500, 1))
        a = sample_actions(P, derive_stream(4, 1, "policy").rng)
        b = sample_actions(P, derive_stream(4, 1, "policy").rng)
        np.testing.assert_array_equal(a, b)

    def test_zero_probability_never_drawn(self):
        P = np.tile([0.5, 0.0, 0.5], (50_000, 1))
        a = sample_actions(P, derive_stream(5, 0, "policy").rng)
        assert not np.any(a == 1)
