import numpy as np
import pytest

from momuts.reward import RewardSpec, UtilitySpec, reward_values


class LinearToyEnv:
    """Users share ``theta``; each action has a fixed feature row and Gaussian noise."""

    preference_profiles = None

    def __init__(self, features, theta, reward_specs, rng, horizon=10, noise_sd=1.0):
        self._phi = np.asarray(features, dtype=float)
        self.theta = np.atleast_2d(np.asarray(theta, dtype=float))
        self.specs = list(reward_specs)
        self.rng = rng
        self.horizon = horizon
        self.noise_sd = noise_sd
        self.num_actions, self.dim = self._phi.shape
        self.num_outcomes = self.theta.shape[0]
        self._eps = np.zeros((self.num_users, self.num_outcomes))

    @property
    def num_users(self):
        return len(self.specs)

    def begin_step(self, t):
        self._eps = self.rng.standard_normal((self.num_users, self.num_outcomes)) * self.noise_sd

    def features(self, i):
        return self._phi

    def reward_spec(self, i, profile=None):
        return self.specs[i]

    def outcomes(self, i):
        return self._phi @ self.theta.T + self._eps[i]

    def rewards(self, i):
        return reward_values(self.specs[i], self.outcomes(i), self._phi)

    def commit(self, i, a):
        return self.outcomes(i)[a], float(self.rewards(i)[a])


IDENTITY = RewardSpec(((1.0, UtilitySpec("identity")),))


def _toy_factory(P, seed_theta, rng):
    feats = np.random.default_rng(seed_theta).normal(size=(4, 3))
    return LinearToyEnv(feats, [0.5, -0.3, 0.8], [IDENTITY] * P, rng, horizon=15)


@pytest.fixture
def toy_env_factory():
    import functools

    return lambda P=3, seed_theta=0: functools.partial(_toy_factory, P, seed_theta)
