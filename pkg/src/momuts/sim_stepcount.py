"""Synthetic step-count environment with active and inactive user groups.

Step counts are autoregressive, ``y_t = phi^T theta* + sd * eps``, with
``phi = [1, y_{t-1}, t_a, t_i, nn]``. The treatment slots carry a sigmoid
decay in the notification count ``nn``. All step quantities are measured in
thousands of steps unless ``units="steps"``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .reward import RewardSpec, UtilitySpec, reward_values

NN_INDEX = 4


class StepGroup(str, enum.Enum):
    ACTIVE = "active"
    INACTIVE = "inactive"


@dataclass(frozen=True)
class StepSimConfig:
    theta_star: tuple = (-0.04, 0.9999, 0.3, 0.15, 0.0)
    horizon: int = 100
    goal_active: float = 10.0
    goal_inactive: float = 5.6
    slope_below: float = 0.005
    slope_above: float = 0.001
    gamma_active: float = 0.42
    gamma_inactive: float = 0.3
    beta_notif: float = 0.00003
    weights_active: tuple = (0.4, 0.6)
    weights_inactive: tuple = (0.1, 0.9)
    y0_active: float = 15.0
    y0_inactive: float = 4.0
    noise_sd: float = 1.0
    # "piecewise" is the goal utility; "identity" gives the Lipschitz-continuous variant
    utility: str = "piecewise"
    burden_counts_current_action: bool = True
    units: str = "thousands"
    # "expected": regret compares rewards of noiseless outcomes; "realized": same noise draw
    regret: str = "expected"

    def __post_init__(self):
        if len(self.theta_star) != 5:
            raise ValueError("theta_star must have 5 entries")
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")
        if self.utility not in ("piecewise", "identity"):
            raise ValueError(f"utility must be 'piecewise' or 'identity', got {self.utility!r}")
        if self.units not in ("thousands", "steps"):
            raise ValueError(f"units must be 'thousands' or 'steps', got {self.units!r}")
        for w in (self.weights_active, self.weights_inactive):
            if len(w) != 2 or abs(sum(w) - 1.0) > 1e-9:
                raise ValueError(f"group weights must be two numbers summing to 1, got {w!r}")
        if self.regret not in ("expected", "realized"):
            raise ValueError(f"regret must be 'expected' or 'realized', got {self.regret!r}")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")

    @property
    def unit_scale(self) -> float:
        return 1000.0 if self.units == "steps" else 1.0

    def goal(self, group: StepGroup) -> float:
        g = self.goal_active if StepGroup(group) is StepGroup.ACTIVE else self.goal_inactive
        return g * self.unit_scale

    def y0(self, group: StepGroup) -> float:
        y = self.y0_active if StepGroup(group) is StepGroup.ACTIVE else self.y0_inactive
        return y * self.unit_scale


@dataclass
class StepUserState:
    prev_steps: float
    group: StepGroup
    notif_count: int = 0
    t: int = 0


def treatment_effect(group: StepGroup, nn: float, T: int) -> float:
    """Sigmoid-decayed treatment effect after ``nn`` notifications in horizon ``T``."""
    if T < 1:
        raise ValueError("horizon T must be at least 1")
    if StepGroup(group) is StepGroup.ACTIVE:
        return float(1.0 - expit((nn - T / 0.95) * 5.0 / T))
    return float(1.0 - expit((nn - T / 0.65) * 2.0 / T))


def featurize_step(state: StepUserState, a: int, T: int) -> np.ndarray:
    if a not in (0, 1):
        raise ValueError(f"step-count actions are 0 or 1, got {a!r}")
    t_a = t_i = 0.0
    if a == 1:
        effect = treatment_effect(state.group, state.notif_count, T)
        if StepGroup(state.group) is StepGroup.ACTIVE:
            t_a = effect
        else:
            t_i = effect
    return np.array([1.0, state.prev_steps, t_a, t_i, float(state.notif_count)])


def transition(state: StepUserState, a: int, config: StepSimConfig, rng=None, eps=None):
    """Advance one day; returns ``(next_state, y)``.

    The standard-normal draw may be supplied as ``eps`` so that every
    counterfactual action sees the same noise.
    """
    if eps is None:
        eps = rng.standard_normal()
    phi = featurize_step(state, a, config.horizon)
    y = float(phi @ np.asarray(config.theta_star) + config.noise_sd * eps)
    nxt = replace(state, prev_steps=y, notif_count=state.notif_count + int(a), t=state.t + 1)
    return nxt, y


def build_reward_spec(group: StepGroup, config: StepSimConfig) -> RewardSpec:
    group = StepGroup(group)
    active = group is StepGroup.ACTIVE
    w_goal, w_burden = config.weights_active if active else config.weights_inactive
    if config.utility == "identity":
        goal_term = UtilitySpec("identity")
    else:
        goal_term = UtilitySpec(
            "piecewise_linear_goal",
            slope_below=config.slope_below,
            slope_above=config.slope_above,
            intercept_above=config.gamma_active if active else config.gamma_inactive,
            goal=config.goal(group),
        )
    burden = UtilitySpec(
        "quadratic_penalty",
        coef=config.beta_notif,
        feature_index=NN_INDEX,
        count_current_action=config.burden_counts_current_action,
    )
    return RewardSpec(((w_goal, goal_term), (w_burden, burden)))


def make_groups(num_active: int, num_inactive: int) -> list:
    return [StepGroup.ACTIVE] * num_active + [StepGroup.INACTIVE] * num_inactive


class StepCountEnv:
    """Cohort of step-count users with common-random-number counterfactuals.

    ``begin_step`` draws one noise value per user; ``outcomes(i)`` then gives
    every action's step count under that same draw.
    """

    num_actions = 2
    dim = 5
    num_outcomes = 1
    preference_profiles = None

    def __init__(self, config: StepSimConfig, groups, rng: np.random.Generator):
        self.config = config
        self.horizon = config.horizon
        self.rng = rng
        self._theta = np.asarray(config.theta_star, dtype=float)
        self.states = [StepUserState(config.y0(g), StepGroup(g)) for g in groups]
        self._specs = {g: build_reward_spec(g, config) for g in StepGroup}
        self._eps = np.zeros(len(self.states))
        self._cache: dict = {}

    @property
    def num_users(self) -> int:
        return len(self.states)

    def begin_step(self, t: int) -> None:
        self._eps = self.rng.standard_normal(self.num_users)
        self._cache.clear()

    def features(self, i: int) -> np.ndarray:
        if ("phi", i) not in self._cache:
            st = self.states[i]
            self._cache[("phi", i)] = np.stack([featurize_step(st, a, self.horizon) for a in (0, 1)])
        return self._cache[("phi", i)]

    def reward_spec(self, i: int, profile=None) -> RewardSpec:
        return self._specs[self.states[i].group]

    def outcomes(self, i: int) -> np.ndarray:
        phi = self.features(i)
        return (phi @ self._theta + self.config.noise_sd * self._eps[i])[:, None]

    def expected_outcomes(self, i: int) -> np.ndarray:
        return (self.features(i) @ self._theta)[:, None]

    def realized_rewards(self, i: int) -> np.ndarray:
        return reward_values(self.reward_spec(i), self.outcomes(i), self.features(i))

    def rewards(self, i: int) -> np.ndarray:
        """Per-action rewards that regret is measured against."""
        if self.config.regret == "realized":
            return self.realized_rewards(i)
        return reward_values(self.reward_spec(i), self.expected_outcomes(i), self.features(i))

    def commit(self, i: int, a: int):
        """Apply action ``a`` to user ``i``; returns ``(y, reward)``."""
        y = self.outcomes(i)[a]
        reward = self.realized_rewards(i)[a]
        st = self.states[i]
        self.states[i] = replace(st, prev_steps=float(y[0]), notif_count=st.notif_count + int(a), t=st.t + 1)
        return y, float(reward)


def always_notify(state: StepUserState, config: StepSimConfig) -> int:
    return 1


def notify_below_goal(state: StepUserState, config: StepSimConfig) -> int:
    return int(state.prev_steps < config.goal(state.group))


def run_fixed_policy(rule, config: StepSimConfig, groups, seed: int):
    """Roll out a state-feedback rule; returns (steps, rewards) arrays of shape (T, P)."""
    env = StepCountEnv(config, groups, np.random.default_rng(seed))
    T, P = config.horizon, env.num_users
    steps = np.zeros((T, P))
    rewards = np.zeros((T, P))
    for t in range(T):
        env.begin_step(t)
        for i in range(P):
            a = rule(env.states[i], config)
            y, r = env.commit(i, a)
            steps[t, i] = y[0]
            rewards[t, i] = r
    return steps, rewards
