"""Semi-synthetic gym-attendance environment.

Weekly visits (integers 0-7) come from a fitted linear outcome model over a
27-dimensional history featurization, rounded stochastically. The reward
mixes preference alignment and visits:

    r = beta_t * gamma * alpha(a) + (1 - beta_t) * y

Action 0 is the placebo control. Actions 1-5 follow ``ACTION_NAMES``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .reward import RewardSpec, preference_reward, reward_values

ACTION_NAMES = (
    "control",
    "financial_incentive",
    "value_affirming_message",
    "workout_planning_notification",
    "visit_count_reflection_notification",
    "commitment_device",
)
NUM_ACTIONS = len(ACTION_NAMES)
NUM_STATES = 10
MAX_VISITS = 7

FEATURE_NAMES = (
    ["age"]
    + [f"state_{k}" for k in range(NUM_STATES)]
    + ["gender", "new_member", "hist_mean", "hist_min", "hist_max", "lag1", "lag2",
       "longest_streak", "num_streaks", "treated", "cum_treated"]
    + [f"action_{k}" for k in range(1, NUM_ACTIONS)]
)
FEATURE_DIM = len(FEATURE_NAMES)  # 27


@dataclass
class GymParticipant:
    """A gym member with pre-study history and (optionally) logged study weeks.

    ``visit_history`` and ``assigned_action_history`` hold the pre-study weeks
    (actions all 0). ``logged_visits`` / ``logged_actions`` hold what the
    original study recorded for the study weeks, when known.
    """

    id: str
    age: float
    gender: int
    state_idx: int
    new_member: bool
    visit_history: list
    assigned_action_history: list = field(default_factory=list)
    logged_visits: list = field(default_factory=list)
    logged_actions: list = field(default_factory=list)
    cohort: int | None = None

    def __post_init__(self):
        if not 0 <= self.state_idx < NUM_STATES:
            raise ValueError(f"state index must be in [0, {NUM_STATES - 1}], got {self.state_idx}")
        for v in list(self.visit_history) + list(self.logged_visits):
            if not 0 <= v <= MAX_VISITS:
                raise ValueError(f"weekly visits must be in [0, {MAX_VISITS}], got {v}")
        if not self.assigned_action_history:
            self.assigned_action_history = [0] * len(self.visit_history)

    @property
    def pre_mean(self) -> float:
        return float(np.mean(self.visit_history)) if self.visit_history else 0.0


@dataclass(frozen=True)
class PreferenceProfile:
    alpha: np.ndarray
    beta: float

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        object.__setattr__(self, "alpha", alpha)
        if np.any(alpha < 0) or abs(alpha.sum() - 1.0) > 1e-9:
            raise ValueError("alpha must lie on the probability simplex")
        if not 0.1 - 1e-12 <= self.beta <= 0.9 + 1e-12:
            raise ValueError(f"beta must be in [0.1, 0.9], got {self.beta}")


@dataclass(frozen=True)
class OutcomeModel:
    """Linear visit predictor ``phi . coef + intercept``.

    ``kind="dataset_passthrough"`` additionally returns the logged visits
    whenever the simulated action matches the one the study assigned.
    """

    coef: np.ndarray
    intercept: float
    kind: str = "ridge_linear"
    feature_names: tuple = tuple(FEATURE_NAMES)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("ridge_linear", "dataset_passthrough"):
            raise ValueError(f"unknown outcome model kind {self.kind!r}")
        object.__setattr__(self, "coef", np.asarray(self.coef, dtype=float))

    def predict(self, phi) -> np.ndarray:
        return np.asarray(phi, dtype=float) @ self.coef + self.intercept

    def with_kind(self, kind: str) -> "OutcomeModel":
        return OutcomeModel(self.coef, self.intercept, kind, self.feature_names, dict(self.metadata))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "feature_names": list(self.feature_names),
            "coef": [float(c) for c in self.coef],
            "intercept": float(self.intercept),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OutcomeModel":
        return cls(np.array(d["coef"]), float(d["intercept"]), d.get("kind", "ridge_linear"),
                   tuple(d.get("feature_names", FEATURE_NAMES)), dict(d.get("metadata", {})))


@dataclass(frozen=True)
class GymSimConfig:
    horizon: int = 4
    num_actions: int = NUM_ACTIONS
    gamma: float = 7.59
    beta_mode: str = "constant"
    passthrough: bool = True
    regret: str = "expected"

    def __post_init__(self):
        if self.beta_mode not in ("constant", "linear_decay"):
            raise ValueError(f"beta_mode must be 'constant' or 'linear_decay', got {self.beta_mode!r}")
        if self.beta_mode == "linear_decay" and self.horizon < 2:
            raise ValueError("linear beta decay needs a horizon of at least 2")
        if self.num_actions != NUM_ACTIONS:
            raise ValueError(f"the gym simulator has exactly {NUM_ACTIONS} actions")
        if self.regret not in ("expected", "realized"):
            raise ValueError(f"regret must be 'expected' or 'realized', got {self.regret!r}")


def streaks(history) -> tuple[int, int]:
    """Longest run and number of runs of 2+ consecutive weeks with more than one visit."""
    longest = count = run = 0
    for v in list(history) + [0]:
        if v > 1:
            run += 1
            continue
        if run >= 2:
            count += 1
            longest = max(longest, run)
        run = 0
    return longest, count


def featurize_history(age, gender, state_idx, new_member, visits, actions, a: int) -> np.ndarray:
    """Features for choosing action ``a`` after the given visit/action history."""
    if len(visits) == 0:
        raise ValueError("featurization needs a non-empty visit history")
    if not 0 <= a < NUM_ACTIONS:
        raise ValueError(f"action must be in [0, {NUM_ACTIONS - 1}], got {a}")
    visits = np.asarray(visits, dtype=float)
    phi = np.zeros(FEATURE_DIM)
    phi[0] = age
    phi[1 + state_idx] = 1.0
    phi[11] = gender
    phi[12] = float(new_member)
    phi[13] = visits.mean()
    phi[14] = visits.min()
    phi[15] = visits.max()
    phi[16] = visits[-1]
    phi[17] = visits[-2] if len(visits) > 1 else 0.0
    phi[18], phi[19] = streaks(visits)
    phi[20] = float(a != 0)
    phi[21] = float(np.count_nonzero(actions)) + float(a != 0)
    if a != 0:
        phi[21 + a] = 1.0
    return phi


def featurize_gym(p: GymParticipant, t: int, a: int) -> np.ndarray:
    """Features at study week ``t`` (0-based), using pre-study plus logged weeks before ``t``."""
    visits = list(p.visit_history) + list(p.logged_visits[:t])
    actions = list(p.assigned_action_history) + list(p.logged_actions[:t])
    return featurize_history(p.age, p.gender, p.state_idx, p.new_member, visits, actions, a)


def stochastic_round(y_hat: float, rng: np.random.Generator | None = None, u: float | None = None) -> int:
    """``floor(y_hat) + Bernoulli(frac(y_hat))`` clamped to [0, 7].

    ``u`` is an optional uniform draw, shared across actions for common noise.
    """
    if u is None:
        u = rng.random()
    base = np.floor(y_hat)
    y = base + (u < y_hat - base)
    return int(np.clip(y, 0, MAX_VISITS))


def gym_reward(profile: PreferenceProfile, beta_t: float, y: float, a: int, gamma: float) -> float:
    if not 0.0 <= beta_t <= 1.0:
        raise ValueError(f"beta_t must be in [0, 1], got {beta_t}")
    return float(beta_t * gamma * profile.alpha[a] + (1.0 - beta_t) * y)


def beta_schedule(beta_i: float, t: int, T: int, mode: str) -> float:
    """Preference weight at 1-based week ``t``; linear decay reaches 0 at ``t = T``."""
    if not 1 <= t <= T:
        raise ValueError(f"week {t} outside [1, {T}]")
    if mode == "constant":
        return float(beta_i)
    if mode == "linear_decay":
        if T < 2:
            raise ValueError("linear beta decay needs T >= 2")
        return float(beta_i * ((T - t) / (T - 1)))
    raise ValueError(f"unknown beta mode {mode!r}")


def predict_visits(model: OutcomeModel | None, p: GymParticipant, t: int, a: int) -> float:
    if model is None:
        raise RuntimeError("outcome model has not been fitted")
    return float(model.predict(featurize_gym(p, t, a)))


def _logged(p: GymParticipant, t: int, a: int):
    if t < len(p.logged_actions) and t < len(p.logged_visits) and p.logged_actions[t] == a:
        return p.logged_visits[t]
    return None


def simulate_week(model: OutcomeModel | None, p: GymParticipant, t: int, a: int, rng) -> int:
    if model is None:
        raise RuntimeError("outcome model has not been fitted")
    if model.kind == "dataset_passthrough":
        logged = _logged(p, t, a)
        if logged is not None:
            return int(logged)
    return stochastic_round(predict_visits(model, p, t, a), rng)


class GymEnv:
    """Cohort of matched gym participants.

    Each user carries a preference profile; the outcome model is shared and
    read-only. One uniform per user and week drives the stochastic rounding
    of every counterfactual action.
    """

    num_actions = NUM_ACTIONS
    dim = FEATURE_DIM
    num_outcomes = 1

    def __init__(self, model: OutcomeModel, participants, profiles, config: GymSimConfig, rng):
        if len(participants) != len(profiles):
            raise ValueError("need one preference profile per participant")
        self.model = model.with_kind("dataset_passthrough" if config.passthrough else "ridge_linear")
        self.config = config
        self.horizon = config.horizon
        self.rng = rng
        self.participants = list(participants)
        self.preference_profiles = list(profiles)
        self.visits = [list(p.visit_history) for p in self.participants]
        self.actions = [list(p.assigned_action_history) for p in self.participants]
        self.t = 0
        self._u = np.zeros(len(self.participants))
        self._cache: dict = {}

    @property
    def num_users(self) -> int:
        return len(self.participants)

    def begin_step(self, t: int) -> None:
        self.t = t
        self._u = self.rng.random(self.num_users)
        self._cache.clear()

    def beta_t(self, beta: float) -> float:
        return beta_schedule(beta, self.t + 1, self.horizon, self.config.beta_mode)

    def features(self, i: int) -> np.ndarray:
        key = ("phi", i)
        if key not in self._cache:
            p = self.participants[i]
            self._cache[key] = np.stack([
                featurize_history(p.age, p.gender, p.state_idx, p.new_member, self.visits[i], self.actions[i], a)
                for a in range(NUM_ACTIONS)
            ])
        return self._cache[key]

    def reward_spec(self, i: int, profile: PreferenceProfile | None = None) -> RewardSpec:
        profile = self.preference_profiles[i] if profile is None else profile
        return preference_reward(profile.alpha, self.beta_t(profile.beta), self.config.gamma)

    def _predictions(self, i: int) -> np.ndarray:
        key = ("pred", i)
        if key not in self._cache:
            self._cache[key] = self.model.predict(self.features(i))
        return self._cache[key]

    def outcomes(self, i: int) -> np.ndarray:
        pred = self._predictions(i)
        y = np.array([stochastic_round(v, u=self._u[i]) for v in pred], dtype=float)
        self._apply_passthrough(i, y)
        return y[:, None]

    def expected_outcomes(self, i: int) -> np.ndarray:
        y = np.clip(self._predictions(i), 0, MAX_VISITS)
        self._apply_passthrough(i, y)
        return y[:, None]

    def _apply_passthrough(self, i: int, y: np.ndarray) -> None:
        if self.model.kind != "dataset_passthrough":
            return
        p = self.participants[i]
        t = self.t
        if t < len(p.logged_actions) and t < len(p.logged_visits):
            y[p.logged_actions[t]] = p.logged_visits[t]

    def rewards(self, i: int) -> np.ndarray:
        y = self.expected_outcomes(i) if self.config.regret == "expected" else self.outcomes(i)
        return reward_values(self.reward_spec(i), y, self.features(i))

    def realized_rewards(self, i: int) -> np.ndarray:
        return reward_values(self.reward_spec(i), self.outcomes(i), self.features(i))

    def commit(self, i: int, a: int):
        y = self.outcomes(i)[a]
        r = float(self.realized_rewards(i)[a])
        self.visits[i].append(int(y[0]))
        self.actions[i].append(int(a))
        self._cache.pop(("phi", i), None)
        self._cache.pop(("pred", i), None)
        return y, r
