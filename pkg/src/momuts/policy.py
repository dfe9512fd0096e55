"""Action selection for the multi-objective Thompson sampler and its baselines.

Environments are duck-typed. A policy needs these members from one:

* ``num_users``, ``num_actions``, ``dim``, ``num_outcomes``
* ``features(i)``: (A, d) array, one feature row per action
* ``reward_spec(i, profile=None)``: the reward of user ``i`` at the current
  step, optionally rebuilt from a substitute preference profile
* ``outcomes(i)`` / ``rewards(i)``: realized outcomes and rewards of every
  action under the current step's shared noise
* ``commit(i, a)``: apply action ``a`` and return ``(y, reward)``
* ``preference_profiles``: list of profiles, or ``None`` if there are none
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .posterior import OutcomePosterior
from .reward import RewardSpec, reward_values


class PolicyKind(str, enum.Enum):
    MOMU_TS = "momu_ts"
    TS_OUTCOME = "ts_outcome"
    RANDOM = "random_uniform"
    NO_SHARING = "momu_ts_no_sharing"
    AVG_PREF = "momu_ts_avg_pref"
    UNIFORM_PREF = "momu_ts_uniform_pref"
    ORACLE = "oracle"


class AssignmentMode(str, enum.Enum):
    SEQUENTIAL = "sequential"
    PARALLEL = "parallel"


SAMPLING_KINDS = {
    PolicyKind.MOMU_TS,
    PolicyKind.TS_OUTCOME,
    PolicyKind.NO_SHARING,
    PolicyKind.AVG_PREF,
    PolicyKind.UNIFORM_PREF,
}


@dataclass(frozen=True)
class PolicyConfig:
    kind: PolicyKind = PolicyKind.MOMU_TS
    outcome_index: int = 0
    prior_precision: float = 1.0
    noise_var: float = 1.0
    uniform_beta: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.outcome_index < 0:
            raise ValueError("outcome_index must be non-negative")


@dataclass
class StepRecord:
    user: int
    action: int
    outcome: np.ndarray
    reward: float
    # realized reward of every action under the same noise draw
    counterfactual: np.ndarray


def argmax_random_tie(values, rng: np.random.Generator) -> int:
    values = np.asarray(values)
    best = np.flatnonzero(values == values.max())
    if len(best) == 1:
        return int(best[0])
    return int(best[rng.integers(len(best))])


def choose_from_draw(kind: PolicyKind, theta, reward_spec: RewardSpec, features, rng,
                     outcome_index: int = 0) -> int:
    """Greedy action under one parameter draw ``theta`` of shape (M, d)."""
    features = np.asarray(features, dtype=float)
    y_tilde = features @ np.asarray(theta).T
    if kind is PolicyKind.TS_OUTCOME:
        return argmax_random_tie(y_tilde[:, outcome_index], rng)
    return argmax_random_tie(reward_values(reward_spec, y_tilde, features), rng)


def select_action(kind, posterior: OutcomePosterior | None, reward_spec: RewardSpec, features,
                  rng: np.random.Generator, outcome_index: int = 0) -> int:
    """Pick an action for one user.

    Sampling variants draw ``theta ~ posterior``, predict every action's
    outcomes and maximize the reward (or, for ``ts_outcome``, the designated
    outcome). Ties are broken uniformly at random.
    """
    kind = PolicyKind(kind)
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("need a non-empty (A, d) array of per-action features")
    if kind is PolicyKind.RANDOM:
        return int(rng.integers(features.shape[0]))
    if kind is PolicyKind.ORACLE:
        raise ValueError("the oracle policy needs the environment; use Policy.select")
    theta = posterior.sample(rng)
    return choose_from_draw(kind, theta, reward_spec, features, rng, outcome_index)


def mean_profile(profiles):
    from .sim_gym import PreferenceProfile

    alpha = np.mean([p.alpha for p in profiles], axis=0)
    beta = float(np.mean([p.beta for p in profiles]))
    return PreferenceProfile(alpha / alpha.sum(), beta)


class Policy:
    """A policy bound to one environment, owning its posterior state."""

    def __init__(self, config: PolicyConfig, env):
        self.config = config
        self.kind = config.kind
        self.num_users = env.num_users
        self.posteriors: list[OutcomePosterior] = []
        if self.kind is PolicyKind.NO_SHARING:
            self.posteriors = [self._new_posterior(env) for _ in range(env.num_users)]
        elif self.kind in SAMPLING_KINDS:
            self.posteriors = [self._new_posterior(env)]
        self.profile_override = None
        if self.kind in (PolicyKind.AVG_PREF, PolicyKind.UNIFORM_PREF):
            profiles = env.preference_profiles
            if profiles is None:
                raise ValueError(f"{self.kind.value} needs an environment with preference profiles")
            if self.kind is PolicyKind.AVG_PREF:
                self.profile_override = mean_profile(profiles)
            else:
                from .sim_gym import PreferenceProfile

                self.profile_override = PreferenceProfile(
                    np.full(env.num_actions, 1.0 / env.num_actions), config.uniform_beta)

    def _new_posterior(self, env) -> OutcomePosterior:
        return OutcomePosterior(env.dim, env.num_outcomes, self.config.prior_precision, self.config.noise_var)

    @property
    def posterior(self) -> OutcomePosterior | None:
        """The shared posterior (first private one for ``momu_ts_no_sharing``)."""
        return self.posteriors[0] if self.posteriors else None

    def posterior_for(self, i: int) -> OutcomePosterior | None:
        if not self.posteriors:
            return None
        return self.posteriors[i] if self.kind is PolicyKind.NO_SHARING else self.posteriors[0]

    def reward_spec_for(self, env, i: int) -> RewardSpec:
        if self.profile_override is not None:
            return env.reward_spec(i, profile=self.profile_override)
        return env.reward_spec(i)

    def select(self, env, i: int, rng: np.random.Generator, theta=None) -> int:
        if self.kind is PolicyKind.ORACLE:
            return argmax_random_tie(env.rewards(i), rng)
        if self.kind is PolicyKind.RANDOM:
            return int(rng.integers(env.num_actions))
        if theta is None:
            theta = self.posterior_for(i).sample(rng)
        return choose_from_draw(self.kind, theta, self.reward_spec_for(env, i), env.features(i), rng,
                                self.config.outcome_index)

    def observe(self, i: int, phi, y) -> None:
        post = self.posterior_for(i)
        if post is not None:
            post.update(phi, y)

    def observe_many(self, users, phis, ys) -> None:
        if not self.posteriors:
            return
        if self.kind is PolicyKind.NO_SHARING:
            for i, phi, y in zip(users, phis, ys):
                self.posteriors[i].update(phi, y)
        else:
            self.posteriors[0].update_batch(np.asarray(phis), np.asarray(ys))


def _assign(policy: Policy, env, i: int, rng, theta=None):
    phi_all = env.features(i)
    counterfactual = np.asarray(env.rewards(i), dtype=float)
    a = policy.select(env, i, rng, theta)
    y, r = env.commit(i, a)
    return StepRecord(i, a, np.asarray(y, dtype=float), r, counterfactual), phi_all[a]


def step_cohort(policy: Policy, env, t: int, mode, rng: np.random.Generator) -> list[StepRecord]:
    """Assign actions to every user at time ``t`` and update the posterior(s).

    Sequential mode updates after each user. Parallel mode draws all actions
    from the posterior as it stood at the start of ``t`` and ingests the
    cohort's observations afterwards. The caller must have called
    ``env.begin_step(t)``.
    """
    mode = AssignmentMode(mode)
    records = []
    if mode is AssignmentMode.SEQUENTIAL:
        for i in range(env.num_users):
            rec, phi = _assign(policy, env, i, rng)
            policy.observe(i, phi, rec.outcome)
            records.append(rec)
        return records

    thetas = None
    if policy.kind in SAMPLING_KINDS and policy.kind is not PolicyKind.NO_SHARING:
        thetas = policy.posterior.sample(rng, size=env.num_users)
    phis = []
    for i in range(env.num_users):
        rec, phi = _assign(policy, env, i, rng, None if thetas is None else thetas[i])
        records.append(rec)
        phis.append(phi)
    policy.observe_many([r.user for r in records], phis, [r.outcome for r in records])
    return records
