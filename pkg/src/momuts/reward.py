"""User-specific rewards as weighted sums of single-outcome utilities.

A reward is ``r(y, phi, a) = sum_k w_k * U_k(y[m_k], phi, a)`` with weights on
the simplex. Utilities come in four kinds:

* ``piecewise_linear_goal``: ``slope_below * y`` up to the goal,
  ``slope_above * y + intercept_above`` past it.
* ``quadratic_penalty``: ``-coef * n**2`` where ``n`` is a count read from
  the feature vector (optionally plus one if the action is not the control).
* ``action_preference``: ``scale * preference[a]``, constant in ``y``.
* ``identity``: ``y``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

KINDS = ("piecewise_linear_goal", "quadratic_penalty", "action_preference", "identity")


@dataclass(frozen=True)
class UtilitySpec:
    kind: str
    outcome_index: int = 0
    slope_below: float = 0.0
    slope_above: float = 0.0
    intercept_above: float = 0.0
    goal: float = 0.0
    coef: float = 0.0
    feature_index: int = 0
    count_current_action: bool = False
    preference: tuple = ()
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown utility kind {self.kind!r}; expected one of {KINDS}")
        if self.outcome_index < 0:
            raise ValueError("outcome_index must be non-negative")
        if self.kind == "quadratic_penalty" and self.coef < 0:
            raise ValueError("quadratic_penalty coefficient must be non-negative")
        if self.kind == "action_preference":
            object.__setattr__(self, "preference", tuple(float(p) for p in self.preference))
            if not self.preference:
                raise ValueError("action_preference needs a non-empty preference vector")

    @classmethod
    def from_dict(cls, record: dict) -> "UtilitySpec":
        record = dict(record)
        if "preference" in record:
            record["preference"] = tuple(record["preference"])
        return cls(**record)

    def to_dict(self) -> dict:
        keep = {
            "piecewise_linear_goal": ("slope_below", "slope_above", "intercept_above", "goal"),
            "quadratic_penalty": ("coef", "feature_index", "count_current_action"),
            "action_preference": ("preference", "scale"),
            "identity": (),
        }[self.kind]
        out = {"kind": self.kind, "outcome_index": self.outcome_index}
        for name in keep:
            value = getattr(self, name)
            out[name] = list(value) if isinstance(value, tuple) else value
        return out


@dataclass(frozen=True)
class RewardSpec:
    """Weighted utility terms; weights must sum to one."""

    terms: tuple = field(default_factory=tuple)

    def __post_init__(self):
        terms = tuple((float(w), u) for w, u in self.terms)
        object.__setattr__(self, "terms", terms)
        if not terms:
            raise ValueError("a reward needs at least one utility term")
        total = sum(w for w, _ in terms)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"utility weights must sum to 1, got {total!r}")

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.terms])

    @classmethod
    def from_records(cls, records: Sequence[dict]) -> "RewardSpec":
        terms = []
        for rec in records:
            rec = dict(rec)
            weight = rec.pop("weight")
            terms.append((weight, UtilitySpec.from_dict(rec)))
        return cls(tuple(terms))


def _utility_values(u: UtilitySpec, y, phi, actions) -> np.ndarray:
    """Evaluate ``u`` on aligned arrays: ``y`` (n,), ``phi`` (n, d), ``actions`` (n,)."""
    if u.kind == "identity":
        return y.astype(float, copy=True)
    if u.kind == "piecewise_linear_goal":
        return np.where(y <= u.goal, u.slope_below * y, u.slope_above * y + u.intercept_above)
    if u.kind == "quadratic_penalty":
        if not 0 <= u.feature_index < phi.shape[1]:
            raise ValueError(f"feature_index {u.feature_index} out of range for dimension {phi.shape[1]}")
        count = phi[:, u.feature_index]
        if u.count_current_action:
            count = count + (actions != 0)
        return -u.coef * count**2
    # action_preference
    pref = np.asarray(u.preference)
    if np.any((actions < 0) | (actions >= len(pref))):
        raise ValueError(f"action index out of range for {len(pref)} preferences")
    return u.scale * pref[actions]


def reward_values(r: RewardSpec, Y, Phi, actions=None) -> np.ndarray:
    """Vectorized reward over candidate rows.

    Args:
        r: the reward.
        Y: (n, M) outcomes.
        Phi: (n, d) features.
        actions: (n,) action indices; defaults to ``arange(n)`` (one row per action).
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    n = Y.shape[0]
    actions = np.arange(n) if actions is None else np.asarray(actions, dtype=int).reshape(n)
    total = np.zeros(n)
    for w, u in r.terms:
        if u.outcome_index >= Y.shape[1]:
            raise ValueError(f"outcome_index {u.outcome_index} out of range for {Y.shape[1]} outcomes")
        total += w * _utility_values(u, Y[:, u.outcome_index], Phi, actions)
    return total


def eval_utility(u: UtilitySpec, y_mk: float, phi, a: int) -> float:
    phi = np.asarray(phi, dtype=float)[None, :]
    return float(_utility_values(u, np.array([float(y_mk)]), phi, np.array([int(a)]))[0])


def eval_reward(r: RewardSpec, y, phi, a: int) -> float:
    return float(reward_values(r, np.atleast_1d(y)[None, :], np.asarray(phi)[None, :], [a])[0])


def lipschitz_bound(u: UtilitySpec) -> tuple[float, bool]:
    """Per-region Lipschitz constant in ``y`` and whether ``u`` is continuous in ``y``."""
    if u.kind == "identity":
        return 1.0, True
    if u.kind == "piecewise_linear_goal":
        left = u.slope_below * u.goal
        right = u.slope_above * u.goal + u.intercept_above
        return max(abs(u.slope_below), abs(u.slope_above)), bool(np.isclose(left, right, rtol=0, atol=1e-12))
    return 0.0, True


def preference_reward(alpha, beta: float, gamma: float, outcome_index: int = 0) -> RewardSpec:
    """``beta * gamma * alpha(a) + (1 - beta) * y`` as a two-term reward."""
    return RewardSpec((
        (beta, UtilitySpec("action_preference", outcome_index, preference=tuple(alpha), scale=gamma)),
        (1.0 - beta, UtilitySpec("identity", outcome_index)),
    ))
