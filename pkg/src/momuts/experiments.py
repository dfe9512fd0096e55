"""Environment factories and end-to-end experiment drivers.

Factories are module-level callables (or ``functools.partial`` of them) so
that worker processes can unpickle them.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from . import data
from .eval import emit_csv, emit_json, loglog_slope, run_many, summarize
from .policy import AssignmentMode, PolicyConfig
from .sim_gym import GymEnv, GymSimConfig, OutcomeModel
from .sim_stepcount import StepCountEnv, StepSimConfig, make_groups


def _step_env(config: StepSimConfig, groups, rng):
    return StepCountEnv(config, groups, rng)


def step_env_factory(config: StepSimConfig, num_active: int, num_inactive: int):
    return functools.partial(_step_env, config, tuple(make_groups(num_active, num_inactive)))


@dataclass
class GymWorld:
    """A fitted outcome model, a matching pool and the survey batch to match against it."""

    model: OutcomeModel
    pool: list
    surveys: list
    gamma: float
    criteria: data.MatchCriteria = field(default_factory=data.MatchCriteria)
    info: dict = field(default_factory=dict)

    def sample_env(self, config: GymSimConfig, rng: np.random.Generator) -> GymEnv:
        """Match every survey record to a pool member and wrap the result in a fresh environment."""
        match = data.match_participants(self.surveys, self.pool, self.criteria, rng)
        if not match.pairs:
            raise RuntimeError("no survey record could be matched to the pool")
        matched = [s for s, _ in match.pairs]
        profiles = data.preference_profiles(matched, rng)
        participants = [p for _, p in match.pairs]
        cfg = config if config.gamma == self.gamma else _with_gamma(config, self.gamma)
        return GymEnv(self.model, participants, profiles, cfg, rng)


def _with_gamma(config: GymSimConfig, gamma: float) -> GymSimConfig:
    from dataclasses import replace

    return replace(config, gamma=gamma)


def _gym_env(world: GymWorld, config: GymSimConfig, rng):
    return world.sample_env(config, rng)


def gym_env_factory(world: GymWorld, config: GymSimConfig):
    return functools.partial(_gym_env, world, config)


def build_world(pool, surveys, ridge_lambda: float = 1.0, gamma: float | None = None,
                n_train_cohorts: int = 13, criteria: data.MatchCriteria | None = None) -> GymWorld:
    """Fit the outcome model on training cohorts and set up matching against the full pool.

    With ``gamma=None`` the reward scale becomes six times the mean held-out
    weekly visit count.
    """
    train, test = data.split_by_cohort(pool, n_train_cohorts)
    X, y, _, _ = data.regression_rows(train)
    model = data.fit_outcome_model(X, y, ridge_lambda)
    Xt, yt, _, _ = data.regression_rows(test)
    rmse, table = data.calibration_report(model, Xt, yt) if len(yt) else (float("nan"), [])
    if gamma is None:
        gamma = 6.0 * float(yt.mean())
    info = {"train_rows": int(len(y)), "test_rows": int(len(yt)), "test_rmse": rmse,
            "calibration": table, "gamma": float(gamma)}
    return GymWorld(model, list(pool), list(surveys), float(gamma), criteria or data.MatchCriteria(), info)


def synthetic_world(seed: int = 0, spec: data.SynthSpec | None = None, ridge_lambda: float = 1.0) -> GymWorld:
    pool, surveys = data.synth_cohort(spec or data.SynthSpec(), np.random.default_rng(seed))
    return build_world(pool, surveys, ridge_lambda)


def alignment_by_week(trials) -> np.ndarray:
    """Mean preference alignment of chosen actions per week, averaged over users then trials."""
    return np.mean([np.nanmean(traj.alignment, axis=1) for traj, _ in trials], axis=0)


def visits_by_week(trials) -> np.ndarray:
    return np.mean([traj.outcomes[:, :, 0].mean(axis=1) for traj, _ in trials], axis=0)


def run_experiment(env_factory, policies, seeds, mode=AssignmentMode.PARALLEL, workers=None,
                   csv_path=None, json_path=None, config_record: dict | None = None):
    """Run all policies over ``seeds``; returns ``(raw, summaries)`` and optionally writes outputs."""
    configs = [p if isinstance(p, PolicyConfig) else PolicyConfig(p) for p in policies]
    raw = run_many(env_factory, configs, seeds, mode=mode, workers=workers)
    summaries = {name: summarize([c for _, c in trials], name) for name, trials in raw.items()}
    extra = {}
    if any(not np.all(np.isnan(trials[0][0].alignment)) for trials in raw.values()):
        extra["alignment_by_week"] = {k: alignment_by_week(v).tolist() for k, v in raw.items()}
        extra["visits_by_week"] = {k: visits_by_week(v).tolist() for k, v in raw.items()}
    if csv_path is not None:
        emit_csv(summaries, csv_path)
    if json_path is not None:
        emit_json(summaries, json_path, config_record, extra)
    return raw, summaries


__all__ = [
    "GymWorld", "build_world", "synthetic_world", "step_env_factory", "gym_env_factory",
    "run_experiment", "alignment_by_week", "visits_by_week", "loglog_slope",
]
