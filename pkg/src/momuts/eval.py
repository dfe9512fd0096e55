"""Seeded trials, per-realization regret and cross-trial aggregation."""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .policy import AssignmentMode, Policy, PolicyConfig, PolicyKind, step_cohort


@dataclass
class RegretCurve:
    instantaneous: np.ndarray
    cumulative: np.ndarray
    policy: str
    seed: int

    @classmethod
    def from_instantaneous(cls, inst, policy: str, seed: int) -> "RegretCurve":
        inst = np.asarray(inst, dtype=float)
        return cls(inst, np.cumsum(inst), policy, seed)


@dataclass
class Trajectory:
    """Per-(t, user) arrays of a trial; ``alignment`` is NaN without preferences."""

    actions: np.ndarray
    outcomes: np.ndarray
    rewards: np.ndarray
    regrets: np.ndarray
    alignment: np.ndarray


@dataclass
class SummaryStats:
    policy: str
    mean: np.ndarray
    se: np.ndarray
    trials: int
    seeds: list = field(default_factory=list)


def instantaneous_regret(counterfactual, chosen: int) -> float:
    """``max_a r(a) - r(chosen)`` with every ``r(a)`` realized under the same noise."""
    counterfactual = np.asarray(counterfactual, dtype=float)
    return float(counterfactual.max() - counterfactual[chosen])


def trial_rngs(seed: int):
    """Independent (environment, policy) generators derived from one seed."""
    env_ss, pol_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(env_ss), np.random.default_rng(pol_ss)


def run_trial(env_factory: Callable, policy_config: PolicyConfig, seed: int, horizon: int | None = None,
              mode=AssignmentMode.PARALLEL):
    """Roll out one policy; returns ``(Trajectory, RegretCurve)``.

    ``env_factory(rng)`` builds a fresh environment. The environment stream is
    seeded independently of the policy stream, so two policies run with the
    same seed face the same noise realizations.
    """
    env_rng, pol_rng = trial_rngs(seed)
    env = env_factory(env_rng)
    T = env.horizon if horizon is None else horizon
    P = env.num_users
    policy = Policy(policy_config, env)
    profiles = env.preference_profiles
    actions = np.zeros((T, P), dtype=int)
    outcomes = np.zeros((T, P, env.num_outcomes))
    rewards = np.zeros((T, P))
    regrets = np.zeros((T, P))
    alignment = np.full((T, P), np.nan)
    for t in range(T):
        env.begin_step(t)
        for rec in step_cohort(policy, env, t, mode, pol_rng):
            i = rec.user
            actions[t, i] = rec.action
            outcomes[t, i] = rec.outcome
            rewards[t, i] = rec.reward
            regrets[t, i] = instantaneous_regret(rec.counterfactual, rec.action)
            if profiles is not None:
                alignment[t, i] = profiles[i].alpha[rec.action]
    traj = Trajectory(actions, outcomes, rewards, regrets, alignment)
    curve = RegretCurve.from_instantaneous(regrets.sum(axis=1), policy_config.kind.value, seed)
    return traj, curve


def summarize(curves, policy: str) -> SummaryStats:
    stack = np.array([c.cumulative for c in curves], dtype=float)
    n = len(curves)
    if n == 0:
        raise ValueError("need at least one trial")
    mean = stack.mean(axis=0)
    se = stack.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return SummaryStats(policy, mean, se, n, [c.seed for c in curves])


def _run_task(task):
    env_factory, policy_config, seed, mode = task
    traj, curve = run_trial(env_factory, policy_config, seed, mode=mode)
    return traj, curve


def run_many(env_factory, policy_configs, seeds, mode=AssignmentMode.PARALLEL, workers: int | None = None):
    """Run every (policy, seed) pair; returns ``{policy: [(Trajectory, RegretCurve), ...]}``.

    Results are ordered by (policy, seed) regardless of completion order.
    """
    tasks = [(env_factory, pc, int(s), AssignmentMode(mode)) for pc in policy_configs for s in seeds]
    workers = (os.cpu_count() or 1) if workers is None else max(1, int(workers))
    if workers == 1 or len(tasks) == 1:
        results = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks))
    out: dict = {}
    for (_, pc, _, _), res in zip(tasks, results):
        out.setdefault(pc.kind.value, []).append(res)
    return out


def emit_csv(results: dict, path) -> None:
    """Write ``policy,t,mean_cum_regret,se_cum_regret,trials`` rows (t is 1-based)."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["policy", "t", "mean_cum_regret", "se_cum_regret", "trials"])
            for name, stats in results.items():
                for t, (m, s) in enumerate(zip(stats.mean, stats.se), start=1):
                    writer.writerow([name, t, repr(float(m)), repr(float(s)), stats.trials])
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def emit_json(results: dict, path, config: dict | None = None, extra: dict | None = None) -> None:
    path = Path(path)
    payload = {
        "config": config or {},
        "policies": {
            name: {
                "mean_cum_regret": [float(v) for v in stats.mean],
                "se_cum_regret": [float(v) for v in stats.se],
                "trials": stats.trials,
                "seeds": [int(s) for s in stats.seeds],
            }
            for name, stats in results.items()
        },
    }
    if extra:
        payload.update(extra)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def loglog_slope(cumulative, t_lo: int, t_hi: int) -> float:
    """Least-squares slope of log cumulative regret against log t over ``[t_lo, t_hi]`` (1-based)."""
    t = np.arange(t_lo, t_hi + 1)
    y = np.asarray(cumulative, dtype=float)[t - 1]
    if np.any(y <= 0):
        raise ValueError("cumulative regret must be positive on the fitted range")
    return float(np.polyfit(np.log(t), np.log(y), 1)[0])
