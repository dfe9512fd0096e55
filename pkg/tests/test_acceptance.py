"""End-to-end acceptance checks, one per criterion, each printing a PASS/FAIL line.

The experiments run from the bundled configs. Real-data calibration runs only
when MOMUTS_GYM_CSV points at a gym export.
"""
import os
import time

import numpy as np
import pytest
from scipy.stats import binomtest

from momuts import data
from momuts.cli import policy_configs, seeds_for, world_from_config
from momuts.config import bundled_config_path, load_config
from momuts.eval import loglog_slope, run_many, run_trial, summarize
from momuts.experiments import (
    alignment_by_week,
    build_world,
    gym_env_factory,
    run_experiment,
    step_env_factory,
    visits_by_week,
)
from momuts.policy import PolicyConfig, PolicyKind, select_action
from momuts.posterior import OutcomePosterior
from momuts.reward import RewardSpec, UtilitySpec, lipschitz_bound, reward_values
from momuts.sim_gym import stochastic_round
from momuts.sim_stepcount import always_notify, make_groups, notify_below_goal, run_fixed_policy


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")


def bundled(name, *overrides):
    return load_config(bundled_config_path(name), overrides)


@pytest.fixture(scope="module")
def step_regret_run():
    cfg = bundled("step_regret")
    factory = step_env_factory(cfg.stepcount.sim_config(), cfg.stepcount.num_active, cfg.stepcount.num_inactive)
    start = time.perf_counter()
    raw, summaries = run_experiment(factory, policy_configs(cfg), seeds_for(cfg), cfg.mode)
    return summaries, time.perf_counter() - start, cfg.trials


@pytest.fixture(scope="module")
def gym_world():
    return world_from_config(bundled("gym_regret"))


def test_criterion_1_posterior_matches_dense_ridge(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 6))
        M = int(rng.integers(1, 4))
        n = int(rng.integers(0, 51))
        lam = float(rng.uniform(0.1, 5.0))
        Phi = rng.normal(size=(n, d))
        Y = rng.normal(size=(n, M))
        post = OutcomePosterior(d, M, lam)
        for phi, y in zip(Phi, Y):
            post.update(phi, y)
        ref = np.linalg.solve(Phi.T @ Phi + lam * np.eye(d), Phi.T @ Y).T
        denom = np.maximum(np.abs(ref), 1e-12)
        worst = max(worst, float(np.max(np.abs(post.mean - ref) / denom)) if n else float(np.abs(post.mean).max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 5
    report(capsys, 1, ok, f"max relative error {worst:.2e} (<= 1e-8), {elapsed:.2f}s (< 5s)")
    assert ok


def test_criterion_2_always_notify_more_steps_less_reward(capsys):
    cfg = bundled("notify_rules")
    sim = cfg.stepcount.sim_config()
    groups = make_groups(cfg.stepcount.num_active, cfg.stepcount.num_inactive)
    start = time.perf_counter()
    more_steps = less_reward = 0
    seeds = seeds_for(cfg)
    for seed in seeds:
        s_all, r_all = run_fixed_policy(always_notify, sim, groups, seed)
        s_thr, r_thr = run_fixed_policy(notify_below_goal, sim, groups, seed)
        more_steps += s_all.mean() > s_thr.mean()
        less_reward += r_all.sum(axis=0).mean() < r_thr.sum(axis=0).mean()
    elapsed = time.perf_counter() - start
    n = len(seeds)
    p_steps = binomtest(more_steps, n, 0.5, alternative="greater").pvalue
    p_reward = binomtest(less_reward, n, 0.5, alternative="greater").pvalue
    ok = n >= 30 and cfg.stepcount.num_active == 20 and p_steps < 0.01 and p_reward < 0.01 and elapsed < 60
    report(capsys, 2, ok, f"more steps {more_steps}/{n} (p={p_steps:.2g}), less reward {less_reward}/{n} "
                          f"(p={p_reward:.2g}), {elapsed:.1f}s")
    assert ok


def test_criterion_3_step_regret_ordering(capsys, step_regret_run):
    s, elapsed, trials = step_regret_run
    final = {k: (v.mean[-1], v.se[-1]) for k, v in s.items()}
    mo, ns = final["momu_ts"], final["momu_ts_no_sharing"]
    ts, rnd = final["ts_outcome"], final["random_uniform"]
    ordering = mo[0] < ns[0] < min(ts[0], rnd[0])
    separated = mo[0] + mo[1] < ts[0] - ts[1]
    ok = trials >= 100 and ordering and separated and elapsed < 600
    report(capsys, 3, ok, "final regret " + ", ".join(f"{k} {m:.3f}+-{e:.3f}" for k, (m, e) in final.items())
           + f"; {trials} trials in {elapsed:.0f}s")
    assert ok


def test_criterion_4_misspecified_baselines_superlinear(capsys, step_regret_run):
    s, _, _ = step_regret_run
    slopes = {k: loglog_slope(s[k].mean, 50, 100) for k in ("random_uniform", "ts_outcome")}
    ok = all(v > 1.05 for v in slopes.values())
    report(capsys, 4, ok, "log-log slopes on [50,100]: " + ", ".join(f"{k} {v:.3f}" for k, v in slopes.items())
           + " (> 1.05)")
    assert ok


def test_criterion_5_sublinear_growth(capsys):
    cfg = bundled("step_regret_growth", "stepcount.horizon=400")
    factory = step_env_factory(cfg.stepcount.sim_config(), cfg.stepcount.num_active, cfg.stepcount.num_inactive)
    raw = run_many(factory, [PolicyConfig("momu_ts")], seeds_for(cfg))
    mean = summarize([c for _, c in raw["momu_ts"]], "momu_ts").mean
    r1 = mean[199] / mean[99]
    r2 = mean[399] / mean[199]
    ok = cfg.trials >= 30 and r1 <= 1.8 and r2 <= 1.8
    report(capsys, 5, ok, f"BR(200)/BR(100) = {r1:.3f}, BR(400)/BR(200) = {r2:.3f} (<= 1.8), {cfg.trials} seeds")
    assert ok


def test_criterion_6_preference_alignment(capsys, gym_world):
    cfg = bundled("gym_alignment")
    start = time.perf_counter()
    factory = gym_env_factory(gym_world, cfg.gym.sim_config(cfg.gym.beta_modes[0]))
    raw, _ = run_experiment(factory, policy_configs(cfg), seeds_for(cfg), cfg.mode)
    elapsed = time.perf_counter() - start
    align = {k: alignment_by_week(v) for k, v in raw.items()}
    visits = {k: visits_by_week(v).mean() for k, v in raw.items()}
    n_users = raw["momu_ts"][0][0].actions.shape[1]
    dominant = all(np.all(align["momu_ts"] > align[k]) for k in ("ts_outcome", "random_uniform"))
    spread = (max(visits.values()) - min(visits.values())) / min(visits.values())
    ok = dominant and spread < 0.15 and cfg.trials >= 10 and cfg.gym.horizon == 4 and elapsed < 120
    detail = "; ".join(f"{k} alignment {np.round(a, 3).tolist()}" for k, a in align.items())
    report(capsys, 6, ok, f"{detail}; visits spread {spread:.1%} (< 15%); P={n_users}; {elapsed:.0f}s")
    assert ok


def test_criterion_7_gym_regret(capsys, gym_world):
    cfg = bundled("gym_regret")
    lines = []
    ok = len(cfg.policies) == 6 and cfg.trials >= 10
    for mode in cfg.gym.beta_modes:
        factory = gym_env_factory(gym_world, cfg.gym.sim_config(mode))
        _, s = run_experiment(factory, policy_configs(cfg), seeds_for(cfg), cfg.mode)
        final = {k: v.mean[-1] for k, v in s.items()}
        best = min(final, key=final.get)
        ok = ok and best == "momu_ts" and all(final["momu_ts"] < v for k, v in final.items() if k != "momu_ts")
        lines.append(f"{mode}: " + ", ".join(f"{k} {v:.1f}" for k, v in final.items()))
    report(capsys, 7, ok, " | ".join(lines))
    assert ok


def test_criterion_8_real_data_rmse(capsys):
    path = os.environ.get("MOMUTS_GYM_CSV")
    if not path or not os.path.exists(path):
        with capsys.disabled():
            print("\n[criterion 8] SKIP: set MOMUTS_GYM_CSV to the real gym export to check the held-out RMSE")
        pytest.skip("real gym dataset not supplied")
    pool = data.parse_gym_csv(path)
    world = build_world(pool, [], gamma=7.59)
    rmse = world.info["test_rmse"]
    ok = abs(rmse - 1.05) <= 0.05
    report(capsys, 8, ok, f"held-out RMSE {rmse:.4f} (1.05 +- 0.05)")
    assert ok


def test_criterion_9_unit_properties(capsys):
    start = time.perf_counter()
    checks = {}
    rng = np.random.default_rng(0)

    # Lipschitz constants of continuous utilities hold on random pairs
    lip_ok = True
    for u in (UtilitySpec("identity"),
              UtilitySpec("piecewise_linear_goal", slope_below=0.5, slope_above=0.25, intercept_above=2.5, goal=10.0)):
        L, cont = lipschitz_bound(u)
        r = RewardSpec(((1.0, u),))
        y1, y2 = rng.uniform(-30, 30, (2, 10_000))
        phi = np.zeros((10_000, 1))
        d = np.abs(reward_values(r, y1[:, None], phi, np.zeros(10_000)) - reward_values(r, y2[:, None], phi, np.zeros(10_000)))
        lip_ok &= cont and bool(np.all(d <= L * np.abs(y1 - y2) + 1e-12))
    checks["lipschitz"] = lip_ok

    checks["alpha/beta endpoints"] = (
        np.allclose(data.likert_to_alpha([0] * 5), 1 / 6)
        and abs(data.likert_to_beta(0) - 0.1) < 1e-12 and abs(data.likert_to_beta(4) - 0.9) < 1e-12
    )

    u = rng.random(100_000)
    checks["rounding unbiased"] = all(
        abs(np.mean([stochastic_round(y, u=v) for v in u]) - y) <= 0.01 * y for y in (1.25, 3.6)
    )

    pool, surveys = data.synth_cohort(data.SynthSpec(n_pool=1000, n_survey=209), np.random.default_rng(1))
    crit = data.MatchCriteria()
    res = data.match_participants(surveys, pool, crit, np.random.default_rng(2))
    checks["matching criteria"] = all(data.check_match(s, p, crit) for s, p in res.pairs)

    post = OutcomePosterior(4, 1).update_batch(rng.normal(size=(20, 4)), rng.normal(size=(20, 1)))
    feats = rng.normal(size=(5, 4))
    identity = RewardSpec(((1.0, UtilitySpec("identity")),))
    checks["identity reduction"] = all(
        select_action(PolicyKind.MOMU_TS, post, identity, feats, np.random.default_rng(s))
        == select_action(PolicyKind.TS_OUTCOME, post, identity, feats, np.random.default_rng(s))
        for s in range(200)
    )

    cfg = bundled("step_regret", "stepcount.horizon=20")
    factory = step_env_factory(cfg.stepcount.sim_config(), 3, 3)
    a = run_trial(factory, PolicyConfig("momu_ts"), 5)[1].cumulative
    b = run_trial(factory, PolicyConfig("momu_ts"), 5)[1].cumulative
    checks["determinism"] = a.tobytes() == b.tobytes()

    elapsed = time.perf_counter() - start
    ok = all(checks.values()) and elapsed < 60
    report(capsys, 9, ok, ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in checks.items()) + f"; {elapsed:.1f}s")
    assert ok
