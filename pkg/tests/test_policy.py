import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import IDENTITY, LinearToyEnv
from momuts.eval import run_trial
from momuts.policy import (
    AssignmentMode,
    Policy,
    PolicyConfig,
    PolicyKind,
    argmax_random_tie,
    choose_from_draw,
    select_action,
    step_cohort,
)
from momuts.posterior import OutcomePosterior
from momuts.reward import RewardSpec, UtilitySpec
from momuts.sim_stepcount import StepSimConfig, build_reward_spec, featurize_step, StepUserState, StepGroup


def test_identity_reward_reduces_to_outcome_sampling():
    post = OutcomePosterior(3, 1).update([1.0, 0.2, -0.5], [1.3]).update([0.0, 1.0, 1.0], [-0.4])
    feats = np.random.default_rng(0).normal(size=(5, 3))
    for seed in range(50):
        a = select_action(PolicyKind.MOMU_TS, post, IDENTITY, feats, np.random.default_rng(seed))
        b = select_action(PolicyKind.TS_OUTCOME, post, IDENTITY, feats, np.random.default_rng(seed))
        assert a == b


def test_identity_reward_trajectories_match(toy_env_factory):
    factory = toy_env_factory(P=4)
    a, _ = run_trial(factory, PolicyConfig("momu_ts"), seed=5)
    b, _ = run_trial(factory, PolicyConfig("ts_outcome"), seed=5)
    np.testing.assert_array_equal(a.actions, b.actions)
    np.testing.assert_array_equal(a.rewards, b.rewards)


def test_exact_ties_split_evenly():
    rng = np.random.default_rng(0)
    picks = np.array([argmax_random_tie([1.0, 1.0, 0.0], rng) for _ in range(10_000)])
    assert set(picks) == {0, 1}
    assert abs(np.mean(picks == 0) - 0.5) < 0.05


def test_unique_argmax_consumes_no_randomness():
    rng = np.random.default_rng(0)
    state = rng.bit_generator.state
    assert argmax_random_tie([0.0, 2.0, 1.0], rng) == 1
    assert rng.bit_generator.state == state


def test_preference_only_reward_ignores_posterior():
    pref = (0.1, 0.6, 0.3)
    r = RewardSpec(((1.0, UtilitySpec("action_preference", preference=pref)),))
    post = OutcomePosterior(2, 1).update([1.0, 0.0], [100.0])
    feats = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    for seed in range(20):
        assert select_action(PolicyKind.MOMU_TS, post, r, feats, np.random.default_rng(seed)) == 1


def test_oracle_needs_the_environment():
    with pytest.raises(ValueError):
        select_action(PolicyKind.ORACLE, None, IDENTITY, np.eye(2), np.random.default_rng(0))


def test_bad_feature_array_rejected():
    with pytest.raises(ValueError):
        select_action(PolicyKind.RANDOM, None, IDENTITY, np.zeros(3), np.random.default_rng(0))


@given(st.floats(0.05, 20.0), st.integers(0, 2**31), st.floats(-20, 40), st.integers(0, 150))
@settings(max_examples=80, deadline=None)
def test_scaling_weights_keeps_the_choice(c, seed, prev, nn):
    cfg = StepSimConfig()
    base = build_reward_spec(StepGroup.ACTIVE, cfg)
    raw = np.array([w for w, _ in base.terms]) * c
    scaled = RewardSpec(tuple((float(w / raw.sum()), u) for w, (_, u) in zip(raw, base.terms)))
    st_ = StepUserState(prev, StepGroup.ACTIVE, nn)
    feats = np.stack([featurize_step(st_, a, 100) for a in (0, 1)])
    theta = np.random.default_rng(seed).normal(size=(1, 5))
    a = choose_from_draw(PolicyKind.MOMU_TS, theta, base, feats, np.random.default_rng(seed))
    b = choose_from_draw(PolicyKind.MOMU_TS, theta, scaled, feats, np.random.default_rng(seed))
    assert a == b


def test_single_user_modes_coincide(toy_env_factory):
    factory = toy_env_factory(P=1)
    a, _ = run_trial(factory, PolicyConfig("momu_ts"), seed=3, mode=AssignmentMode.SEQUENTIAL)
    b, _ = run_trial(factory, PolicyConfig("momu_ts"), seed=3, mode=AssignmentMode.PARALLEL)
    np.testing.assert_array_equal(a.actions, b.actions)
    np.testing.assert_array_equal(a.outcomes, b.outcomes)


def test_no_sharing_keeps_users_isolated():
    feats = np.array([[1.0, 0.0], [0.0, 1.0]])
    env = LinearToyEnv(feats, [1.0, 2.0], [IDENTITY] * 2, np.random.default_rng(0))
    policy = Policy(PolicyConfig("momu_ts_no_sharing"), env)
    rng = np.random.default_rng(1)
    for t in range(3):
        env.begin_step(t)
        step_cohort(policy, env, t, "sequential", rng)
    first = policy.posteriors[0].copy()
    policy.observe(1, feats[0], [10.0])
    np.testing.assert_array_equal(policy.posteriors[0].precision, first.precision)
    np.testing.assert_array_equal(policy.posteriors[0].b, first.b)
    assert policy.posteriors[0].num_obs == 3 and policy.posteriors[1].num_obs == 4


def test_parallel_update_is_order_free():
    feats = np.random.default_rng(2).normal(size=(3, 3))
    env = LinearToyEnv(feats, [0.3, 0.1, -0.2], [IDENTITY] * 3, np.random.default_rng(0))
    policy = Policy(PolicyConfig("momu_ts"), env)
    before = policy.posterior.precision.copy()
    env.begin_step(0)
    recs = step_cohort(policy, env, 0, "parallel", np.random.default_rng(7))
    expected = before + sum(np.outer(feats[r.action], feats[r.action]) for r in recs)
    np.testing.assert_allclose(policy.posterior.precision, expected, atol=1e-12)


def test_parallel_mode_freezes_the_posterior_within_a_step():
    feats = np.eye(3)
    env = LinearToyEnv(feats, [0.3, 0.1, -0.2], [IDENTITY] * 5, np.random.default_rng(0))
    policy = Policy(PolicyConfig("momu_ts"), env)
    seen = []
    original = policy.posterior.sample

    def spy(rng, size=None):
        seen.append(policy.posterior.num_obs)
        return original(rng, size)

    policy.posterior.sample = spy
    env.begin_step(0)
    step_cohort(policy, env, 0, "parallel", np.random.default_rng(0))
    assert seen == [0]
    assert policy.posterior.num_obs == 5


def test_preference_variants_need_profiles():
    env = LinearToyEnv(np.eye(2), [1.0, 0.0], [IDENTITY], np.random.default_rng(0))
    with pytest.raises(ValueError):
        Policy(PolicyConfig("momu_ts_avg_pref"), env)


def test_oracle_has_zero_regret(toy_env_factory):
    _, curve = run_trial(toy_env_factory(P=3), PolicyConfig("oracle"), seed=0)
    assert np.all(curve.instantaneous == 0)


def test_trajectory_is_a_function_of_seed(toy_env_factory):
    factory = toy_env_factory(P=3)
    a, ca = run_trial(factory, PolicyConfig("momu_ts"), seed=9)
    b, cb = run_trial(factory, PolicyConfig("momu_ts"), seed=9)
    np.testing.assert_array_equal(a.actions, b.actions)
    np.testing.assert_array_equal(ca.cumulative, cb.cumulative)


def _steps_to_reach(kind, seed, P=20, T=40):
    feats = np.random.default_rng(100).normal(size=(5, 4))
    theta = np.array([0.4, -0.6, 0.3, 0.2])
    env = LinearToyEnv(feats, theta, [IDENTITY] * P, np.random.default_rng(seed), horizon=T)
    policy = Policy(PolicyConfig(kind), env)
    means = feats @ theta
    target = means.min() + 0.9 * (means.max() - means.min())
    rng = np.random.default_rng(seed + 1000)
    for t in range(T):
        env.begin_step(t)
        recs = step_cohort(policy, env, t, "parallel", rng)
        if np.mean([means[r.action] for r in recs]) >= target:
            return t + 1
    return T + 1


def test_sharing_learns_faster_than_separate_models():
    shared = [_steps_to_reach("momu_ts", s) for s in range(20)]
    separate = [_steps_to_reach("momu_ts_no_sharing", s) for s in range(20)]
    assert np.median(shared) < np.median(separate)
