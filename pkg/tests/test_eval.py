import json

import numpy as np
import pytest

from momuts.eval import (
    RegretCurve,
    emit_csv,
    emit_json,
    instantaneous_regret,
    loglog_slope,
    run_many,
    run_trial,
    summarize,
)
from momuts.experiments import step_env_factory
from momuts.policy import PolicyConfig
from momuts.sim_stepcount import StepSimConfig


def test_regret_at_argmax_is_zero():
    assert instantaneous_regret([0.1, 0.7, 0.3], 1) == 0.0
    assert instantaneous_regret([0.43, 0.05], 1) == pytest.approx(0.38)


def test_curve_is_prefix_sum():
    c = RegretCurve.from_instantaneous([1.0, 0.0, 2.5], "x", 0)
    np.testing.assert_array_equal(c.cumulative, [1.0, 1.0, 3.5])


def test_single_trial_has_zero_error():
    s = summarize([RegretCurve.from_instantaneous([1.0, 2.0], "x", 0)], "x")
    np.testing.assert_array_equal(s.se, [0.0, 0.0])


def test_identical_curves_average_to_themselves():
    curves = [RegretCurve.from_instantaneous([1.0, 2.0, 0.5], "x", k) for k in range(5)]
    s = summarize(curves, "x")
    np.testing.assert_allclose(s.mean, [1.0, 3.0, 3.5])
    np.testing.assert_array_equal(s.se, 0.0)
    assert s.seeds == [0, 1, 2, 3, 4]


def test_standard_error_formula():
    curves = [RegretCurve.from_instantaneous([v], "x", k) for k, v in enumerate([1.0, 2.0, 6.0])]
    s = summarize(curves, "x")
    assert s.se[0] == pytest.approx(np.std([1, 2, 6], ddof=1) / np.sqrt(3))


def test_no_trials_is_an_error():
    with pytest.raises(ValueError):
        summarize([], "x")


SMALL = StepSimConfig(horizon=12)


def test_zero_horizon():
    traj, curve = run_trial(step_env_factory(SMALL, 2, 2), PolicyConfig("momu_ts"), 0, horizon=0)
    assert curve.cumulative.shape == (0,)
    assert traj.actions.shape == (0, 4)


@pytest.mark.parametrize("kind", ["momu_ts", "ts_outcome", "random_uniform", "momu_ts_no_sharing"])
def test_regret_is_nonnegative(kind):
    _, curve = run_trial(step_env_factory(SMALL, 3, 3), PolicyConfig(kind), 1)
    assert np.all(curve.instantaneous >= 0)
    np.testing.assert_allclose(curve.cumulative, np.cumsum(curve.instantaneous))


def test_oracle_regret_is_zero_on_step_sim():
    _, curve = run_trial(step_env_factory(SMALL, 3, 3), PolicyConfig("oracle"), 1)
    assert np.all(curve.instantaneous == 0)


def test_realized_regret_mode_is_also_nonnegative():
    cfg = StepSimConfig(horizon=12, regret="realized")
    _, curve = run_trial(step_env_factory(cfg, 3, 3), PolicyConfig("momu_ts"), 2)
    assert np.all(curve.instantaneous >= 0)


def test_seed_isolation():
    factory = step_env_factory(SMALL, 2, 2)
    a = run_many(factory, [PolicyConfig("momu_ts")], [0, 1, 2], workers=1)["momu_ts"]
    b = run_many(factory, [PolicyConfig("momu_ts")], [0, 7, 2], workers=1)["momu_ts"]
    np.testing.assert_array_equal(a[0][1].cumulative, b[0][1].cumulative)
    np.testing.assert_array_equal(a[2][1].cumulative, b[2][1].cumulative)


def test_pool_matches_serial():
    factory = step_env_factory(SMALL, 2, 2)
    cfgs = [PolicyConfig("momu_ts"), PolicyConfig("random_uniform")]
    serial = run_many(factory, cfgs, [0, 1], workers=1)
    pooled = run_many(factory, cfgs, [0, 1], workers=2)
    for k in serial:
        for (_, c1), (_, c2) in zip(serial[k], pooled[k]):
            np.testing.assert_array_equal(c1.cumulative, c2.cumulative)


def test_policies_share_environment_noise():
    factory = step_env_factory(StepSimConfig(horizon=5), 2, 0)
    a, _ = run_trial(factory, PolicyConfig("oracle"), 4)
    b, _ = run_trial(factory, PolicyConfig("oracle"), 4)
    np.testing.assert_array_equal(a.outcomes, b.outcomes)


def test_csv_is_byte_identical_across_reruns(tmp_path):
    factory = step_env_factory(SMALL, 2, 2)
    paths = []
    for k in range(2):
        raw = run_many(factory, [PolicyConfig("momu_ts"), PolicyConfig("ts_outcome")], [0, 1], workers=1)
        res = {name: summarize([c for _, c in v], name) for name, v in raw.items()}
        path = tmp_path / f"out{k}.csv"
        emit_csv(res, path)
        emit_json(res, tmp_path / f"out{k}.json", {"x": 1})
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert (tmp_path / "out0.json").read_bytes() == (tmp_path / "out1.json").read_bytes()
    header, first = paths[0].read_text().splitlines()[:2]
    assert header == "policy,t,mean_cum_regret,se_cum_regret,trials"
    assert first.startswith("momu_ts,1,")
    payload = json.loads((tmp_path / "out0.json").read_text())
    assert payload["config"] == {"x": 1} and payload["policies"]["momu_ts"]["seeds"] == [0, 1]


def test_write_failure_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    res = {"x": summarize([RegretCurve.from_instantaneous([1.0], "x", 0)], "x")}
    with pytest.raises(OSError, match="file"):
        emit_csv(res, blocker / "out.csv")


def test_loglog_slope_recovers_power():
    t = np.arange(1, 101)
    assert loglog_slope(3 * t**1.5, 50, 100) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        loglog_slope(np.zeros(100), 50, 100)
