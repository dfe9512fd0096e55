"""Command-line entry point: ``momuts run|fit|match|validate``.

Exit codes: 0 on success, 1 on a runtime failure, 2 on bad usage or invalid input.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from . import data
from .config import OUTPUT_DIR_ENV, ConfigError, ExperimentConfig, bundled_config_path, describe_keys, load_config
from .experiments import alignment_by_week, build_world, gym_env_factory, run_experiment, step_env_factory, visits_by_week
from .policy import AssignmentMode, PolicyConfig
from .sim_stepcount import always_notify, make_groups, notify_below_goal, run_fixed_policy

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def output_dir(cfg: ExperimentConfig) -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV) or cfg.output_dir)


def policy_configs(cfg: ExperimentConfig) -> list:
    p = cfg.policy
    return [PolicyConfig(k, prior_precision=p.prior_precision, noise_var=p.noise_var, uniform_beta=p.uniform_beta)
            for k in cfg.policies]


def seeds_for(cfg: ExperimentConfig) -> list:
    return list(range(cfg.seed, cfg.seed + cfg.trials))


def world_from_config(cfg: ExperimentConfig):
    g = cfg.gym
    criteria = data.MatchCriteria(g.age_window, g.visit_window)
    if g.synthetic:
        pool, surveys = data.synth_cohort(data.SynthSpec(), np.random.default_rng(g.synth_seed))
    else:
        pool = data.parse_gym_csv(g.gym_csv)
        surveys = data.parse_survey_csv(g.survey_csv)
    gamma = None if g.gamma == "auto" else float(g.gamma)
    if gamma is None and not g.synthetic:
        gamma = 7.59
    return build_world(pool, surveys, g.ridge_lambda, gamma, g.train_cohorts, criteria)


def _print_summaries(summaries, label: str = "") -> None:
    for name, s in summaries.items():
        final = s.mean[-1] if len(s.mean) else 0.0
        se = s.se[-1] if len(s.se) else 0.0
        print(f"{label}{name}: final cumulative regret {final:.4f} +/- {se:.4f} ({s.trials} trials)")


def run_fixed_rules(cfg: ExperimentConfig, out: Path, workers) -> int:
    sim = cfg.stepcount.sim_config()
    groups = make_groups(cfg.stepcount.num_active, cfg.stepcount.num_inactive)
    rows = []
    for seed in seeds_for(cfg):
        for rule_name, rule in (("always_notify", always_notify), ("notify_below_goal", notify_below_goal)):
            steps, rewards = run_fixed_policy(rule, sim, groups, seed)
            rows.append((rule_name, seed, float(steps.mean()), float(rewards.sum(axis=0).mean())))
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{cfg.name}.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rule", "seed", "mean_steps", "mean_cum_reward"])
        for r in rows:
            w.writerow([r[0], r[1], repr(r[2]), repr(r[3])])
    by = {name: np.array([[r[2], r[3]] for r in rows if r[0] == name]) for name in ("always_notify", "notify_below_goal")}
    a, b = by["always_notify"], by["notify_below_goal"]
    n = len(a)
    more_steps = int(np.sum(a[:, 0] > b[:, 0]))
    less_reward = int(np.sum(a[:, 1] < b[:, 1]))
    for name, arr in by.items():
        print(f"{name}: mean steps {arr[:, 0].mean():.4f}, mean cumulative reward {arr[:, 1].mean():.4f}")
    print(f"always_notify more steps in {more_steps}/{n} seeds "
          f"(sign test p={binomtest(more_steps, n, 0.5, alternative='greater').pvalue:.3g}); "
          f"less reward in {less_reward}/{n} "
          f"(p={binomtest(less_reward, n, 0.5, alternative='greater').pvalue:.3g})")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set)
    out = output_dir(cfg)
    workers = args.workers
    mode = AssignmentMode(cfg.mode)
    if cfg.experiment == "fixed_rules":
        return run_fixed_rules(cfg, out, workers)
    if cfg.environment == "stepcount":
        factory = step_env_factory(cfg.stepcount.sim_config(), cfg.stepcount.num_active, cfg.stepcount.num_inactive)
        _, summaries = run_experiment(factory, policy_configs(cfg), seeds_for(cfg), mode, workers,
                                      out / f"{cfg.name}.csv", out / f"{cfg.name}.json", cfg.to_dict())
        _print_summaries(summaries)
        print(f"wrote {out / (cfg.name + '.csv')}")
        return EXIT_OK
    world = world_from_config(cfg)
    print(f"outcome model: test RMSE {world.info['test_rmse']:.4f}, gamma {world.gamma:.4f}")
    for beta_mode in cfg.gym.beta_modes:
        factory = gym_env_factory(world, cfg.gym.sim_config(beta_mode))
        stem = f"{cfg.name}_{beta_mode}"
        raw, summaries = run_experiment(factory, policy_configs(cfg), seeds_for(cfg), mode, workers,
                                        out / f"{stem}.csv", out / f"{stem}.json", cfg.to_dict())
        _print_summaries(summaries, f"[{beta_mode}] ")
        for name, trials in raw.items():
            align = " ".join(f"{v:.3f}" for v in alignment_by_week(trials))
            visits = " ".join(f"{v:.3f}" for v in visits_by_week(trials))
            print(f"[{beta_mode}] {name}: alignment by week {align}; visits by week {visits}")
        print(f"wrote {out / (stem + '.csv')}")
    return EXIT_OK


def _load_pool(args):
    if args.gym:
        return data.parse_gym_csv(args.gym)
    return data.synth_cohort(data.SynthSpec(), np.random.default_rng(args.synth_seed))[0]


def cmd_fit(args) -> int:
    pool = _load_pool(args)
    train, test = data.split_by_cohort(pool, args.train_cohorts)
    X, y, _, _ = data.regression_rows(train)
    model = data.fit_outcome_model(X, y, args.ridge_lambda, {"train_cohorts": args.train_cohorts})
    Xt, yt, _, _ = data.regression_rows(test)
    rmse, table = data.calibration_report(model, Xt, yt) if len(yt) else (float("nan"), [])
    model.metadata["test_rmse"] = rmse
    model.metadata["n_test"] = int(len(yt))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    calib = out.with_name(out.stem + "_calibration.csv")
    with open(calib, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "count", "mean_pred"])
        for k, count, mean_pred in table:
            w.writerow([k, count, repr(mean_pred)])
    print(f"train rows {len(y)}, test rows {len(yt)}, test RMSE {rmse:.4f}")
    print(f"wrote {out} and {calib}")
    return EXIT_OK


def cmd_match(args) -> int:
    if args.gym and args.survey:
        pool = data.parse_gym_csv(args.gym)
        surveys = data.parse_survey_csv(args.survey)
    elif not args.gym and not args.survey:
        pool, surveys = data.synth_cohort(data.SynthSpec(), np.random.default_rng(args.synth_seed))
    else:
        raise UsageError("give both --gym and --survey, or neither for a synthetic cohort")
    result = data.match_participants(surveys, pool, data.MatchCriteria(args.age_window, args.visit_window),
                                     np.random.default_rng(args.seed))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["survey_id", "participant_id"])
        for s, p in result.pairs:
            w.writerow([s.id, p.id])
    print(f"matched {len(result.pairs)}, excluded {len(result.excluded)}"
          + (f" ({', '.join(s.id for s in result.excluded)})" if result.excluded else ""))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    if not args.gym and not args.survey:
        raise UsageError("nothing to validate: give --gym and/or --survey")
    if args.gym:
        people, excl = data.read_gym_csv(args.gym)
        print(f"{args.gym}: {len(people)} participants; excluded {excl['short_history']} for short history, "
              f"{excl['missing_data']} for missing data")
    if args.survey:
        surveys = data.parse_survey_csv(args.survey)
        print(f"{args.survey}: {len(surveys)} survey records")
    return EXIT_OK


def _keys_epilog() -> str:
    lines = ["configuration keys (TOML, override with --set key=value):"]
    for key, default in describe_keys():
        lines.append(f"  {key} = {default!r}")
    lines.append(f"\nthe {OUTPUT_DIR_ENV} environment variable overrides output_dir")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="momuts", description="Multi-objective multi-user Thompson sampling experiments.",
                                     epilog=_keys_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config", epilog=_keys_epilog(),
                         formatter_class=argparse.RawDescriptionHelpFormatter)
    run.add_argument("config", help="TOML config path, or the name of a bundled config (notify_rules, step_regret, step_regret_growth, gym_alignment, gym_regret)")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    run.add_argument("--workers", type=int, default=None, help="parallel trials (default: available cores)")
    run.set_defaults(func=cmd_run)

    fit = sub.add_parser("fit", help="fit the outcome model and write a calibration report")
    fit.add_argument("--gym", help="gym CSV (omit for a synthetic pool)")
    fit.add_argument("--synth-seed", type=int, default=0)
    fit.add_argument("--ridge-lambda", type=float, default=1.0)
    fit.add_argument("--train-cohorts", type=int, default=13)
    fit.add_argument("--out", default="model.json")
    fit.set_defaults(func=cmd_fit)

    match = sub.add_parser("match", help="match survey records to gym participants")
    match.add_argument("--gym")
    match.add_argument("--survey")
    match.add_argument("--seed", type=int, default=0)
    match.add_argument("--synth-seed", type=int, default=0)
    match.add_argument("--age-window", type=float, default=5.0)
    match.add_argument("--visit-window", type=float, default=0.5)
    match.add_argument("--out", default="pairs.csv")
    match.set_defaults(func=cmd_match)

    val = sub.add_parser("validate", help="check data files against the schemas")
    val.add_argument("--gym")
    val.add_argument("--survey")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None) and not Path(args.config).exists() and not args.config.endswith(".toml"):
        try:
            args.config = str(bundled_config_path(args.config))
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
    if getattr(args, "workers", None) is not None and args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, data.DataError, UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - surface any runtime failure as exit 1
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
