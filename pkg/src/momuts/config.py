"""Experiment configuration: TOML files, ``--set`` overrides and validation.

Every section is a dataclass; a key absent from the dataclass is rejected,
and values are checked against the type of the field default.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .policy import AssignmentMode, PolicyKind
from .sim_gym import GymSimConfig
from .sim_stepcount import StepSimConfig

OUTPUT_DIR_ENV = "MOMUTS_OUTPUT_DIR"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass
class StepSection:
    num_active: int = 20
    num_inactive: int = 20
    horizon: int = 100
    goal_active: float = 10.0
    goal_inactive: float = 5.6
    slope_below: float = 0.005
    slope_above: float = 0.001
    gamma_active: float = 0.42
    gamma_inactive: float = 0.3
    beta_notif: float = 0.00003
    weights_active: list = field(default_factory=lambda: [0.4, 0.6])
    weights_inactive: list = field(default_factory=lambda: [0.1, 0.9])
    y0_active: float = 15.0
    y0_inactive: float = 4.0
    noise_sd: float = 1.0
    utility: str = "piecewise"
    burden_counts_current_action: bool = True
    units: str = "thousands"
    regret: str = "expected"

    def sim_config(self) -> StepSimConfig:
        kw = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("num_active", "num_inactive")}
        kw["weights_active"] = tuple(kw["weights_active"])
        kw["weights_inactive"] = tuple(kw["weights_inactive"])
        return StepSimConfig(**kw)


@dataclass
class GymSection:
    horizon: int = 4
    beta_modes: list = field(default_factory=lambda: ["constant", "linear_decay"])
    # a number, or "auto" for six times the mean held-out weekly visits
    gamma: object = "auto"
    passthrough: bool = True
    regret: str = "expected"
    synthetic: bool = True
    synth_seed: int = 0
    gym_csv: str = ""
    survey_csv: str = ""
    ridge_lambda: float = 1.0
    train_cohorts: int = 13
    age_window: float = 5.0
    visit_window: float = 0.5

    def sim_config(self, beta_mode: str) -> GymSimConfig:
        gamma = 7.59 if self.gamma == "auto" else float(self.gamma)
        return GymSimConfig(horizon=self.horizon, gamma=gamma, beta_mode=beta_mode,
                            passthrough=self.passthrough, regret=self.regret)


@dataclass
class PolicySection:
    prior_precision: float = 1.0
    noise_var: float = 1.0
    uniform_beta: float = 0.5


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    environment: str = "stepcount"
    # "regret" compares learning policies; "fixed_rules" compares always-notify with notify-below-goal
    experiment: str = "regret"
    policies: list = field(default_factory=lambda: ["momu_ts", "momu_ts_no_sharing", "ts_outcome", "random_uniform"])
    trials: int = 10
    seed: int = 0
    mode: str = "parallel"
    output_dir: str = "results"
    stepcount: StepSection = field(default_factory=StepSection)
    gym: GymSection = field(default_factory=GymSection)
    policy: PolicySection = field(default_factory=PolicySection)

    def validate(self) -> "ExperimentConfig":
        if self.environment not in ("stepcount", "gym"):
            raise ConfigError(f"environment: must be 'stepcount' or 'gym', got {self.environment!r}")
        if self.experiment not in ("regret", "fixed_rules"):
            raise ConfigError(f"experiment: must be 'regret' or 'fixed_rules', got {self.experiment!r}")
        if self.experiment == "fixed_rules" and self.environment != "stepcount":
            raise ConfigError("experiment: 'fixed_rules' is only defined for the stepcount environment")
        if self.trials < 1:
            raise ConfigError("trials: must be at least 1")
        if not self.policies:
            raise ConfigError("policies: need at least one policy")
        for p in self.policies:
            try:
                PolicyKind(p)
            except ValueError:
                choices = ", ".join(k.value for k in PolicyKind)
                raise ConfigError(f"policies: unknown policy {p!r} (choose from {choices})") from None
        try:
            AssignmentMode(self.mode)
        except ValueError:
            raise ConfigError(f"mode: must be 'sequential' or 'parallel', got {self.mode!r}") from None
        s = self.stepcount
        if s.num_active < 0 or s.num_inactive < 0 or s.num_active + s.num_inactive == 0:
            raise ConfigError("stepcount.num_active/num_inactive: need a non-empty population")
        try:
            s.sim_config()
        except ValueError as exc:
            raise ConfigError(f"stepcount: {exc}") from None
        g = self.gym
        if g.gamma != "auto" and not isinstance(g.gamma, (int, float)):
            raise ConfigError(f"gym.gamma: must be a number or 'auto', got {g.gamma!r}")
        if not g.beta_modes:
            raise ConfigError("gym.beta_modes: need at least one beta mode")
        for mode in g.beta_modes:
            try:
                g.sim_config(mode)
            except ValueError as exc:
                raise ConfigError(f"gym: {exc}") from None
        if g.ridge_lambda <= 0:
            raise ConfigError("gym.ridge_lambda: must be positive")
        if self.environment == "gym" and not g.synthetic:
            for key in ("gym_csv", "survey_csv"):
                path = getattr(g, key)
                if not path:
                    raise ConfigError(f"gym.{key}: required when gym.synthetic is false")
                if not Path(path).exists():
                    raise ConfigError(f"gym.{key}: file not found: {path}")
        if self.policy.prior_precision <= 0 or self.policy.noise_var <= 0:
            raise ConfigError("policy.prior_precision and policy.noise_var must be positive")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _check_type(path: str, default, value):
    if default == "auto" or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        value = float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
    return value


def _build(cls, raw: dict, prefix: str = ""):
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: expected a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"{prefix}{unknown[0]}: unknown key")
    obj = cls()
    for name, value in raw.items():
        default = getattr(obj, name)
        if dataclasses.is_dataclass(default):
            setattr(obj, name, _build(type(default), value, f"{prefix}{name}."))
        else:
            setattr(obj, name, _check_type(prefix + name, default, value))
    return obj


def _parse_scalar(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(raw: dict, assignment: str) -> None:
    """Apply ``path.to.key=value`` to a raw config mapping in place."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r}: expected path.key=value")
    path, text = assignment.split("=", 1)
    keys = [k.strip() for k in path.strip().split(".") if k.strip()]
    if not keys:
        raise ConfigError(f"override {assignment!r}: empty key")
    node = raw
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {assignment!r}: {k} is not a table")
    node[keys[-1]] = _parse_scalar(text.strip())


def load_config(path=None, overrides=()) -> ExperimentConfig:
    raw: dict = {}
    if path is not None:
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    for item in overrides:
        apply_override(raw, item)
    return _build(ExperimentConfig, raw).validate()


def describe_keys() -> list:
    """``(dotted key, default)`` for every configuration key."""
    out = []

    def walk(obj, prefix):
        for f in fields(obj):
            value = getattr(obj, f.name)
            if dataclasses.is_dataclass(value):
                walk(value, f"{prefix}{f.name}.")
            else:
                out.append((prefix + f.name, value))

    walk(ExperimentConfig(), "")
    return out


def bundled_config_path(name: str) -> Path:
    """Path of a configuration shipped with the package, e.g. ``step_regret``."""
    path = Path(__file__).parent / "configs" / f"{name}.toml"
    if not path.exists():
        raise ConfigError(f"no bundled config named {name!r}")
    return path
