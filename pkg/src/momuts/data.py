"""Survey and gym-attendance ingestion, preference extraction, matching and the outcome fit.

CSV layouts
-----------
gym:    ``id,age,gender,state,new_member,week_index,visits,action[,cohort]``
        one row per participant-week; ``week_index < 0`` is pre-study.
survey: ``id,goes_to_gym,r1,r2,r3,r4,r5,ai_trust,age,gender,pre_visits``
        ``ai_trust`` may be blank (pilot responses).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.special import softmax

from .sim_gym import (
    FEATURE_NAMES,
    MAX_VISITS,
    NUM_ACTIONS,
    GymParticipant,
    OutcomeModel,
    PreferenceProfile,
    featurize_history,
)

TOP_STATES = ("CA", "TX", "CO", "WA", "OR", "FL", "NY", "HI", "NJ")
GENDER_CODES = {"male": 0, "female": 1, "other": 2}
UNKNOWN_GENDER = 3
_GENDER_ALIASES = {
    "m": "male", "man": "male", "male": "male", "transgender male": "male",
    "f": "female", "woman": "female", "female": "female", "transgender female": "female",
    "non-binary": "other", "nonbinary": "other", "genderqueer": "other", "non-conforming": "other",
    "other": "other", "non-binary/genderqueer/non-conforming": "other",
}
GYM_COLUMNS = ("id", "age", "gender", "state", "new_member", "week_index", "visits", "action")
SURVEY_COLUMNS = ("id", "goes_to_gym", "r1", "r2", "r3", "r4", "r5", "ai_trust", "age", "gender", "pre_visits")
MIN_PRE_WEEKS = 5


class DataError(ValueError):
    """A row that cannot be parsed."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.row = row
        self.column = column


class ValidationError(DataError):
    """Parsed rows that violate the data invariants."""


@dataclass
class SurveyRecord:
    id: str
    goes_to_gym: bool
    likert_ratings: tuple
    ai_trust: int | None
    age: float
    gender: int
    pre_visits: float

    def __post_init__(self):
        if len(self.likert_ratings) != 5 or any(not 0 <= r <= 4 for r in self.likert_ratings):
            raise ValueError(f"need five ratings in [0, 4], got {self.likert_ratings!r}")
        if self.ai_trust is not None and not 0 <= self.ai_trust <= 4:
            raise ValueError(f"ai_trust must be in [0, 4], got {self.ai_trust!r}")

    @property
    def new_member(self) -> bool:
        # non-gym-goers are treated as new members with no prior attendance
        return not self.goes_to_gym

    @property
    def matching_visits(self) -> float:
        return self.pre_visits if self.goes_to_gym else 0.0


@dataclass(frozen=True)
class MatchCriteria:
    age_window: float = 5.0
    visit_window: float = 0.5


@dataclass
class MatchResult:
    pairs: list
    excluded: list = field(default_factory=list)


def gender_code(value) -> int:
    if isinstance(value, (int, np.integer)):
        return int(value) if 0 <= int(value) <= UNKNOWN_GENDER else UNKNOWN_GENDER
    text = str(value).strip().lower()
    if text.isdigit():
        return gender_code(int(text))
    return GENDER_CODES.get(_GENDER_ALIASES.get(text, ""), UNKNOWN_GENDER)


def state_index(value) -> int:
    text = str(value).strip()
    if text.isdigit() and 0 <= int(text) <= 9:
        return int(text)
    code = text.upper()
    return TOP_STATES.index(code) if code in TOP_STATES else 9


def likert_to_alpha(ratings) -> np.ndarray:
    """Softmax over ``[0, r1, ..., r5]``; entry 0 is the control."""
    ratings = np.asarray(ratings, dtype=float)
    if ratings.shape != (5,) or np.any((ratings < 0) | (ratings > 4)):
        raise ValueError(f"need five ratings in [0, 4], got {ratings.tolist()}")
    return softmax(np.concatenate([[0.0], ratings]))


def likert_to_beta(b) -> float:
    if b is None or not 0 <= b <= 4:
        raise ValueError(f"ai_trust rating must be in [0, 4], got {b!r}")
    return 0.1 + 0.8 * b / 4


def preference_profiles(surveys, rng: np.random.Generator) -> list:
    """Profiles for each survey record; a missing trust rating borrows a random observed one."""
    observed = [likert_to_beta(s.ai_trust) for s in surveys if s.ai_trust is not None]
    out = []
    for s in surveys:
        if s.ai_trust is not None:
            beta = likert_to_beta(s.ai_trust)
        else:
            if not observed:
                raise ValueError("no survey record has a trust rating to sample from")
            beta = observed[rng.integers(len(observed))]
        out.append(PreferenceProfile(likert_to_alpha(s.likert_ratings), beta))
    return out


def match_participants(surveys, pool, criteria: MatchCriteria, rng: np.random.Generator) -> MatchResult:
    """Pair each survey record with a random pool member meeting every criterion."""
    if not pool:
        raise ValueError("matching pool is empty")
    gender = np.array([p.gender for p in pool])
    age = np.array([p.age for p in pool], dtype=float)
    new = np.array([p.new_member for p in pool])
    visits = np.array([p.pre_mean for p in pool])
    result = MatchResult([])
    for s in surveys:
        mask = (
            (gender == s.gender)
            & (np.abs(age - s.age) <= criteria.age_window)
            & (new == s.new_member)
            & (np.abs(visits - s.matching_visits) <= criteria.visit_window + 1e-12)
        )
        candidates = np.flatnonzero(mask)
        if len(candidates) == 0:
            result.excluded.append(s)
            continue
        result.pairs.append((s, pool[int(candidates[rng.integers(len(candidates))])]))
    return result


def check_match(s: SurveyRecord, p: GymParticipant, criteria: MatchCriteria) -> bool:
    return (
        s.gender == p.gender
        and abs(s.age - p.age) <= criteria.age_window
        and s.new_member == p.new_member
        and abs(s.matching_visits - p.pre_mean) <= criteria.visit_window + 1e-12
    )


# -- regression data -------------------------------------------------------

def regression_rows(participants, min_history: int = MIN_PRE_WEEKS):
    """Featurize every week that has at least ``min_history`` earlier weeks.

    Returns ``(X, y, cohorts, is_study)``.
    """
    X, y, cohorts, study = [], [], [], []
    for p in participants:
        visits = list(p.visit_history) + list(p.logged_visits)
        actions = list(p.assigned_action_history) + list(p.logged_actions)
        n_pre = len(p.visit_history)
        for w in range(max(min_history, 1), len(visits)):
            X.append(featurize_history(p.age, p.gender, p.state_idx, p.new_member,
                                       visits[:w], actions[:w], actions[w]))
            y.append(visits[w])
            cohorts.append(-1 if p.cohort is None else p.cohort)
            study.append(w >= n_pre)
    if not X:
        return np.zeros((0, len(FEATURE_NAMES))), np.zeros(0), np.zeros(0, int), np.zeros(0, bool)
    return np.array(X), np.array(y, dtype=float), np.array(cohorts), np.array(study)


def fit_outcome_model(X, y, lam: float = 1.0, metadata: dict | None = None) -> OutcomeModel:
    """Ridge regression with an unpenalized intercept."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("cannot fit an outcome model on zero rows")
    if not lam > 0:
        raise ValueError("ridge penalty must be positive")
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    gram = Xc.T @ Xc + lam * np.eye(X.shape[1])
    coef = linalg.solve(gram, Xc.T @ (y - y_mean), assume_a="pos")
    meta = {"n_train": int(X.shape[0]), "ridge_lambda": float(lam)}
    meta.update(metadata or {})
    return OutcomeModel(coef, float(y_mean - x_mean @ coef), metadata=meta)


def calibration_report(model: OutcomeModel, X, y):
    """Held-out RMSE and ``E[prediction | y = k]`` for k = 0..7 as ``(k, count, mean_pred)`` rows."""
    pred = model.predict(X)
    y = np.asarray(y, dtype=float)
    rmse = float(np.sqrt(np.mean((pred - y) ** 2)))
    table = []
    for k in range(MAX_VISITS + 1):
        sel = y == k
        table.append((k, int(sel.sum()), float(pred[sel].mean()) if sel.any() else math.nan))
    return rmse, table


def split_by_cohort(participants, n_train_cohorts: int = 13):
    """Train on the first ``n_train_cohorts`` cohorts (in sorted order), test on the rest."""
    cohorts = sorted({p.cohort for p in participants if p.cohort is not None})
    if not cohorts:
        raise ValueError("participants carry no cohort labels")
    train_ids = set(cohorts[:n_train_cohorts])
    train = [p for p in participants if p.cohort in train_ids]
    test = [p for p in participants if p.cohort is not None and p.cohort not in train_ids]
    return train, test


# -- CSV -------------------------------------------------------------------

def _field(row, name, rownum, cast):
    raw = row.get(name)
    if raw is None or str(raw).strip() == "":
        raise DataError("missing value", rownum, name)
    try:
        return cast(str(raw).strip())
    except ValueError as exc:
        raise DataError(f"cannot parse {raw!r}", rownum, name) from exc


def _int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(text)
    return int(value)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "y", "t"):
        return True
    if low in ("0", "false", "no", "n", "f"):
        return False
    raise ValueError(text)


def _reader(path, required):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.DictReader(fh)
    missing = [c for c in required if c not in (reader.fieldnames or [])]
    if missing:
        fh.close()
        raise DataError(f"{path}: header lacks columns {missing}")
    return fh, reader


def read_gym_csv(path, min_pre_weeks: int = MIN_PRE_WEEKS):
    """Parse the gym CSV; returns ``(participants, exclusions)``.

    ``exclusions`` counts participants dropped for short pre-study history or
    missing data. Out-of-range values raise :class:`ValidationError` listing
    every offending row.
    """
    fh, reader = _reader(path, GYM_COLUMNS)
    people: dict = {}
    bad = []
    incomplete = set()
    with fh:
        for rownum, row in enumerate(reader, start=2):
            pid = (row.get("id") or "").strip()
            if not pid:
                raise DataError("missing value", rownum, "id")
            try:
                age = _field(row, "age", rownum, float)
                gender = gender_code(_field(row, "gender", rownum, str))
                state = state_index(_field(row, "state", rownum, str))
                new = _field(row, "new_member", rownum, _bool)
            except DataError as exc:
                if exc.column is not None and "missing" in str(exc):
                    incomplete.add(pid)
                    continue
                raise
            week = _field(row, "week_index", rownum, _int)
            visits = _field(row, "visits", rownum, _int)
            action = _field(row, "action", rownum, _int)
            cohort = row.get("cohort")
            cohort = _int(cohort) if cohort not in (None, "") else None
            if not 0 <= visits <= MAX_VISITS:
                bad.append((rownum, "visits", visits))
            if not 0 <= action < NUM_ACTIONS:
                bad.append((rownum, "action", action))
            elif week < 0 and action != 0:
                bad.append((rownum, "action", action))
            rec = people.setdefault(pid, {"demo": (age, gender, state, new, cohort), "weeks": {}})
            rec["weeks"][week] = (visits, action)
    if bad:
        detail = "; ".join(f"row {r} column {c!r} value {v}" for r, c, v in bad[:10])
        raise ValidationError(f"{len(bad)} out-of-range values: {detail}")
    exclusions = {"missing_data": len(incomplete), "short_history": 0}
    out = []
    for pid, rec in people.items():
        if pid in incomplete:
            continue
        weeks = rec["weeks"]
        pre = sorted(w for w in weeks if w < 0)
        if len(pre) < min_pre_weeks:
            exclusions["short_history"] += 1
            continue
        study = sorted(w for w in weeks if w >= 0)
        age, gender, state, new, cohort = rec["demo"]
        out.append(GymParticipant(
            id=pid, age=age, gender=gender, state_idx=state, new_member=new,
            visit_history=[weeks[w][0] for w in pre],
            assigned_action_history=[0] * len(pre),
            logged_visits=[weeks[w][0] for w in study],
            logged_actions=[weeks[w][1] for w in study],
            cohort=cohort,
        ))
    return out, exclusions


def parse_gym_csv(path, min_pre_weeks: int = MIN_PRE_WEEKS) -> list:
    return read_gym_csv(path, min_pre_weeks)[0]


def parse_survey_csv(path) -> list:
    fh, reader = _reader(path, SURVEY_COLUMNS)
    out = []
    bad = []
    with fh:
        for rownum, row in enumerate(reader, start=2):
            pid = _field(row, "id", rownum, str)
            ratings = tuple(_field(row, f"r{k}", rownum, _int) for k in range(1, 6))
            trust_raw = (row.get("ai_trust") or "").strip()
            trust = None
            if trust_raw:
                try:
                    trust = _int(trust_raw)
                except ValueError as exc:
                    raise DataError(f"cannot parse {trust_raw!r}", rownum, "ai_trust") from exc
            for k, r in enumerate(ratings, start=1):
                if not 0 <= r <= 4:
                    bad.append((rownum, f"r{k}", r))
            if trust is not None and not 0 <= trust <= 4:
                bad.append((rownum, "ai_trust", trust))
            pre = _field(row, "pre_visits", rownum, float)
            if not 0 <= pre <= MAX_VISITS:
                bad.append((rownum, "pre_visits", pre))
            if any(b[0] == rownum for b in bad):
                continue
            out.append(SurveyRecord(
                id=pid,
                goes_to_gym=_field(row, "goes_to_gym", rownum, _bool),
                likert_ratings=ratings,
                ai_trust=trust,
                age=_field(row, "age", rownum, float),
                gender=gender_code(_field(row, "gender", rownum, str)),
                pre_visits=pre,
            ))
    if bad:
        detail = "; ".join(f"row {r} column {c!r} value {v}" for r, c, v in bad[:10])
        raise ValidationError(f"{len(bad)} out-of-range values: {detail}")
    return out


def write_gym_csv(participants, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(GYM_COLUMNS) + ["cohort"])
        gender_names = {v: k for k, v in GENDER_CODES.items()}
        for p in participants:
            demo = [p.id, p.age, gender_names.get(p.gender, "unknown"), p.state_idx, int(p.new_member)]
            n_pre = len(p.visit_history)
            cohort = "" if p.cohort is None else p.cohort
            for k, v in enumerate(p.visit_history):
                w.writerow(demo + [k - n_pre, v, 0, cohort])
            for k, (v, a) in enumerate(zip(p.logged_visits, p.logged_actions)):
                w.writerow(demo + [k, v, a, cohort])


def write_survey_csv(surveys, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SURVEY_COLUMNS)
        gender_names = {v: k for k, v in GENDER_CODES.items()}
        for s in surveys:
            w.writerow([s.id, int(s.goes_to_gym), *s.likert_ratings,
                        "" if s.ai_trust is None else s.ai_trust, s.age,
                        gender_names.get(s.gender, "unknown"), s.pre_visits])


# -- synthetic cohorts -----------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Distributions for a fully synthetic gym pool and survey batch.

    Visits are Poisson draws truncated to [0, 7] around a per-member rate that
    wanders as a log-AR(1). During the study the rate is scaled by
    ``1 + action_effects[a]`` and by ``study_trend ** week``.
    """

    n_pool: int = 4000
    n_survey: int = 209
    n_cohorts: int = 27
    pre_weeks: tuple = (5, 30)
    study_weeks: int = 4
    age_range: tuple = (18, 75)
    gender_probs: tuple = (0.48, 0.46, 0.06)
    inactive_share: float = 0.4
    rate_shape: float = 2.0
    rate_scale: float = 1.1
    ar_coef: float = 0.7
    ar_sd: float = 0.35
    new_member_share: float = 0.3
    action_effects: tuple = (0.0, 0.15, 0.05, 0.08, 0.03, 0.10)
    study_trend: float = 0.93
    gym_goer_share: float = 0.37
    # mean Likert rating per intervention category, financial incentives highest
    rating_means: tuple = (2.6, 1.9, 1.6, 1.3, 1.8)
    trust_probs: tuple = (0.1, 0.2, 0.25, 0.3, 0.15)
    missing_trust: int = 0


def _visit_series(rate, weeks, rng, spec: SynthSpec, multipliers=None):
    z = rng.normal(0, spec.ar_sd)
    out = []
    for w in range(weeks):
        z = spec.ar_coef * z + rng.normal(0, spec.ar_sd * math.sqrt(1 - spec.ar_coef**2))
        lam = rate * math.exp(z) * (1.0 if multipliers is None else multipliers[w])
        out.append(int(min(rng.poisson(lam), MAX_VISITS)))
    return out


def synth_cohort(spec: SynthSpec, rng: np.random.Generator):
    """Generate ``(pool, surveys)`` with no external data."""
    pool = []
    lo, hi = spec.age_range
    for k in range(spec.n_pool):
        gender = int(rng.choice(len(spec.gender_probs), p=np.asarray(spec.gender_probs) / sum(spec.gender_probs)))
        new = bool(rng.random() < spec.new_member_share)
        if rng.random() < spec.inactive_share:
            rate = rng.uniform(0.0, 0.15)
        else:
            rate = rng.gamma(spec.rate_shape, spec.rate_scale)
        n_pre = int(rng.integers(spec.pre_weeks[0], spec.pre_weeks[1] + 1))
        action = int(rng.integers(NUM_ACTIONS))
        mult = [(1.0 + spec.action_effects[action]) * spec.study_trend**w for w in range(spec.study_weeks)]
        pool.append(GymParticipant(
            id=f"g{k:05d}",
            age=float(rng.integers(lo, hi + 1)),
            gender=gender,
            state_idx=int(rng.integers(0, 10)),
            new_member=new,
            visit_history=_visit_series(rate, n_pre, rng, spec),
            logged_visits=_visit_series(rate, spec.study_weeks, rng, spec, mult),
            logged_actions=[action] * spec.study_weeks,
            cohort=int(rng.integers(spec.n_cohorts)),
        ))
    surveys = []
    for k in range(spec.n_survey):
        goes = bool(rng.random() < spec.gym_goer_share)
        ratings = tuple(int(np.clip(round(rng.normal(m, 1.1)), 0, 4)) for m in spec.rating_means)
        trust = int(rng.choice(5, p=np.asarray(spec.trust_probs) / sum(spec.trust_probs)))
        surveys.append(SurveyRecord(
            id=f"s{k:04d}",
            goes_to_gym=goes,
            likert_ratings=ratings,
            ai_trust=None if k < spec.missing_trust else trust,
            age=float(rng.integers(lo, hi + 1)),
            gender=int(rng.choice(len(spec.gender_probs), p=np.asarray(spec.gender_probs) / sum(spec.gender_probs))),
            pre_visits=float(np.clip(np.round(rng.gamma(2.0, 0.8)), 0, 6)) if goes else 0.0,
        ))
    return pool, surveys
