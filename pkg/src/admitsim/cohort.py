"""Registry-style student records and a calibrated synthetic cohort generator.

The generator plants a known completion model (logistic in GPA, nonlinear
grade-profile terms, and program effects) and stores each student's true
completion probability, so downstream model and policy evaluations have a
ground-truth oracle.  Marginal statistics are calibrated to configurable
targets; the completion intercept is solved by bisection so the expected
train-year completion rate hits the target exactly.
"""

from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._seeds import substream

__all__ = [
    "GRADE_STEPS",
    "ISCED_FIELDS",
    "COURSE_CATALOG",
    "STUDY_LINES",
    "GradeEvent",
    "ApplicationEvent",
    "EnrollmentEvent",
    "SocioRecord",
    "Student",
    "Program",
    "GeneratorConfig",
    "Cohort",
    "generate_cohort",
    "temporal_split",
    "validation_split",
    "save_cohort",
    "load_cohort",
    "with_enrollment",
    "grade_profile",
]

# Danish 7-step scale
GRADE_STEPS = (-3, 0, 2, 4, 7, 10, 12)
_STEP_ARRAY = np.array(GRADE_STEPS, dtype=float)

# ISCED-F 2013 broad groups
ISCED_FIELDS = (
    "generic",
    "education",
    "arts_humanities",
    "social_sciences",
    "business_law",
    "natural_sciences",
    "ict",
    "engineering",
    "agriculture",
    "health_welfare",
    "services",
)

# course name -> broad field used for grade-profile aggregates
COURSE_CATALOG: Mapping[str, str] = {
    "mathematics": "stem",
    "physics": "stem",
    "chemistry": "stem",
    "biology": "stem",
    "computer_science": "stem",
    "danish": "language",
    "english": "language",
    "german": "language",
    "french": "language",
    "spanish": "language",
    "history": "other",
    "social_studies": "other",
    "religion": "other",
    "psychology": "other",
    "economics": "other",
    "music": "other",
    "visual_arts": "other",
    "physical_education": "other",
}

STUDY_LINES = ("science", "social", "language", "arts", "technical")
COURSE_LEVELS = ("A", "B", "C")
TEST_TYPES = ("written_exam", "oral_exam", "year_grade")
EDUCATION_TYPES = ("stx", "hf", "hhx", "htx", "eux")
SCHOOL_STAGES = ("primary", "high_school")


@dataclass(frozen=True, slots=True)
class GradeEvent:
    year: int
    course: str
    course_level: str
    test_type: str
    education_type: str
    study_line: str
    school_stage: str
    institution_id: str
    grade: int

    def __post_init__(self) -> None:
        if self.grade not in GRADE_STEPS:
            raise ValueError(f"grade {self.grade} is not on the 7-step scale")
        if self.course_level not in COURSE_LEVELS:
            raise ValueError(f"course_level must be one of {COURSE_LEVELS}")
        if self.school_stage not in SCHOOL_STAGES:
            raise ValueError(f"school_stage must be one of {SCHOOL_STAGES}")


@dataclass(frozen=True, slots=True)
class ApplicationEvent:
    program_id: str
    isced_field: str
    rank: int
    quota2_opt_in: bool
    human_rank_decile: int | None = None

    def __post_init__(self) -> None:
        if not 1 <= self.rank <= 8:
            raise ValueError("application rank must lie in 1..8")
        if self.human_rank_decile is not None:
            if not self.quota2_opt_in:
                raise ValueError("human_rank_decile requires quota2_opt_in")
            if not 1 <= self.human_rank_decile <= 10:
                raise ValueError("human_rank_decile must lie in 1..10")


@dataclass(frozen=True, slots=True)
class EnrollmentEvent:
    year: int
    program_id: str
    isced_field: str
    cutoff_gpa: float | None


@dataclass(slots=True)
class SocioRecord:
    age: float | None
    female: bool
    danish_origin: bool
    # parental slots are (parent 1, parent 2); None marks a missing register row
    income: tuple[float | None, float | None]
    wealth: tuple[float | None, float | None]
    edu_isced: tuple[int | None, int | None]
    edu_months: tuple[float | None, float | None]
    ses_high: bool = False


@dataclass(slots=True)
class Student:
    id: int
    gpa: float
    events: list
    sociodemo: SocioRecord
    enrolled_program: str
    admission_quota: str
    cohort_year: int
    completed: bool
    planted_p: float | None = None
    first_year_gpa: float | None = None

    def __post_init__(self) -> None:
        if self.admission_quota not in ("gpa", "human"):
            raise ValueError("admission_quota must be 'gpa' or 'human'")


@dataclass(frozen=True, slots=True)
class Program:
    program_id: str
    isced_field: str
    seats_q1: int
    seats_q2: int
    prior_year_gpa_cutoff: float | None

    def __post_init__(self) -> None:
        if self.seats_q1 + self.seats_q2 < 1:
            raise ValueError("a program needs at least one seat")


@dataclass(frozen=True)
class GeneratorConfig:
    n_students: int = 2000
    n_programs: int = 40
    start_year: int = 2006
    end_year: int = 2017
    completion_mean: float = 0.69
    gpa_mean: float = 7.08
    gpa_sd: float = 2.28
    quota2_optin_rate: float = 0.35
    human_admit_rate: float = 0.16
    female_rate: float = 0.58
    danish_rate: float = 0.91
    age_mean: float = 20.35
    mean_grade_events: float = 16.0
    max_applications: int = 8
    # planted completion model weights
    gpa_weight: float = 0.85
    stem_weight: float = 0.9
    dispersion_weight: float = -0.55
    trend_weight: float = 0.6
    program_effect_sd: float = 0.25

    def __post_init__(self) -> None:
        if self.n_students < 0:
            raise ValueError("n_students must be non-negative")
        if self.n_programs < 1:
            raise ValueError("n_programs must be positive")
        if self.end_year < self.start_year:
            raise ValueError("empty year range")
        if not 0.0 < self.completion_mean < 1.0:
            raise ValueError("completion_mean must lie in (0, 1)")
        if self.mean_grade_events <= 0 or self.max_applications < 1:
            raise ValueError("event counts must be positive")


@dataclass
class Cohort:
    students: list[Student]
    programs: dict[str, Program]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.students)

    def years(self) -> list[int]:
        return sorted({s.cohort_year for s in self.students})

    def filter_years(self, years: Iterable[int]) -> "Cohort":
        keep = set(years)
        return Cohort(
            students=[s for s in self.students if s.cohort_year in keep],
            programs=self.programs,
            meta=self.meta,
        )


# line -> which isced fields a student on that line tends to apply to
_LINE_AFFINITY = {
    "science": ("natural_sciences", "health_welfare", "engineering", "ict"),
    "social": ("social_sciences", "business_law", "education", "services"),
    "language": ("arts_humanities", "education", "social_sciences", "business_law"),
    "arts": ("arts_humanities", "services", "education", "social_sciences"),
    "technical": ("engineering", "ict", "natural_sciences", "agriculture"),
}

_COURSES = tuple(COURSE_CATALOG)
_COURSE_FIELD = np.array([{"stem": 0, "language": 1, "other": 2}[COURSE_CATALOG[c]] for c in _COURSES])

# course draw weights per study line over (stem, language, other)
_LINE_FIELD_WEIGHTS = {
    "science": (0.55, 0.2, 0.25),
    "social": (0.2, 0.25, 0.55),
    "language": (0.15, 0.55, 0.3),
    "arts": (0.15, 0.3, 0.55),
    "technical": (0.5, 0.2, 0.3),
}


def _course_probs(line: str) -> np.ndarray:
    w = _LINE_FIELD_WEIGHTS[line]
    per_course = np.array([w[f] for f in _COURSE_FIELD], dtype=float)
    counts = np.bincount(_COURSE_FIELD, minlength=3)
    per_course /= counts[_COURSE_FIELD]
    return per_course / per_course.sum()


def _nearest_step(values: np.ndarray) -> np.ndarray:
    mids = (_STEP_ARRAY[1:] + _STEP_ARRAY[:-1]) / 2.0
    return _STEP_ARRAY[np.searchsorted(mids, values)]


def grade_profile(student: Student) -> tuple[float, float, float]:
    """(stem gap, dispersion, trend) of the student's grade events.

    stem gap: mean STEM grade minus overall mean; dispersion: grade std;
    trend: mean of the final high-school year minus the first.  All zero
    when the student has no grades.
    """
    grades = [(e.year, COURSE_CATALOG.get(e.course, "other"), e.grade) for e in student.events if isinstance(e, GradeEvent)]
    if not grades:
        return 0.0, 0.0, 0.0
    values = np.array([g for _, _, g in grades], dtype=float)
    overall = values.mean()
    stem = [g for _, f, g in grades if f == "stem"]
    stem_gap = (float(np.mean(stem)) - overall) if stem else 0.0
    dispersion = float(values.std())
    years = np.array([y for y, _, _ in grades])
    first, last = years.min(), years.max()
    if first == last:
        trend = 0.0
    else:
        trend = float(values[years == last].mean() - values[years == first].mean())
    return float(stem_gap), dispersion, trend


def _solve_intercept(lin: np.ndarray, target: float) -> float:
    """Bisection on b0 so mean(sigmoid(b0 + lin)) == target."""
    lo, hi = -20.0, 20.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.mean(1.0 / (1.0 + np.exp(-(mid + lin)))) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _zscore(x: np.ndarray) -> np.ndarray:
    sd = x.std()
    if sd == 0:
        return np.zeros_like(x)
    return (x - x.mean()) / sd


def _ses_high(parental: np.ndarray) -> np.ndarray:
    """Median split on the first principal component of parental columns.

    Columns with missing entries are median-imputed, standardized, and the
    PC sign is fixed so income loads positively.
    """
    work = parental.copy()
    if work.shape[0] < 2:
        return np.zeros(work.shape[0], dtype=bool)
    for j in range(work.shape[1]):
        col = work[:, j]
        nan = np.isnan(col)
        if nan.all():
            col[:] = 0.0
        elif nan.any():
            col[nan] = np.median(col[~nan])
    mu = work.mean(axis=0)
    sd = work.std(axis=0)
    sd[sd == 0] = 1.0
    z = (work - mu) / sd
    cov = np.cov(z, rowvar=False)
    eigvals, eigvecs = np.linalg.eigh(cov)
    pc = eigvecs[:, np.argmax(eigvals)]
    if pc[:2].sum() < 0:
        pc = -pc
    score = z @ pc
    return score > np.median(score)


def generate_cohort(config: GeneratorConfig, seed: int) -> Cohort:
    rng = substream(seed, "cohort")
    n = config.n_students

    # program registry
    programs: dict[str, Program] = {}
    prog_fields = [ISCED_FIELDS[1:][i % 10] for i in range(config.n_programs)]
    cutoffs = np.clip(rng.normal(4.22, 2.06, size=config.n_programs), -1.0, 11.0)
    cutoff_missing = rng.random(config.n_programs) < 0.09
    expected = max(1, n // config.n_programs)
    for i in range(config.n_programs):
        pid = f"p{i:03d}"
        programs[pid] = Program(
            program_id=pid,
            isced_field=prog_fields[i],
            seats_q1=max(1, round(0.8 * expected)),
            seats_q2=max(1, round(0.2 * expected)),
            prior_year_gpa_cutoff=None if cutoff_missing[i] else round(float(cutoffs[i]), 2),
        )
    prog_ids = list(programs)
    prog_by_field: dict[str, list[int]] = {}
    for i, pid in enumerate(prog_ids):
        prog_by_field.setdefault(programs[pid].isced_field, []).append(i)
    program_effects = rng.normal(0.0, config.program_effect_sd, size=config.n_programs)

    meta = {
        "config": dataclasses.asdict(config),
        "seed": seed,
        "program_effects": {pid: float(program_effects[i]) for i, pid in enumerate(prog_ids)},
    }

    if n == 0:
        meta["planted"] = {}
        return Cohort(students=[], programs=programs, meta=meta)

    # student-level draws, vectorized
    years = rng.integers(config.start_year, config.end_year + 1, size=n)
    ability = rng.normal(0.0, 1.0, size=n)
    stem_tilt = rng.normal(0.0, 1.0, size=n)
    diligence = rng.normal(0.0, 1.0, size=n)
    lines = rng.choice(len(STUDY_LINES), size=n, p=[0.28, 0.27, 0.18, 0.12, 0.15])
    edu_types = rng.choice(len(EDUCATION_TYPES), size=n, p=[0.55, 0.12, 0.15, 0.12, 0.06])
    n_hs = np.maximum(6, rng.poisson(config.mean_grade_events - 5.0, size=n))
    n_prim = rng.integers(3, 7, size=n)
    female = rng.random(n) < config.female_rate
    danish = rng.random(n) < config.danish_rate

    course_probs = {line: _course_probs(line) for line in STUDY_LINES}
    hs_institutions = max(2, n // 400)
    prim_institutions = max(2, n // 250)

    # grade events; ability drives level, tilt moves stem vs language courses
    all_events: list[list] = []
    gpa = np.empty(n)
    stem_gap = np.empty(n)
    dispersion = np.empty(n)
    trend = np.empty(n)
    # quantization to the 7-step grid shifts the mean slightly; offset corrects it
    center = config.gpa_mean + 0.08
    for i in range(n):
        line = STUDY_LINES[lines[i]]
        edu = EDUCATION_TYPES[edu_types[i]]
        k_hs, k_pr = int(n_hs[i]), int(n_prim[i])
        k = k_hs + k_pr
        courses = rng.choice(len(_COURSES), size=k, p=course_probs[line])
        fields_drawn = _COURSE_FIELD[courses]
        tilt_dir = np.where(fields_drawn == 0, 1.0, np.where(fields_drawn == 1, -0.7, 0.1))
        improve = 0.35 * diligence[i]
        # high-school events span three years; primary sits two years earlier
        hs_years = np.sort(rng.integers(years[i] - 3, years[i], size=k_hs))
        pr_years = np.full(k_pr, years[i] - 5)
        ev_years = np.concatenate([pr_years, hs_years])
        rel = ev_years - ev_years.min()
        raw = (
            center
            + 2.05 * ability[i]
            + 1.5 * tilt_dir * stem_tilt[i]
            + improve * rel
            + rng.normal(0.0, 1.9, size=k)
        )
        grades = _nearest_step(raw)
        hs_inst = f"hs{rng.integers(hs_institutions):03d}"
        pr_inst = f"ps{rng.integers(prim_institutions):03d}"
        events = []
        for j in range(k):
            primary = j < k_pr
            events.append(
                GradeEvent(
                    year=int(ev_years[j]),
                    course=_COURSES[courses[j]],
                    course_level=COURSE_LEVELS[int(rng.integers(3))] if not primary else "C",
                    test_type=TEST_TYPES[int(rng.integers(3))],
                    education_type=edu,
                    study_line=line,
                    school_stage="primary" if primary else "high_school",
                    institution_id=pr_inst if primary else hs_inst,
                    grade=int(grades[j]),
                )
            )
        events.sort(key=lambda e: (e.year, e.course))
        all_events.append(events)
        hs_grades = grades[k_pr:]
        gpa[i] = round(float(hs_grades.mean()), 2)
        values = grades.astype(float)
        overall = values.mean()
        stem_vals = values[fields_drawn == 0]
        stem_gap[i] = (stem_vals.mean() - overall) if stem_vals.size else 0.0
        dispersion[i] = values.std()
        yr_first, yr_last = ev_years.min(), ev_years.max()
        trend[i] = values[ev_years == yr_last].mean() - values[ev_years == yr_first].mean() if yr_first != yr_last else 0.0

    gpa_z = _zscore(gpa)
    stem_z = _zscore(stem_gap)
    disp_z = _zscore(dispersion)
    trend_z = _zscore(trend)

    # quota-2 opt-in falls with GPA; admission through the human track does too
    optin_lin = -1.0 * gpa_z
    a0 = _solve_intercept(optin_lin, config.quota2_optin_rate)
    opted = rng.random(n) < 1.0 / (1.0 + np.exp(-(a0 + optin_lin)))
    human_score = 0.6 * np.tanh(stem_z) - 0.4 * disp_z**2 + 0.5 * trend_z + 0.6 * diligence + rng.normal(0.0, 0.8, size=n)
    # decile 1 is the strongest human assessment, ranked among opted-in students
    decile = np.zeros(n, dtype=int)
    opt_idx = np.flatnonzero(opted)
    if opt_idx.size:
        order = np.argsort(np.argsort(-human_score[opt_idx], kind="stable"), kind="stable")
        decile[opt_idx] = (order * 10 // opt_idx.size) + 1
    cond_rate = min(0.95, config.human_admit_rate / max(opted.mean(), 1e-9))
    human_lin = -0.8 * gpa_z - 0.35 * (decile - 5.5)
    h0 = _solve_intercept(human_lin[opted], cond_rate)
    human_admit = opted & (rng.random(n) < 1.0 / (1.0 + np.exp(-(h0 + human_lin))))

    # program choice: first-choice field from the study line's affinity list
    prog_idx = np.empty(n, dtype=int)
    n_apps = np.minimum(1 + rng.geometric(0.45, size=n), config.max_applications)
    accepted_rank = np.minimum(rng.geometric(0.72, size=n), n_apps)
    app_lists: list[list[int]] = []
    for i in range(n):
        affinity = _LINE_AFFINITY[STUDY_LINES[lines[i]]]
        pool: list[int] = []
        for f in affinity:
            pool.extend(prog_by_field.get(f, []))
        if not pool:
            pool = list(range(len(prog_ids)))
        k = min(int(n_apps[i]), len(prog_ids))
        if k <= len(set(pool)):
            chosen = rng.choice(sorted(set(pool)), size=k, replace=False)
        else:
            chosen = rng.choice(len(prog_ids), size=k, replace=False)
        app_lists.append([int(c) for c in chosen])
        prog_idx[i] = app_lists[i][min(int(accepted_rank[i]), k) - 1]

    # planted completion model: logistic in GPA, nonlinear grade profile, program effects
    profile_term = config.stem_weight * np.tanh(stem_z) + config.dispersion_weight * disp_z**2 + config.trend_weight * trend_z
    lin = config.gpa_weight * gpa_z + profile_term + program_effects[prog_idx]
    train_mask = years < config.end_year if (years < config.end_year).any() else np.ones(n, bool)
    b0 = _solve_intercept(lin[train_mask], config.completion_mean)
    planted_p = 1.0 / (1.0 + np.exp(-(b0 + lin)))
    completed = rng.random(n) < planted_p
    first_year_gpa = np.clip(7.0 + 1.9 * (lin - lin.mean()) + rng.normal(0.0, 1.4, size=n), -3.0, 12.0)

    meta["planted"] = {
        "intercept": float(b0),
        "gpa_weight": config.gpa_weight,
        "stem_weight": config.stem_weight,
        "dispersion_weight": config.dispersion_weight,
        "trend_weight": config.trend_weight,
    }

    # sociodemographics with register-style missingness
    age = 18.0 + rng.gamma(2.2, 1.0, size=n) + 0.9 * human_admit
    age[rng.random(n) < 0.013] = np.nan
    inc1 = rng.lognormal(12.2, 0.75, size=n)
    inc2 = rng.lognormal(12.5, 0.9, size=n)
    wea1 = rng.lognormal(12.0, 1.6, size=n)
    wea2 = rng.lognormal(12.6, 1.6, size=n)
    edu_m1 = np.clip(rng.normal(174.3, 31.2, size=n) + 6.0 * diligence, 60, 260)
    edu_m2 = np.clip(rng.normal(174.6, 31.7, size=n) + 6.0 * diligence, 60, 260)
    edu_i1 = np.clip(np.round(3.5 + edu_m1 / 60.0 + rng.normal(0, 0.7, size=n)), 1, 8).astype(int)
    edu_i2 = np.clip(np.round(3.5 + edu_m2 / 60.0 + rng.normal(0, 0.7, size=n)), 1, 8).astype(int)
    for col, rate in ((inc1, 0.015), (inc2, 0.048), (wea1, 0.015), (wea2, 0.048), (edu_m1, 0.013), (edu_m2, 0.030)):
        col[rng.random(n) < rate] = np.nan
    parental = np.column_stack([inc1, inc2, wea1, wea2, edu_m1, edu_m2])
    ses = _ses_high(parental)

    def _opt(v: float) -> float | None:
        return None if math.isnan(v) else round(float(v), 2)

    students: list[Student] = []
    for i in range(n):
        apps = []
        for r, pi in enumerate(app_lists[i], start=1):
            apps.append(
                ApplicationEvent(
                    program_id=prog_ids[pi],
                    isced_field=programs[prog_ids[pi]].isced_field,
                    rank=r,
                    quota2_opt_in=bool(opted[i]),
                    human_rank_decile=int(decile[i]) if opted[i] else None,
                )
            )
        enrolled = programs[prog_ids[prog_idx[i]]]
        enroll_event = EnrollmentEvent(
            year=int(years[i]),
            program_id=enrolled.program_id,
            isced_field=enrolled.isced_field,
            cutoff_gpa=enrolled.prior_year_gpa_cutoff,
        )
        socio = SocioRecord(
            age=_opt(age[i]),
            female=bool(female[i]),
            danish_origin=bool(danish[i]),
            income=(_opt(inc1[i]), _opt(inc2[i])),
            wealth=(_opt(wea1[i]), _opt(wea2[i])),
            edu_isced=(None if math.isnan(edu_m1[i]) else int(edu_i1[i]), None if math.isnan(edu_m2[i]) else int(edu_i2[i])),
            edu_months=(_opt(edu_m1[i]), _opt(edu_m2[i])),
            ses_high=bool(ses[i]),
        )
        students.append(
            Student(
                id=i,
                gpa=float(gpa[i]),
                events=all_events[i] + apps + [enroll_event],
                sociodemo=socio,
                enrolled_program=enrolled.program_id,
                admission_quota="human" if human_admit[i] else "gpa",
                cohort_year=int(years[i]),
                completed=bool(completed[i]),
                planted_p=float(planted_p[i]),
                first_year_gpa=round(float(first_year_gpa[i]), 3),
            )
        )
    return Cohort(students=students, programs=programs, meta=meta)


def temporal_split(cohort: Cohort, holdout_year: int | None = None) -> tuple[Cohort, Cohort]:
    """Train on every year before the holdout year, test on the holdout."""
    years = cohort.years()
    if not years:
        raise ValueError("cannot split an empty cohort")
    holdout = max(years) if holdout_year is None else holdout_year
    if holdout not in years:
        raise ValueError(f"holdout year {holdout} absent from cohort")
    train = cohort.filter_years([y for y in years if y < holdout])
    test = cohort.filter_years([holdout])
    if not train.students:
        raise ValueError("temporal split leaves an empty training set")
    return train, test


def validation_split(train: Cohort, fraction: float = 0.05, seed: int = 0) -> tuple[Cohort, Cohort]:
    """Carve a validation set out of train, stratified by cohort year."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    rng = substream(seed, "validation-split")
    by_year: dict[int, list[int]] = {}
    for idx, s in enumerate(train.students):
        by_year.setdefault(s.cohort_year, []).append(idx)

    if any(len(ids) < 2 for ids in by_year.values()):
        warnings.warn("a year has fewer than 2 students; falling back to global sampling", stacklevel=2)
        all_idx = np.arange(len(train.students))
        k = int(round(fraction * len(all_idx)))
        val_idx = set(rng.choice(all_idx, size=k, replace=False).tolist()) if k else set()
    else:
        val_idx = set()
        for year in sorted(by_year):
            ids = by_year[year]
            k = int(round(fraction * len(ids)))
            if k:
                val_idx.update(rng.choice(ids, size=k, replace=False).tolist())

    fit = [s for i, s in enumerate(train.students) if i not in val_idx]
    val = [s for i, s in enumerate(train.students) if i in val_idx]
    return (
        Cohort(students=fit, programs=train.programs, meta=train.meta),
        Cohort(students=val, programs=train.programs, meta=train.meta),
    )


# ---------------------------------------------------------------------------
# serialization: versioned line-oriented JSON, one student per line

_HEADER = "admitsim-cohort v1"


def _event_to_dict(event) -> dict:
    if isinstance(event, GradeEvent):
        d = {"kind": "grade"}
    elif isinstance(event, ApplicationEvent):
        d = {"kind": "application"}
    elif isinstance(event, EnrollmentEvent):
        d = {"kind": "enrollment"}
    else:
        raise TypeError(f"unknown event type {type(event).__name__}")
    d.update(dataclasses.asdict(event))
    return d


def _event_from_dict(d: dict):
    kind = d.pop("kind")
    if kind == "grade":
        return GradeEvent(**d)
    if kind == "application":
        return ApplicationEvent(**d)
    if kind == "enrollment":
        return EnrollmentEvent(**d)
    raise ValueError(f"unknown event kind {kind!r}")


def _student_to_dict(s: Student) -> dict:
    d = dataclasses.asdict(s)
    d["events"] = [_event_to_dict(e) for e in s.events]
    return d


def _student_from_dict(d: dict) -> Student:
    socio = d["sociodemo"]
    for key in ("income", "wealth", "edu_isced", "edu_months"):
        socio[key] = tuple(socio[key])
    d["sociodemo"] = SocioRecord(**socio)
    d["events"] = [_event_from_dict(e) for e in d["events"]]
    return Student(**d)


def save_cohort(cohort: Cohort, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(_HEADER + "\n")
        head = {
            "programs": [dataclasses.asdict(p) for p in cohort.programs.values()],
            "meta": cohort.meta,
        }
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for s in cohort.students:
            fh.write(json.dumps(_student_to_dict(s), sort_keys=True) + "\n")


def load_cohort(path) -> Cohort:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if text == "":
        return Cohort(students=[], programs={}, meta={})
    lines = text.splitlines()
    if lines[0] != _HEADER:
        raise ValueError(f"line 1: expected header {_HEADER!r}")
    if len(lines) < 2:
        raise ValueError("line 2: missing program/meta record")
    try:
        head = json.loads(lines[1])
        programs = {p["program_id"]: Program(**p) for p in head["programs"]}
        meta = head["meta"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValueError(f"line 2: malformed program/meta record: {exc}") from exc
    students = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        try:
            students.append(_student_from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"line {lineno}: malformed student record: {exc}") from exc
    return Cohort(students=students, programs=programs, meta=meta)


def with_enrollment(student: Student, program: Program) -> Student:
    """Copy of the student as if enrolled in ``program`` (same year/quota)."""
    events = []
    for e in student.events:
        if isinstance(e, EnrollmentEvent):
            events.append(
                EnrollmentEvent(
                    year=e.year,
                    program_id=program.program_id,
                    isced_field=program.isced_field,
                    cutoff_gpa=program.prior_year_gpa_cutoff,
                )
            )
        else:
            events.append(e)
    return dataclasses.replace(student, events=events, enrolled_program=program.program_id)
