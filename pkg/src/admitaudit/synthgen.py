"""Synthetic applicant cohort generator.

Produces reproducible train/test cohorts whose demographic and outcome
marginals are configurable, and whose historical admission labels encode a
group-aware decision rule (a log-odds bonus for URM applicants on top of a
latent merit score). Observable academics are monotone noisy transforms of
the latent merit, so ranking models can partially recover it; several
background fields are correlated with URM status so that ablating race still
leaves indirect signal.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import ndtr

RACE_CATEGORIES = (
    "White",
    "Asian",
    "Hispanic",
    "Black",
    "AmericanIndian/AlaskaNative",
    "NativeHawaiian/PacificIslander",
    "Multiracial",
    "NotReported",
)

# Common App URM rule: Black/African American, Latinx, American Indian or
# Alaska Native, Native Hawaiian or Other Pacific Islander.
URM_RACES = frozenset(
    {
        "Hispanic",
        "Black",
        "AmericanIndian/AlaskaNative",
        "NativeHawaiian/PacificIslander",
    }
)

OUTCOMES = ("admitted", "waitlisted", "rejected")
COHORTS = ("train", "test")

MATH_BANDS = (
    "Algebra",
    "Geometry",
    "AlgebraII",
    "Precalculus",
    "Calculus",
    "BeyondCalculus",
)

_MAJORS = (
    ("ComputerScience", 0.24),
    ("MechanicalEngineering", 0.13),
    ("ElectricalEngineering", 0.10),
    ("BiomedicalEngineering", 0.08),
    ("ChemicalEngineering", 0.07),
    ("CivilEngineering", 0.05),
    ("Mathematics", 0.07),
    ("Physics", 0.06),
    ("Biology", 0.08),
    ("Economics", 0.05),
    ("Undecided", 0.07),
)

# Share of the URM / non-URM mass assigned to each race category.
_URM_MIX = (("Hispanic", 0.55), ("Black", 0.33), ("AmericanIndian/AlaskaNative", 0.07), ("NativeHawaiian/PacificIslander", 0.05))
_NON_URM_MIX = (("White", 0.45), ("Asian", 0.38), ("Multiracial", 0.10), ("NotReported", 0.07))

# Activity keywords: (phrase, merit tilt, engineering-major tilt).
_ACTIVITIES = (
    ("research internship", 0.9, 0.0),
    ("math olympiad", 0.8, 0.0),
    ("science fair", 0.5, 0.0),
    ("robotics team", 0.3, 0.8),
    ("hackathon club", 0.4, 0.8),
    ("debate team", 0.0, -0.2),
    ("student government", 0.0, -0.2),
    ("varsity soccer", -0.2, 0.0),
    ("school newspaper", -0.1, -0.3),
    ("volunteer tutoring", 0.1, 0.0),
    ("chess club", 0.2, 0.2),
    ("community orchestra", 0.0, -0.2),
)

# Essay themes: (phrase, merit tilt, low-income tilt).
_ESSAY_THEMES = (
    ("curiosity about how machines work", 0.4, 0.0),
    ("discovery in the research lab", 0.7, 0.0),
    ("building projects with my hands", 0.2, 0.0),
    ("working after school to support my family", -0.1, 1.2),
    ("first in my family to dream of college", -0.1, 0.9),
    ("leading my team through a losing season", 0.0, 0.0),
    ("finding my voice on stage", -0.1, 0.0),
    ("moving to a new country and starting over", 0.0, 0.4),
    ("teaching myself to code at the library", 0.3, 0.5),
    ("caring for my younger siblings", -0.1, 0.8),
)


class CohortSpecError(ValueError):
    """Invalid cohort specification; message names the offending field."""


class CohortCsvError(ValueError):
    """Malformed cohort CSV; message names the row and column."""


@dataclass(frozen=True)
class CohortSpec:
    """Parameters of a synthetic cohort.

    Default rates follow the summary statistics of a selective
    engineering-school applicant pool (train-year rows): 5.7% admitted,
    14.4% waitlisted, 17.3% URM, 31.1% female, 15.9% first-generation,
    25.7% low-SES, ~68% test submitters.
    """

    n_train: int = 44293
    n_test: int = 15540
    seed: int = 0
    urm_rate: float = 0.173
    female_rate: float = 0.311
    first_gen_rate: float = 0.159
    low_ses_rate: float = 0.257
    admit_rate: float = 0.057
    waitlist_rate: float = 0.144
    test_submission_rate: float = 0.68
    group_boost: float = 0.85
    merit_noise_sd: float = 1.25
    # Optional dependence of test submission on merit (log-odds-ish slope);
    # 0 keeps submission independent of merit.
    submission_merit_slope: float = 0.0

    def validate(self) -> None:
        rate_fields = (
            "urm_rate",
            "female_rate",
            "first_gen_rate",
            "low_ses_rate",
            "admit_rate",
            "waitlist_rate",
            "test_submission_rate",
        )
        for name in rate_fields:
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise CohortSpecError(f"{name} must be in [0, 1], got {value!r}")
        if self.admit_rate + self.waitlist_rate > 1.0:
            raise CohortSpecError(
                "admit_rate + waitlist_rate must be <= 1, got "
                f"{self.admit_rate + self.waitlist_rate!r}"
            )
        for name in ("n_train", "n_test"):
            value = getattr(self, name)
            if value < 100:
                raise CohortSpecError(f"{name} must be >= 100, got {value!r}")
        if self.seed < 0 or self.seed >= 2**64:
            raise CohortSpecError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.merit_noise_sd < 0:
            raise CohortSpecError(f"merit_noise_sd must be >= 0, got {self.merit_noise_sd!r}")


@dataclass(frozen=True)
class ApplicantRecord:
    id: str
    race_ethnicity: str
    urm_flag: bool
    sex: str
    first_gen: bool
    fee_waiver: bool
    citizenship: str
    parental_education: str
    school_type: str
    highest_math: int
    gpa: float
    sat_percentile: Optional[float]
    act_percentile: Optional[float]
    intended_major: str
    activity_text: str
    essay_text: str
    outcome: str
    cohort: str


FIELD_NAMES = tuple(f.name for f in fields(ApplicantRecord))


def _conditional_rates(rate: float, group_rate: float, lift: float) -> tuple[float, float]:
    """Per-group Bernoulli rates preserving the overall marginal ``rate``.

    The in-group rate is ``rate * lift`` (clamped), the out-group rate is
    solved so the mixture equals ``rate`` exactly.
    """
    if group_rate <= 0.0:
        return rate, rate
    if group_rate >= 1.0:
        return rate, rate
    p_in = min(rate * lift, 1.0)
    p_out = (rate - group_rate * p_in) / (1.0 - group_rate)
    if p_out < 0.0:
        p_in = rate / group_rate
        p_out = 0.0
    return p_in, p_out


def _weighted_choice(rng: np.random.Generator, items: Sequence[tuple[str, float]], n: int) -> np.ndarray:
    names = np.array([name for name, _ in items])
    weights = np.array([w for _, w in items], dtype=float)
    weights = weights / weights.sum()
    return names[rng.choice(len(names), size=n, p=weights)]


def _normal_cdf(x: np.ndarray) -> np.ndarray:
    return ndtr(x)


def _pick_phrases(
    rng: np.random.Generator,
    pool: Sequence[tuple[str, float, float]],
    tilt_a: np.ndarray,
    tilt_b: np.ndarray,
    n_phrases: np.ndarray,
) -> list[str]:
    """Draw per-applicant phrase sets with softmax weights exp(a*tilt_a + b*tilt_b)."""
    phrases = [p for p, _, _ in pool]
    coef_a = np.array([a for _, a, _ in pool])
    coef_b = np.array([b for _, _, b in pool])
    logits = np.outer(tilt_a, coef_a) + np.outer(tilt_b, coef_b)
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    out = []
    for i in range(len(tilt_a)):
        k = int(n_phrases[i])
        picks = rng.choice(len(phrases), size=k, replace=False, p=probs[i])
        out.append("; ".join(phrases[j] for j in sorted(picks)))
    return out


def _generate_one_cohort(
    spec: CohortSpec, rng: np.random.Generator, n: int, cohort: str, prefix: str
) -> tuple[list[ApplicantRecord], np.ndarray]:
    merit = rng.standard_normal(n)

    urm = rng.random(n) < spec.urm_rate
    race = np.empty(n, dtype=object)
    n_urm = int(urm.sum())
    race[urm] = _weighted_choice(rng, _URM_MIX, n_urm)
    race[~urm] = _weighted_choice(rng, _NON_URM_MIX, n - n_urm)

    sex = np.where(rng.random(n) < spec.female_rate, "Female", "Male")

    fg_in, fg_out = _conditional_rates(spec.first_gen_rate, spec.urm_rate, lift=2.2)
    first_gen = rng.random(n) < np.where(urm, fg_in, fg_out)

    fw_in, fw_out = _conditional_rates(spec.low_ses_rate, spec.urm_rate, lift=2.0)
    fee_waiver = rng.random(n) < np.where(urm, fw_in, fw_out)

    citizenship = _weighted_choice(
        rng, (("US", 0.84), ("PermanentResident", 0.06), ("International", 0.10)), n
    )

    parental_education = np.empty(n, dtype=object)
    u = rng.random(n)
    # First-gen parents did not complete a bachelor's degree.
    parental_education[first_gen] = np.select(
        [u[first_gen] < 0.15, u[first_gen] < 0.70],
        ["NoHighSchool", "HighSchool"],
        default="SomeCollege",
    )
    parental_education[~first_gen] = np.select(
        [u[~first_gen] < 0.10, u[~first_gen] < 0.55],
        ["SomeCollege", "Bachelors"],
        default="Graduate",
    )

    u = rng.random(n)
    school_type = np.where(
        fee_waiver,
        np.select([u < 0.85, u < 0.93, u < 0.97, u < 0.98], ["Public", "Charter", "Private", "HomeSchool"], "International"),
        np.select([u < 0.62, u < 0.84, u < 0.91, u < 0.93], ["Public", "Private", "Charter", "HomeSchool"], "International"),
    )

    # Observable academics: monotone noisy transforms of merit.
    gpa_signal = 0.8 * merit + 0.6 * rng.standard_normal(n)
    gpa = np.clip(3.05 + 0.42 * gpa_signal, 0.0, 4.0)
    gpa = np.round(gpa, 2)

    math_signal = 0.75 * merit + 0.66 * rng.standard_normal(n)
    highest_math = (
        1
        + (math_signal > -1.9).astype(int)
        + (math_signal > -1.4).astype(int)
        + (math_signal > -0.7).astype(int)
        + (math_signal > 0.25).astype(int)
        + (math_signal > 1.45).astype(int)
    )

    sat_pct = np.round(100.0 * _normal_cdf(0.82 * merit + 0.57 * rng.standard_normal(n)), 1)
    act_pct = np.round(100.0 * _normal_cdf(0.82 * merit + 0.57 * rng.standard_normal(n)), 1)

    submit_p = np.clip(
        spec.test_submission_rate + spec.submission_merit_slope * merit, 0.0, 1.0
    )
    submits = rng.random(n) < submit_p
    which = rng.random(n)
    has_sat = submits & (which < 0.75)  # SAT only or both
    has_act = submits & (which >= 0.40)  # ACT only or both

    major = _weighted_choice(rng, _MAJORS, n)
    is_engineering = np.array([m.endswith("Engineering") or m == "ComputerScience" for m in major])

    n_acts = rng.integers(2, 5, size=n)
    activity_text = _pick_phrases(rng, _ACTIVITIES, merit, is_engineering.astype(float), n_acts)
    n_themes = rng.integers(1, 3, size=n)
    essay_text = _pick_phrases(rng, _ESSAY_THEMES, merit, fee_waiver.astype(float), n_themes)

    # Historical decision: rank latent merit + URM boost + noise, fill the
    # class top-down (capacity-constrained, not independent Bernoulli).
    label_score = merit + spec.group_boost * urm
    if spec.merit_noise_sd > 0:
        label_score = label_score + spec.merit_noise_sd * rng.standard_normal(n)
    order = np.lexsort((np.arange(n), -label_score))
    n_admit = int(round(spec.admit_rate * n))
    n_wait = int(round(spec.waitlist_rate * n))
    outcome = np.full(n, "rejected", dtype=object)
    outcome[order[:n_admit]] = "admitted"
    outcome[order[n_admit : n_admit + n_wait]] = "waitlisted"

    records = []
    for i in range(n):
        records.append(
            ApplicantRecord(
                id=f"{prefix}{i:06d}",
                race_ethnicity=str(race[i]),
                urm_flag=bool(urm[i]),
                sex=str(sex[i]),
                first_gen=bool(first_gen[i]),
                fee_waiver=bool(fee_waiver[i]),
                citizenship=str(citizenship[i]),
                parental_education=str(parental_education[i]),
                school_type=str(school_type[i]),
                highest_math=int(highest_math[i]),
                gpa=float(gpa[i]),
                sat_percentile=float(sat_pct[i]) if has_sat[i] else None,
                act_percentile=float(act_pct[i]) if has_act[i] else None,
                intended_major=str(major[i]),
                activity_text=activity_text[i],
                essay_text=essay_text[i],
                outcome=str(outcome[i]),
                cohort=cohort,
            )
        )
    return records, merit


def generate_cohort_with_latents(spec: CohortSpec) -> tuple[list[ApplicantRecord], dict[str, float]]:
    """Generate train + test records, also returning the latent merit by id.

    The latent merits exist for diagnostics and oracle checks; they are not
    part of the applicant record and never reach the feature pipeline.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    train, merit_train = _generate_one_cohort(spec, rng, spec.n_train, "train", "tr-")
    test, merit_test = _generate_one_cohort(spec, rng, spec.n_test, "test", "te-")
    records = train + test
    merits = {r.id: float(m) for r, m in zip(train, merit_train)}
    merits.update({r.id: float(m) for r, m in zip(test, merit_test)})
    return records, merits


def generate_cohort(spec: CohortSpec) -> list[ApplicantRecord]:
    """Generate a full synthetic cohort (train records first, then test)."""
    records, _ = generate_cohort_with_latents(spec)
    return records


def split_cohort(records: Iterable[ApplicantRecord]) -> tuple[list[ApplicantRecord], list[ApplicantRecord]]:
    train = [r for r in records if r.cohort == "train"]
    test = [r for r in records if r.cohort == "test"]
    return train, test


def target_labels(records: Sequence[ApplicantRecord], target: str) -> np.ndarray:
    """Boolean training labels under a target definition."""
    if target == "admitted":
        return np.array([r.outcome == "admitted" for r in records])
    if target == "admitted_or_waitlisted":
        return np.array([r.outcome in ("admitted", "waitlisted") for r in records])
    raise ValueError(f"unknown target {target!r}; expected 'admitted' or 'admitted_or_waitlisted'")


def _format_value(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_cohort(records: Sequence[ApplicantRecord], path: str) -> None:
    """Write records as UTF-8 CSV; empty cell encodes an absent optional."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FIELD_NAMES)
        for r in records:
            writer.writerow([_format_value(getattr(r, name)) for name in FIELD_NAMES])


def _parse_bool(raw: str) -> bool:
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise ValueError(f"expected 'true' or 'false', got {raw!r}")


def read_cohort(path: str) -> list[ApplicantRecord]:
    """Read a cohort CSV written by :func:`write_cohort` (lossless round-trip)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CohortCsvError(f"{path}: empty file, expected a header row") from None
        missing = [name for name in FIELD_NAMES if name not in header]
        if missing:
            raise CohortCsvError(f"{path}: header is missing column(s) {missing}")
        col = {name: header.index(name) for name in FIELD_NAMES}
        records = []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CohortCsvError(
                    f"{path}: row {row_no} has {len(row)} cells, expected {len(header)}"
                )
            values: dict[str, object] = {}
            for name in FIELD_NAMES:
                raw = row[col[name]]
                try:
                    values[name] = _parse_cell(name, raw)
                except ValueError as err:
                    raise CohortCsvError(
                        f"{path}: row {row_no}, column {name!r}: {err}"
                    ) from None
            records.append(ApplicantRecord(**values))  # type: ignore[arg-type]
    return records


def _parse_cell(name: str, raw: str) -> object:
    if name in ("urm_flag", "first_gen", "fee_waiver"):
        return _parse_bool(raw)
    if name == "highest_math":
        return int(raw)
    if name == "gpa":
        return float(raw)
    if name in ("sat_percentile", "act_percentile"):
        return float(raw) if raw else None
    if name == "outcome" and raw not in OUTCOMES:
        raise ValueError(f"unknown outcome {raw!r}")
    if name == "cohort" and raw not in COHORTS:
        raise ValueError(f"unknown cohort {raw!r}")
    return raw


def demo_spec(seed: int = 0, n_train: int = 2000, n_test: int = 1000) -> CohortSpec:
    """A desk-scale spec with the default marginals."""
    return replace(CohortSpec(), n_train=n_train, n_test=n_test, seed=seed)
