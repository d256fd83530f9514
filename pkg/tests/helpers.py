"""Shared builders for hand-constructed records."""

from admitaudit.synthgen import ApplicantRecord

_BASE = dict(
    id="r-000000",
    race_ethnicity="White",
    urm_flag=False,
    sex="Male",
    first_gen=False,
    fee_waiver=False,
    citizenship="US",
    parental_education="Bachelors",
    school_type="Public",
    highest_math=5,
    gpa=3.5,
    sat_percentile=80.0,
    act_percentile=None,
    intended_major="ComputerScience",
    activity_text="chess club",
    essay_text="building projects with my hands",
    outcome="rejected",
    cohort="train",
)


def make_record(**overrides) -> ApplicantRecord:
    fields = dict(_BASE)
    fields.update(overrides)
    return ApplicantRecord(**fields)
