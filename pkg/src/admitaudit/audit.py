"""Bootstrap ensembles and arbitrariness measurement.

For each policy, M models are trained on independent with-replacement
resamples of the training records (the preprocessor is refit on every
resample, so each ensemble member is a complete learning process on its own
dataset). Each model ranks the same test cohort; per-applicant top-pool
membership across models yields self-consistency

    sc = 1 - 2*M0*M1 / (M*(M-1))

and mixing two policies' ensembles yields the across-policy set whose mean
arbitrariness (1 - sc) is compared to the within-policy level via the
arbitrariness ratio ar = (1 - mean sc_across) / (1 - mean sc_within).
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from . import features, gbdt, ranking
from .features import ColumnStore, FeatureSchema, PolicySpec
from .gbdt import GbdtConfig
from .seeds import derive_seed
from .synthgen import ApplicantRecord, target_labels
from .groupstats import wilcoxon_signed_rank

logger = logging.getLogger(__name__)

_MAX_RESAMPLE_RETRIES = 100

CLASS_TOP = "consistently_top"
CLASS_NOT_TOP = "consistently_not_top"
CLASS_ARBITRARY = "arbitrary"


class AuditError(ValueError):
    pass


@dataclass(frozen=True)
class BootstrapSpec:
    """Ensemble size and seeding; resample size equals the train size."""

    m: int = 1000
    master_seed: int = 0

    def validate(self) -> None:
        if self.m < 2:
            raise AuditError(f"bootstrap ensembles need m >= 2 models, got {self.m}")

    def member_seed(self, policy_name: str, index: int, retry: int = 0) -> int:
        if retry:
            return derive_seed(self.master_seed, "within", policy_name, index, "retry", retry)
        return derive_seed(self.master_seed, "within", policy_name, index)


@dataclass(frozen=True)
class EnsembleOutcomes:
    """Top-pool membership of every test applicant under every model."""

    name: str
    ids: tuple[str, ...]
    outcomes: np.ndarray  # bool, shape (n_applicants, M)

    @property
    def m(self) -> int:
        return self.outcomes.shape[1]


def self_consistency(m0: int, m1: int) -> float:
    """Probability that two distinct models agree on an applicant.

    Computed as an exact integer ratio so it matches pair enumeration
    (C(m1,2) + C(m0,2)) / C(m0+m1,2) bit for bit.
    """
    if m0 < 0 or m1 < 0:
        raise AuditError(f"counts must be non-negative, got ({m0}, {m1})")
    m = m0 + m1
    if m < 2:
        raise AuditError(f"self-consistency needs at least 2 models, got {m}")
    denom = m * (m - 1)
    return (denom - 2 * m0 * m1) / denom


def consistency_values(outcomes: np.ndarray) -> np.ndarray:
    """Per-row self-consistency of a boolean outcome matrix."""
    m = outcomes.shape[1]
    if m < 2:
        raise AuditError(f"self-consistency needs at least 2 models, got {m}")
    m1 = outcomes.sum(axis=1).astype(np.int64)
    m0 = m - m1
    denom = m * (m - 1)
    return (denom - 2 * m0 * m1) / denom


def arbitrariness_ratio(sc_across: Sequence[float], sc_within: Sequence[float]) -> float:
    """Mean across-arbitrariness relative to mean within-arbitrariness."""
    across = np.asarray(sc_across, dtype=np.float64)
    within = np.asarray(sc_within, dtype=np.float64)
    if len(across) == 0 or len(within) == 0:
        raise AuditError("self-consistency lists must be non-empty")
    mean_within = float(within.mean())
    if mean_within >= 1.0:
        raise AuditError(
            "arbitrariness ratio is undefined: mean within-policy self-consistency is 1 "
            "(zero within-arbitrariness)"
        )
    return (1.0 - float(across.mean())) / (1.0 - mean_within)


@dataclass(frozen=True)
class ConsistencyEntry:
    id: str
    m: int
    m1: int
    sc: float
    label: str


@dataclass(frozen=True)
class ConsistencyReport:
    set_name: str
    tau: float
    entries: tuple[ConsistencyEntry, ...]
    shares: Mapping[str, float]

    def sc_values(self) -> np.ndarray:
        return np.array([e.sc for e in self.entries], dtype=np.float64)


def classify_consistency(outcomes: EnsembleOutcomes, tau: float = 0.95) -> ConsistencyReport:
    """Three-way classification of each applicant at threshold tau."""
    m = outcomes.m
    m1 = outcomes.outcomes.sum(axis=1).astype(np.int64)
    entries = []
    counts = {CLASS_TOP: 0, CLASS_NOT_TOP: 0, CLASS_ARBITRARY: 0}
    for i, applicant_id in enumerate(outcomes.ids):
        sc = self_consistency(int(m - m1[i]), int(m1[i]))
        if sc >= tau:
            label = CLASS_TOP if m1[i] > m / 2 else CLASS_NOT_TOP
        else:
            label = CLASS_ARBITRARY
        counts[label] += 1
        entries.append(ConsistencyEntry(applicant_id, m, int(m1[i]), sc, label))
    n = len(entries)
    shares = {k: v / n for k, v in counts.items()}
    return ConsistencyReport(set_name=outcomes.name, tau=tau, entries=tuple(entries), shares=shares)


def bootstrap_indices(
    spec: BootstrapSpec, policy_name: str, index: int, n: int, retry: int = 0
) -> np.ndarray:
    """One member's with-replacement resample (positions 0..n-1, length n)."""
    seed = spec.member_seed(policy_name, index, retry)
    return np.random.default_rng(seed).integers(0, n, n)


def _fit_member(
    store: ColumnStore,
    train_rows: np.ndarray,
    test_rows: np.ndarray,
    labels: np.ndarray,
    policy: PolicySpec,
    spec: BootstrapSpec,
    config: GbdtConfig,
    index: int,
    cutoff: int,
    target: str,
    max_vocab: int,
) -> np.ndarray:
    """Train one bootstrap member and return its test top-pool mask."""
    n_train = len(train_rows)
    resample = None
    for retry in range(_MAX_RESAMPLE_RETRIES):
        candidate = train_rows[bootstrap_indices(spec, policy.name, index, n_train, retry)]
        picked = labels[candidate]
        if picked.any() and not picked.all():
            resample = candidate
            break
        logger.warning(
            "bootstrap %s[%d] retry %d: resample has a single label class",
            policy.name,
            index,
            retry + 1,
        )
    if resample is None:
        raise AuditError(
            f"bootstrap {policy.name}[{index}]: {_MAX_RESAMPLE_RETRIES} consecutive "
            "resamples had a single label class"
        )
    state = features.fit_columns(store, resample, max_vocab=max_vocab)
    train_matrix = features.transform_columns(store, resample, state, policy)
    test_matrix = features.transform_columns(store, test_rows, state, policy)
    model = gbdt.train(train_matrix, labels[resample], config, target=target)
    scores = gbdt.predict_proba(model, test_matrix)
    return ranking.top_pool_mask(scores, cutoff)


_WORKER_CTX: dict = {}


def _worker_init(payload: dict) -> None:
    _WORKER_CTX.update(payload)


def _worker_run(index: int) -> tuple[int, np.ndarray]:
    c = _WORKER_CTX
    mask = _fit_member(
        c["store"],
        c["train_rows"],
        c["test_rows"],
        c["labels"],
        c["policy"],
        c["spec"],
        c["config"],
        index,
        c["cutoff"],
        c["target"],
        c["max_vocab"],
    )
    return index, mask


def build_within_set(
    train: Sequence[ApplicantRecord],
    test: Sequence[ApplicantRecord],
    policy: PolicySpec,
    spec: BootstrapSpec,
    config: Optional[GbdtConfig] = None,
    schema: Optional[FeatureSchema] = None,
    cutoff: int = 9,
    target: str = "admitted",
    max_vocab: int = 512,
    n_workers: int = 1,
    store: Optional[ColumnStore] = None,
) -> EnsembleOutcomes:
    """Train M bootstrap models under one policy and collect test outcomes.

    Deterministic for a fixed master seed regardless of ``n_workers``: every
    member's seed is derived from (master seed, policy name, index), and the
    outcome matrix is assembled by index.

    Passing a prebuilt ``store`` (train records columnized first, then test)
    skips re-columnizing when several policies share the same cohort.
    """
    spec.validate()
    config = config or GbdtConfig()
    schema = schema or features.default_schema()
    if store is None:
        store = features.columnize(list(train) + list(test), schema)
    n_train, n_test = len(train), len(test)
    if store.n_rows != n_train + n_test:
        raise AuditError("column store does not match train + test records")
    train_rows = np.arange(n_train)
    test_rows = np.arange(n_train, n_train + n_test)
    labels = np.zeros(store.n_rows, dtype=bool)
    labels[:n_train] = target_labels(train, target)

    outcomes = np.zeros((n_test, spec.m), dtype=bool)
    payload = {
        "store": store,
        "train_rows": train_rows,
        "test_rows": test_rows,
        "labels": labels,
        "policy": policy,
        "spec": spec,
        "config": config,
        "cutoff": cutoff,
        "target": target,
        "max_vocab": max_vocab,
    }
    if n_workers > 1:
        ctx = None
        if hasattr(os, "fork"):
            import multiprocessing

            ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(
            max_workers=n_workers, mp_context=ctx, initializer=_worker_init, initargs=(payload,)
        ) as pool:
            for index, mask in pool.map(_worker_run, range(spec.m), chunksize=4):
                outcomes[:, index] = mask
    else:
        _worker_init(payload)
        for index in range(spec.m):
            outcomes[:, index] = _worker_run(index)[1]
    return EnsembleOutcomes(name=policy.name, ids=tuple(r.id for r in test), outcomes=outcomes)


def build_across_set(
    within_a: EnsembleOutcomes,
    within_b: EnsembleOutcomes,
    k: int = 500,
    seed: int = 0,
) -> EnsembleOutcomes:
    """Mix k models from each of two within-policy sets (without replacement)."""
    if within_a.ids != within_b.ids:
        raise AuditError(
            f"across-set requires identical applicant ids; "
            f"{within_a.name} and {within_b.name} differ"
        )
    if k < 1 or k > within_a.m or k > within_b.m:
        raise AuditError(
            f"k={k} must be in [1, min(M_a={within_a.m}, M_b={within_b.m})]"
        )
    rng = np.random.default_rng(seed)
    cols_a = np.sort(rng.choice(within_a.m, size=k, replace=False))
    cols_b = np.sort(rng.choice(within_b.m, size=k, replace=False))
    mixed = np.concatenate([within_a.outcomes[:, cols_a], within_b.outcomes[:, cols_b]], axis=1)
    return EnsembleOutcomes(
        name=f"across({within_a.name},{within_b.name})", ids=within_a.ids, outcomes=mixed
    )


@dataclass(frozen=True)
class ArbitrarinessComparison:
    within_a: str
    within_b: str
    mean_sc_within_a: float
    mean_sc_within_b: float
    mean_sc_across: float
    ar_across_vs_a: float
    ar_across_vs_b: float
    ar_b_vs_a: float
    p_across_vs_a: Optional[float]
    p_across_vs_b: Optional[float]
    p_b_vs_a: Optional[float]


def _paired_wilcoxon_p(x: np.ndarray, y: np.ndarray) -> Optional[float]:
    diffs = x - y
    if not np.any(diffs != 0):
        return None
    return wilcoxon_signed_rank(diffs)[1]


def compare_policies(
    within_a: EnsembleOutcomes,
    within_b: EnsembleOutcomes,
    across: EnsembleOutcomes,
) -> ArbitrarinessComparison:
    """Within/within/across arbitrariness ratios with paired Wilcoxon tests."""
    sc_a = consistency_values(within_a.outcomes)
    sc_b = consistency_values(within_b.outcomes)
    sc_x = consistency_values(across.outcomes)
    return ArbitrarinessComparison(
        within_a=within_a.name,
        within_b=within_b.name,
        mean_sc_within_a=float(sc_a.mean()),
        mean_sc_within_b=float(sc_b.mean()),
        mean_sc_across=float(sc_x.mean()),
        ar_across_vs_a=arbitrariness_ratio(sc_x, sc_a),
        ar_across_vs_b=arbitrariness_ratio(sc_x, sc_b),
        ar_b_vs_a=arbitrariness_ratio(sc_b, sc_a),
        p_across_vs_a=_paired_wilcoxon_p(sc_x, sc_a),
        p_across_vs_b=_paired_wilcoxon_p(sc_x, sc_b),
        p_b_vs_a=_paired_wilcoxon_p(sc_b, sc_a),
    )


@dataclass(frozen=True)
class GroupArbitrariness:
    group: str
    n: int
    mean_sc_a: Optional[float]
    mean_sc_b: Optional[float]
    ar: Optional[float]  # within-B arbitrariness relative to within-A
    p: Optional[float]
    note: str = ""


def group_arbitrariness(
    within_a: EnsembleOutcomes,
    within_b: EnsembleOutcomes,
    groups: Mapping[str, str],
    min_group_size: int = 2,
) -> list[GroupArbitrariness]:
    """Per-group arbitrariness ratio of policy B relative to policy A.

    ``groups`` maps applicant id to a group label (e.g. race/ethnicity).
    Groups below ``min_group_size`` are reported without statistics.
    """
    if within_a.ids != within_b.ids:
        raise AuditError("group comparison requires identical applicant ids")
    sc_a = consistency_values(within_a.outcomes)
    sc_b = consistency_values(within_b.outcomes)
    labels = np.array([groups.get(i, "") for i in within_a.ids], dtype=object)
    results = []
    for group in sorted({g for g in labels if g}):
        mask = labels == group
        n = int(mask.sum())
        if n < min_group_size:
            results.append(
                GroupArbitrariness(group, n, None, None, None, None, note="insufficient_n")
            )
            continue
        a = sc_a[mask]
        b = sc_b[mask]
        mean_a = float(a.mean())
        mean_b = float(b.mean())
        if mean_a >= 1.0:
            ar = None
            note = "zero_within_a_arbitrariness"
        else:
            ar = (1.0 - mean_b) / (1.0 - mean_a)
            note = ""
        p = _paired_wilcoxon_p(b, a)
        if p is None and not note:
            note = "all_zero_differences"
        results.append(GroupArbitrariness(group, n, mean_a, mean_b, ar, p, note=note))
    return results


def write_consistency_csv(reports: Sequence[ConsistencyReport], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "set_name", "m", "m1", "sc", "class"])
        for report in reports:
            for e in report.entries:
                writer.writerow([e.id, report.set_name, e.m, e.m1, repr(e.sc), e.label])


def read_consistency_csv(path: str) -> dict[str, list[ConsistencyEntry]]:
    """Entries grouped by set name; shares can be recomputed from these."""
    out: dict[str, list[ConsistencyEntry]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            entry = ConsistencyEntry(
                id=row["id"],
                m=int(row["m"]),
                m1=int(row["m1"]),
                sc=float(row["sc"]),
                label=row["class"],
            )
            out.setdefault(row["set_name"], []).append(entry)
    return out


def write_outcomes_csv(outcomes: EnsembleOutcomes, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id"] + [f"model_{j:04d}" for j in range(outcomes.m)])
        matrix = outcomes.outcomes.astype(int)
        for i, applicant_id in enumerate(outcomes.ids):
            writer.writerow([applicant_id] + matrix[i].tolist())


def read_outcomes_csv(path: str, name: Optional[str] = None) -> EnsembleOutcomes:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        ids = []
        rows = []
        for row in reader:
            ids.append(row[0])
            rows.append([cell == "1" for cell in row[1:]])
    matrix = np.array(rows, dtype=bool)
    if name is None:
        base = os.path.basename(path)
        name = base[len("outcomes_") : -len(".csv")] if base.startswith("outcomes_") else base
    return EnsembleOutcomes(name=name, ids=tuple(ids), outcomes=matrix)
