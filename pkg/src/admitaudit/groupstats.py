"""Group-impact metrics over the top pool and the statistical test suite.

Shares (URM, first-generation, low-income, actually admitted or waitlisted)
and the mean submitted-test percentile are computed over each policy's top
pool and compared against the baseline policy: exact two-sided binomial
tests for shares, Mann-Whitney U for the percentile distribution, with a
Bonferroni correction across every comparison in one report.

The exact tests use the classical definitions: the binomial p-value sums all
outcomes whose probability does not exceed the observed one (minlike); the
rank tests use exact enumeration up to 12 observations (and closed-form
counting when one sample has at most 2 observations), otherwise a
tie-corrected, continuity-corrected normal approximation sharpened with an
Edgeworth kurtosis term computed from the exact finite-sampling moments.
Wilcoxon drops zero differences before ranking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from itertools import combinations
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import binom, norm

from . import features, gbdt, ranking
from .features import FeatureSchema, PolicySpec
from .gbdt import GbdtConfig
from .ranking import RankOutcome
from .seeds import derive_seed
from .synthgen import ApplicantRecord, RACE_CATEGORIES, target_labels

_EXACT_LIMIT = 12
_PMF_SLACK = 1.0 + 1e-12


class StatsError(ValueError):
    pass


_BINOM_EXACT_N = 64


def binomial_test(k: int, n: int, p0: float) -> float:
    """Exact two-sided binomial p: total probability of outcomes no more
    likely than the observed count.

    Up to n=64 the pmf is evaluated in exact rational arithmetic, so the
    returned double is the correctly rounded true value; beyond that the
    pmf is evaluated in floating point with a 1e-12 relative slack on the
    "no more likely" comparison.
    """
    if not 0 <= k <= n:
        raise StatsError(f"need 0 <= k <= n, got k={k}, n={n}")
    if not 0.0 < p0 < 1.0:
        raise StatsError(f"null proportion must be in (0, 1), got {p0}")
    if n <= _BINOM_EXACT_N:
        p = Fraction(p0)
        q = 1 - p
        pmf_exact = [Fraction(math.comb(n, i)) * p**i * q ** (n - i) for i in range(n + 1)]
        slack = Fraction(1) + Fraction(1, 10**12)
        threshold = pmf_exact[k] * slack
        return min(1.0, float(sum(v for v in pmf_exact if v <= threshold)))
    pmf = binom.pmf(np.arange(n + 1), n, p0)
    p = float(pmf[pmf <= pmf[k] * _PMF_SLACK].sum())
    return min(1.0, p)


def _midranks(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1; tied values share the mean of their ranks."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def mann_whitney_u(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Mann-Whitney U (x side, ties get half credit) and two-sided p.

    Exact when the pooled sample has no ties and either at most 12
    observations (full enumeration) or one sample has at most 2 observations
    (closed-form rank counting). Otherwise, a tie-corrected normal
    approximation with continuity correction and an Edgeworth kurtosis term
    computed from the exact sampling moments of the rank sum.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n1, n2 = len(x), len(y)
    if n1 == 0 or n2 == 0:
        raise StatsError("both samples must be non-empty")
    pooled = np.concatenate([x, y])
    ranks = _midranks(pooled)
    u_x = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    u_y = n1 * n2 - u_x
    has_ties = len(np.unique(pooled)) < n1 + n2
    if not has_ties and n1 + n2 <= _EXACT_LIMIT:
        p = _mwu_exact_p(n1, n2, min(u_x, u_y))
    elif not has_ties and min(n1, n2) <= 2:
        p = _mwu_small_side_exact_p(n1, n2, min(u_x, u_y))
    else:
        p = _mwu_approx_p(u_x, n1, n2, pooled)
    return u_x, p


def _mwu_small_side_exact_p(n1: int, n2: int, u_min: float) -> float:
    """Exact two-sided p when the smaller sample has 1 or 2 observations.

    The normal approximation is poor for these shapes at any size, but the
    null distribution of U has a trivial closed form.
    """
    small = min(n1, n2)
    n = n1 + n2
    t = int(u_min)  # no ties, so U is integral
    if small == 1:
        count_leq = t + 1  # U uniform over the n rank positions
        total = n
    else:
        # Ranks r1 < r2 of the small sample give U = r1 + r2 - 3.
        count_leq = 0
        for r1 in range(1, n + 1):
            r2_max = min(n, t + 3 - r1)
            if r2_max > r1:
                count_leq += r2_max - r1
        total = n * (n - 1) // 2
    # Symmetry of U about n1*n2/2: the upper tail mirrors the lower one.
    return min(1.0, 2 * count_leq / total)


def _srswor_sum_moments(values: np.ndarray, m: int) -> tuple[float, float]:
    """Exact 2nd and 4th central moments of a without-replacement sample sum.

    ``values`` is the population (here: pooled midranks); ``m`` the sample
    size. Computed from population power sums, so ties need no separate
    correction.
    """
    big_n = len(values)
    c = values - values.mean()
    s2 = float((c**2).sum())
    s4 = float((c**4).sum())
    p1 = m / big_n
    p2 = p1 * (m - 1) / (big_n - 1)
    p3 = p2 * (m - 2) / (big_n - 2) if big_n > 2 else 0.0
    p4 = p3 * (m - 3) / (big_n - 3) if big_n > 3 else 0.0
    mu2 = s2 * (p1 - p2)
    mu4 = p1 * s4 + p2 * (3 * s2**2 - 7 * s4) + p3 * (12 * s4 - 6 * s2**2) + p4 * (3 * s2**2 - 6 * s4)
    return mu2, mu4


def _edgeworth_two_sided(stat_min: float, mean: float, mu2: float, mu4: float) -> float:
    """Two-sided p for a symmetric statistic: doubled lower tail at stat_min,
    via a normal CDF with continuity correction and kurtosis refinement."""
    if mu2 <= 0:
        return 1.0
    gamma2 = mu4 / (mu2 * mu2) - 3.0
    z = (stat_min + 0.5 - mean) / math.sqrt(mu2)
    tail = float(norm.cdf(z) - norm.pdf(z) * (z**3 - 3.0 * z) * gamma2 / 24.0)
    return min(1.0, max(0.0, 2.0 * tail))


def _mwu_approx_p(u_x: float, n1: int, n2: int, pooled: np.ndarray) -> float:
    ranks = _midranks(pooled)
    mu2, mu4 = _srswor_sum_moments(ranks, n1)
    u_min = min(u_x, n1 * n2 - u_x)
    return _edgeworth_two_sided(u_min, n1 * n2 / 2.0, mu2, mu4)


def _mwu_exact_p(n1: int, n2: int, u_min: float) -> float:
    """Share of labelings at least as extreme as the observed U."""
    n = n1 + n2
    u_max = n1 * n2 - u_min
    extreme = 0
    total = 0
    positions = range(n)
    for x_pos in combinations(positions, n1):
        x_set = set(x_pos)
        u = sum(1 for i in x_pos for j in positions if j not in x_set and j < i)
        total += 1
        if u <= u_min or u >= u_max:
            extreme += 1
    return extreme / total


def wilcoxon_signed_rank(diffs: Sequence[float]) -> tuple[float, float]:
    """Wilcoxon signed-rank W = min(W+, W-) and two-sided p.

    Zero differences are dropped (classical Wilcoxon zero handling). Exact
    by sign enumeration when at most 12 nonzero differences with untied
    absolute ranks; otherwise tie-corrected normal approximation with
    continuity correction.
    """
    d = np.asarray(diffs, dtype=np.float64)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise StatsError("all differences are zero; the test is undefined")
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    total = n * (n + 1) / 2.0
    w_minus = total - w_plus
    w = min(w_plus, w_minus)
    has_rank_ties = len(np.unique(np.abs(d))) < n
    if n <= _EXACT_LIMIT and not has_rank_ties:
        p = _wilcoxon_exact_p(ranks, w)
    else:
        p = _wilcoxon_approx_p(w_plus, np.abs(d))
    return w, p


def _wilcoxon_approx_p(w_plus: float, abs_diffs: np.ndarray) -> float:
    """Normal approximation with continuity correction and kurtosis term.

    W+ is a sum of independently signed midranks, so its exact cumulants are
    sums over the midranks; the midrank variance already carries the
    classical tie correction.
    """
    ranks = _midranks(abs_diffs)
    total = float(ranks.sum())
    mu2 = float((ranks**2).sum()) / 4.0
    # kappa4 of a Bernoulli(1/2) scaled by r is -r**4 / 8.
    kappa4 = -float((ranks**4).sum()) / 8.0
    mu4 = kappa4 + 3.0 * mu2 * mu2
    w_min = min(w_plus, total - w_plus)
    return _edgeworth_two_sided(w_min, total / 2.0, mu2, mu4)


def _wilcoxon_exact_p(ranks: np.ndarray, w: float) -> float:
    """Share of the 2**n sign patterns at least as extreme as observed."""
    n = len(ranks)
    total_rank = ranks.sum()
    w_min = w
    w_max = total_rank - w
    extreme = 0
    for pattern in range(2**n):
        w_plus = 0.0
        for i in range(n):
            if pattern >> i & 1:
                w_plus += ranks[i]
        if w_plus <= w_min or w_plus >= w_max:
            extreme += 1
    return extreme / 2**n


def bonferroni(p_values: Sequence[float], alpha: float = 0.05) -> list[tuple[float, bool]]:
    """(adjusted p, significant) per input; significant iff p < alpha / k."""
    k = len(p_values)
    if k < 1:
        raise StatsError("bonferroni needs at least one p-value")
    return [(min(1.0, p * k), p < alpha / k) for p in p_values]


# --- group impact over the top pool ---------------------------------------

SHARE_METRICS = ("urm_share", "first_gen_share", "low_income_share", "admitted_share", "admitted_or_waitlisted_share")
TESTED_SHARES = ("urm_share", "first_gen_share", "low_income_share", "admitted_or_waitlisted_share")
PERCENTILE_METRIC = "mean_test_percentile"


@dataclass(frozen=True)
class MetricTest:
    metric: str
    p: Optional[float]
    adjusted_p: Optional[float] = None
    significant: Optional[bool] = None
    note: str = ""


@dataclass(frozen=True)
class PolicyImpact:
    policy: str
    n_top: int
    shares: Mapping[str, float]  # SHARE_METRICS plus race_share:<category>
    mean_test_percentile: Optional[float]
    tests: tuple[MetricTest, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class GroupImpactReport:
    baseline: str
    alpha: float
    target: str
    entries: tuple[PolicyImpact, ...]
    n_comparisons: int


def _top_ids(outcomes: Sequence) -> list[str]:
    top = []
    for o in outcomes:
        if isinstance(o, str):
            top.append(o)
        elif hasattr(o, "pool"):
            if o.pool == ranking.POOL_TOP:
                top.append(o.id)
        elif hasattr(o, "top"):
            if o.top:
                top.append(o.id)
        else:
            raise StatsError(f"cannot interpret outcome element {o!r}")
    return top


def _best_percentile(record: ApplicantRecord) -> Optional[float]:
    values = [p for p in (record.sat_percentile, record.act_percentile) if p is not None]
    return max(values) if values else None


def _pool_counts(ids: Sequence[str], by_id: Mapping[str, ApplicantRecord]) -> tuple[dict, Optional[float], list[float]]:
    members = [by_id[i] for i in ids]
    counts = {
        "urm_share": sum(r.urm_flag for r in members),
        "first_gen_share": sum(r.first_gen for r in members),
        "low_income_share": sum(r.fee_waiver for r in members),
        "admitted_share": sum(r.outcome == "admitted" for r in members),
        "admitted_or_waitlisted_share": sum(r.outcome in ("admitted", "waitlisted") for r in members),
    }
    for category in RACE_CATEGORIES:
        counts[f"race_share:{category}"] = sum(r.race_ethnicity == category for r in members)
    percentiles = [p for p in (_best_percentile(r) for r in members) if p is not None]
    mean_pct = float(np.mean(percentiles)) if percentiles else None
    return counts, mean_pct, percentiles


def _pool_metrics(ids: Sequence[str], by_id: Mapping[str, ApplicantRecord]) -> tuple[dict, Optional[float], list[float]]:
    counts, mean_pct, percentiles = _pool_counts(ids, by_id)
    n = len(ids)
    shares = {metric: count / n for metric, count in counts.items()}
    return shares, mean_pct, percentiles


def group_impact(
    outcomes_by_policy: Mapping[str, Sequence],
    records: Sequence[ApplicantRecord],
    baseline: str = "ml_baseline",
    alpha: float = 0.05,
    target: str = "admitted",
) -> GroupImpactReport:
    """Top-pool composition per policy with tests against the baseline.

    ``outcomes_by_policy`` maps policy name to rank outcomes (anything with
    ``.pool`` or ``.top``, or plain top-pool id lists). Every policy,
    including the baseline itself, is compared against the baseline; the
    Bonferroni family is all comparisons in this report.
    """
    if baseline not in outcomes_by_policy:
        raise StatsError(f"baseline policy {baseline!r} missing from outcomes")
    by_id = {r.id: r for r in records}
    top_by_policy = {}
    for policy, outcomes in outcomes_by_policy.items():
        top = _top_ids(outcomes)
        if not top:
            raise StatsError(f"policy {policy!r} has an empty top pool")
        missing = [i for i in top if i not in by_id]
        if missing:
            raise StatsError(f"policy {policy!r} top pool references unknown ids (e.g. {missing[0]!r})")
        top_by_policy[policy] = top

    base_shares, _, base_percentiles = _pool_metrics(top_by_policy[baseline], by_id)

    entries = []
    for policy, top in top_by_policy.items():
        counts, mean_pct, percentiles = _pool_counts(top, by_id)
        shares = {metric: count / len(top) for metric, count in counts.items()}
        tests: list[MetricTest] = []
        for metric in TESTED_SHARES:
            p0 = base_shares[metric]
            if not 0.0 < p0 < 1.0:
                tests.append(MetricTest(metric, None, note="degenerate_baseline_share"))
                continue
            tests.append(MetricTest(metric, binomial_test(counts[metric], len(top), p0)))
        if percentiles and base_percentiles:
            _, p = mann_whitney_u(percentiles, base_percentiles)
            tests.append(MetricTest(PERCENTILE_METRIC, p))
        else:
            tests.append(MetricTest(PERCENTILE_METRIC, None, note="no_submitters_in_top_pool"))
        entries.append(
            PolicyImpact(
                policy=policy,
                n_top=len(top),
                shares=shares,
                mean_test_percentile=mean_pct,
                tests=tuple(tests),
            )
        )

    # Bonferroni across every comparison in the report.
    flat = [(ei, ti) for ei, e in enumerate(entries) for ti, t in enumerate(e.tests) if t.p is not None]
    if flat:
        adjusted = bonferroni([entries[ei].tests[ti].p for ei, ti in flat], alpha=alpha)
        updated: dict[int, list[MetricTest]] = {ei: list(e.tests) for ei, e in enumerate(entries)}
        for (ei, ti), (adj_p, sig) in zip(flat, adjusted):
            updated[ei][ti] = replace(updated[ei][ti], adjusted_p=adj_p, significant=sig)
        entries = [replace(e, tests=tuple(updated[ei])) for ei, e in enumerate(entries)]
    return GroupImpactReport(
        baseline=baseline,
        alpha=alpha,
        target=target,
        entries=tuple(entries),
        n_comparisons=len(flat),
    )


# --- cutoff sweep -----------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    cutoff: int
    policy: str
    metric: str
    value: Optional[float]


def cutoff_sweep(
    scores_by_policy: Mapping[str, tuple[Sequence[str], Sequence[float]]],
    records: Sequence[ApplicantRecord],
    cutoffs: Sequence[int] = tuple(range(1, 11)),
) -> list[SweepRow]:
    """Top-pool composition for every cutoff in 1..10 (no tests).

    At cutoff 1 the top pool is the whole cohort, so shares equal the
    cohort-wide values exactly.
    """
    by_id = {r.id: r for r in records}
    rows: list[SweepRow] = []
    for cutoff in cutoffs:
        for policy, (ids, scores) in scores_by_policy.items():
            outcomes = ranking.assign_deciles(ids, scores, cutoff=cutoff)
            top = [o.id for o in outcomes if o.pool == ranking.POOL_TOP]
            shares, mean_pct, _ = _pool_metrics(top, by_id)
            for metric in SHARE_METRICS:
                rows.append(SweepRow(cutoff, policy, metric, shares[metric]))
            rows.append(SweepRow(cutoff, policy, PERCENTILE_METRIC, mean_pct))
    return rows


# --- alternate target variable ----------------------------------------------


def train_policy_models(
    train: Sequence[ApplicantRecord],
    test: Sequence[ApplicantRecord],
    policies: Sequence[PolicySpec],
    config: Optional[GbdtConfig] = None,
    schema: Optional[FeatureSchema] = None,
    cutoff: int = 9,
    target: str = "admitted",
    max_vocab: int = 512,
    seed: int = 0,
) -> dict[str, list[RankOutcome]]:
    """One full-train model per policy; returns decile outcomes on the test set."""
    config = config or GbdtConfig()
    schema = schema or features.default_schema()
    state = features.fit_preprocessor(train, schema, max_vocab=max_vocab)
    labels = target_labels(train, target)
    test_ids = [r.id for r in test]
    outcomes_by_policy: dict[str, list[RankOutcome]] = {}
    for policy in policies:
        model_config = replace(config, seed=derive_seed(seed, "train", policy.name, target))
        train_matrix = features.transform(train, state, policy)
        test_matrix = features.transform(test, state, policy)
        model = gbdt.train(train_matrix, labels, model_config, target=target)
        scores = gbdt.predict_proba(model, test_matrix)
        outcomes_by_policy[policy.name] = ranking.assign_deciles(test_ids, scores, cutoff=cutoff)
    return outcomes_by_policy


def with_target(
    train: Sequence[ApplicantRecord],
    test: Sequence[ApplicantRecord],
    policies: Sequence[PolicySpec],
    target: str,
    config: Optional[GbdtConfig] = None,
    schema: Optional[FeatureSchema] = None,
    cutoff: int = 9,
    baseline: str = "ml_baseline",
    alpha: float = 0.05,
    max_vocab: int = 512,
    seed: int = 0,
) -> GroupImpactReport:
    """Rerun the group-impact pipeline under an alternate target definition."""
    outcomes = train_policy_models(
        train, test, policies, config=config, schema=schema, cutoff=cutoff,
        target=target, max_vocab=max_vocab, seed=seed,
    )
    return group_impact(outcomes, list(train) + list(test), baseline=baseline, alpha=alpha, target=target)
