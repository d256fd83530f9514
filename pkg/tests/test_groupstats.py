import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from numpy.testing import assert_allclose
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binom

from admitaudit import groupstats
from admitaudit.groupstats import (
    StatsError,
    binomial_test,
    bonferroni,
    cutoff_sweep,
    group_impact,
    mann_whitney_u,
    wilcoxon_signed_rank,
    with_target,
    _mwu_approx_p,
    _wilcoxon_approx_p,
)
from admitaudit.synthgen import target_labels
from helpers import make_record


# --- independent oracles ------------------------------------------------------


def oracle_binomial(k, n, p0):
    """Exact-rational minlike two-sided binomial p."""
    p = Fraction(p0)
    q = 1 - p
    pmf = [Fraction(math.comb(n, i)) * p**i * q ** (n - i) for i in range(n + 1)]
    slack = Fraction(1) + Fraction(1, 10**12)
    return float(sum(value for value in pmf if value <= pmf[k] * slack))


def oracle_mwu_p(x, y):
    """Brute-force two-sided p over all labelings of the pooled sample."""
    pooled = sorted(x) + sorted(y)
    n1 = len(x)

    def u_of(sample_x, sample_y):
        return sum(1.0 * (a > b) + 0.5 * (a == b) for a in sample_x for b in sample_y)

    observed = u_of(x, y)
    u_min = min(observed, len(x) * len(y) - observed)
    u_max = len(x) * len(y) - u_min
    extreme = total = 0
    for positions in itertools.combinations(range(len(pooled)), n1):
        chosen = set(positions)
        sample_x = [pooled[i] for i in sorted(chosen)]
        sample_y = [pooled[i] for i in range(len(pooled)) if i not in chosen]
        u = u_of(sample_x, sample_y)
        total += 1
        if u <= u_min or u >= u_max:
            extreme += 1
    return extreme / total


def oracle_wilcoxon_p(diffs):
    """Brute-force two-sided p over all sign patterns."""
    d = [v for v in diffs if v != 0]
    n = len(d)
    ranks = [sorted(abs(v) for v in d).index(abs(v)) + 1 for v in d]
    w_plus = sum(r for v, r in zip(d, ranks) if v > 0)
    total_rank = n * (n + 1) / 2
    w_min = min(w_plus, total_rank - w_plus)
    w_max = total_rank - w_min
    extreme = 0
    for signs in itertools.product((1, -1), repeat=n):
        w = sum(r for s, r in zip(signs, ranks) if s > 0)
        if w <= w_min or w >= w_max:
            extreme += 1
    return extreme / 2**n


# --- binomial -----------------------------------------------------------------


class TestBinomial:
    def test_mode_observed_gives_one(self):
        assert binomial_test(5, 10, 0.5) == 1.0

    def test_tail_exact(self):
        assert binomial_test(0, 10, 0.5) == 2 / 1024
        assert binomial_test(0, 10, 0.5) == 0.001953125

    def test_asymmetric_tail_exact(self):
        assert binomial_test(8, 10, 0.5) == 112 / 1024
        assert binomial_test(8, 10, 0.5) == 0.109375

    def test_matches_rational_oracle_at_half(self):
        for n in range(1, 13):
            for k in range(n + 1):
                assert binomial_test(k, n, 0.5) == oracle_binomial(k, n, 0.5)

    @pytest.mark.parametrize("p0", [0.1, 0.25, 0.3, 0.6, 0.73, 0.9])
    def test_matches_rational_oracle_general(self, p0):
        for n in range(1, 13):
            for k in range(n + 1):
                assert binomial_test(k, n, p0) == pytest.approx(
                    oracle_binomial(k, n, p0), abs=1e-13
                )

    @pytest.mark.parametrize(
        "k,n,p0",
        [(-1, 10, 0.5), (11, 10, 0.5), (5, 10, 0.0), (5, 10, 1.0)],
    )
    def test_invalid_inputs(self, k, n, p0):
        with pytest.raises(StatsError):
            binomial_test(k, n, p0)

    @settings(max_examples=80, deadline=None)
    @given(
        n=st.integers(min_value=1, max_value=60),
        k_frac=st.floats(min_value=0, max_value=1),
        p0=st.floats(min_value=0.01, max_value=0.99),
    )
    def test_symmetry_and_sidedness(self, n, k_frac, p0):
        k = round(k_frac * n)
        two_sided = binomial_test(k, n, p0)
        mirrored = binomial_test(n - k, n, 1.0 - p0)
        assert two_sided == pytest.approx(mirrored, abs=1e-12)
        one_sided = min(float(binom.cdf(k, n, p0)), float(binom.sf(k - 1, n, p0)))
        assert two_sided >= one_sided - 1e-12


# --- Mann-Whitney U -----------------------------------------------------------


class TestMannWhitney:
    def test_fully_separated(self):
        u, p = mann_whitney_u([1, 2, 3], [4, 5, 6])
        assert u == 0.0
        assert p == 2 / 20 == 0.1

    def test_identical_multisets(self):
        u, p = mann_whitney_u([1.0, 2.0, 2.0, 5.0], [2.0, 1.0, 5.0, 2.0])
        assert u == 8.0  # |x||y|/2
        assert p == 1.0

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(21)
        for n1 in (2, 3, 4, 5):
            for n2 in (2, 3, 4):
                if n1 + n2 > 12:
                    continue
                for _ in range(3):
                    pooled = rng.permutation(np.arange(1.0, n1 + n2 + 1))
                    x, y = pooled[:n1].tolist(), pooled[n1:].tolist()
                    _, p = mann_whitney_u(x, y)
                    assert p == oracle_mwu_p(x, y)

    def test_crossover_approximation_close_to_exact(self):
        rng = np.random.default_rng(8)
        worst = 0.0
        for _ in range(25):
            pooled = rng.permutation(np.arange(1.0, 13.0))
            x, y = pooled[:6].tolist(), pooled[6:].tolist()
            _, exact = mann_whitney_u(x, y)
            u_x = sum(1.0 * (a > b) + 0.5 * (a == b) for a in x for b in y)
            approx = _mwu_approx_p(u_x, 6, 6, np.array(x + y))
            worst = max(worst, abs(exact - approx))
        assert worst <= 0.01

    @pytest.mark.parametrize("n1,n2", [(1, 20), (2, 15), (16, 2)])
    def test_tiny_side_stays_exact_beyond_twelve(self, n1, n2):
        # These shapes are far from normal at any size, so the closed-form
        # count must match brute-force enumeration.
        rng = np.random.default_rng(14)
        for _ in range(4):
            pooled = rng.permutation(np.arange(1.0, n1 + n2 + 1))
            x, y = pooled[:n1].tolist(), pooled[n1:].tolist()
            _, p = mann_whitney_u(x, y)
            assert p == oracle_mwu_p(x, y)

    def test_empty_sample_rejected(self):
        with pytest.raises(StatsError):
            mann_whitney_u([], [1.0])


# --- Wilcoxon signed-rank -----------------------------------------------------


class TestWilcoxon:
    def test_all_positive(self):
        w, p = wilcoxon_signed_rank([1.0, 2.0, 3.0])
        assert w == 0.0
        assert p == 2 / 8 == 0.25

    def test_sign_symmetry(self):
        _, p_pos = wilcoxon_signed_rank([1.0, 2.0, 3.0])
        _, p_neg = wilcoxon_signed_rank([-1.0, -2.0, -3.0])
        assert p_pos == p_neg

    def test_midrank_tie_takes_approximation_path(self):
        w, p = wilcoxon_signed_rank([1.0, -1.0])
        assert w == 1.5
        assert p == 1.0

    def test_zeros_dropped(self):
        w_with, p_with = wilcoxon_signed_rank([0.0, 1.0, 2.0, 3.0, 0.0])
        w_without, p_without = wilcoxon_signed_rank([1.0, 2.0, 3.0])
        assert (w_with, p_with) == (w_without, p_without)

    def test_all_zero_rejected(self):
        with pytest.raises(StatsError, match="zero"):
            wilcoxon_signed_rank([0.0, 0.0])

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(31)
        for n in (3, 5, 8, 10):
            for _ in range(4):
                magnitudes = rng.permutation(np.arange(1.0, n + 1))
                signs = rng.choice([-1.0, 1.0], size=n)
                diffs = (magnitudes * signs).tolist()
                _, p = wilcoxon_signed_rank(diffs)
                assert p == oracle_wilcoxon_p(diffs)

    def test_crossover_approximation_close_to_exact(self):
        rng = np.random.default_rng(9)
        worst = 0.0
        for _ in range(25):
            magnitudes = rng.permutation(np.arange(1.0, 13.0))
            signs = rng.choice([-1.0, 1.0], size=12)
            diffs = magnitudes * signs
            _, exact = wilcoxon_signed_rank(diffs)
            ranks = groupstats._midranks(np.abs(diffs))
            w_plus = float(ranks[diffs > 0].sum())
            approx = _wilcoxon_approx_p(w_plus, np.abs(diffs))
            worst = max(worst, abs(exact - approx))
        assert worst <= 0.01


# --- Bonferroni ----------------------------------------------------------------


class TestBonferroni:
    def test_four_way_family(self):
        flags = bonferroni([0.01, 0.04], alpha=0.05)
        # With k=2 here; spec case is k=4 below.
        assert flags[0] == (0.02, True)
        flags4 = bonferroni([0.01, 0.04, 0.2, 0.9], alpha=0.05)
        assert flags4[0] == (0.04, True)  # 0.01 < 0.0125
        assert flags4[1] == (0.16, False)  # 0.04 >= 0.0125

    def test_single_comparison_unadjusted(self):
        assert bonferroni([0.04]) == [(0.04, True)]

    def test_first_gen_style_case(self):
        # A p = 0.04 comparison inside a four-test family is not significant.
        _, significant = bonferroni([0.04, 0.001, 0.001, 0.001])[0]
        assert not significant

    def test_empty_rejected(self):
        with pytest.raises(StatsError):
            bonferroni([])


# --- group impact ---------------------------------------------------------------


def _toy_records():
    records = []
    for i in range(40):
        records.append(
            make_record(
                id=f"t-{i:04d}",
                cohort="test",
                urm_flag=i % 4 == 0,
                race_ethnicity="Hispanic" if i % 4 == 0 else "White",
                first_gen=i % 5 == 0,
                fee_waiver=i % 5 == 1,
                outcome="admitted" if i < 8 else ("waitlisted" if i < 16 else "rejected"),
                sat_percentile=float(50 + i) if i % 3 else None,
            )
        )
    return records


class TestGroupImpact:
    def test_baseline_self_comparison_in_p_one_region(self):
        records = _toy_records()
        tops = {"ml_baseline": [r.id for r in records[:10]]}
        report = group_impact(tops, records)
        tests = {t.metric: t for t in report.entries[0].tests}
        for metric in groupstats.TESTED_SHARES:
            if tests[metric].p is not None:
                assert tests[metric].p == 1.0

    def test_planted_urm_drop_flagged(self):
        records = _toy_records()
        urm_ids = [r.id for r in records if r.urm_flag]
        non_urm_ids = [r.id for r in records if not r.urm_flag]
        tops = {
            "ml_baseline": urm_ids + non_urm_ids[:2],
            "no_race": non_urm_ids[:12],
        }
        report = group_impact(tops, records)
        by_policy = {e.policy: e for e in report.entries}
        assert by_policy["no_race"].shares["urm_share"] < by_policy["ml_baseline"].shares["urm_share"]
        urm_test = next(t for t in by_policy["no_race"].tests if t.metric == "urm_share")
        assert urm_test.p < 0.001
        assert urm_test.significant

    def test_race_breakdown_sums_to_one(self):
        records = _toy_records()
        report = group_impact({"ml_baseline": [r.id for r in records[:16]]}, records)
        total = sum(
            v for k, v in report.entries[0].shares.items() if k.startswith("race_share:")
        )
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_empty_top_pool_rejected(self):
        records = _toy_records()
        with pytest.raises(StatsError, match="empty top pool"):
            group_impact({"ml_baseline": []}, records)

    def test_missing_baseline_rejected(self):
        records = _toy_records()
        with pytest.raises(StatsError, match="baseline"):
            group_impact({"no_race": [records[0].id]}, records, baseline="ml_baseline")

    def test_no_submitters_reported_absent(self):
        records = [
            make_record(
                id=f"n-{i}", sat_percentile=None, act_percentile=None, cohort="test"
            )
            for i in range(10)
        ]
        report = group_impact({"ml_baseline": [r.id for r in records[:4]]}, records)
        entry = report.entries[0]
        assert entry.mean_test_percentile is None
        pct_test = next(t for t in entry.tests if t.metric == "mean_test_percentile")
        assert pct_test.p is None
        assert pct_test.note == "no_submitters_in_top_pool"

    def test_percentile_uses_submitters_only(self):
        records = _toy_records()
        top = [r.id for r in records[:9]]
        report = group_impact({"ml_baseline": top}, records)
        by_id = {r.id: r for r in records}
        expected = np.mean(
            [
                max(v for v in (by_id[i].sat_percentile, by_id[i].act_percentile) if v is not None)
                for i in top
                if by_id[i].sat_percentile is not None or by_id[i].act_percentile is not None
            ]
        )
        assert report.entries[0].mean_test_percentile == pytest.approx(expected)


class TestCutoffSweep:
    def test_cutoff_one_equals_cohort_shares(self):
        records = _toy_records()
        ids = [r.id for r in records]
        scores = np.linspace(0, 1, len(ids))
        rows = cutoff_sweep({"ml_baseline": (ids, scores)}, records, cutoffs=[1])
        cohort_urm = sum(r.urm_flag for r in records) / len(records)
        urm_row = next(r for r in rows if r.metric == "urm_share")
        assert abs(urm_row.value - cohort_urm) <= 1e-12

    def test_cutoff_ten_is_best_decile_only(self):
        records = _toy_records()
        ids = [r.id for r in records]
        scores = np.arange(len(ids), dtype=float)
        rows = cutoff_sweep({"ml_baseline": (ids, scores)}, records, cutoffs=[10])
        # Best decile of 40 = 4 applicants with the highest scores (last ids).
        top_ids = [r.id for r in records[-4:]]
        by_id = {r.id: r for r in records}
        expected_urm = sum(by_id[i].urm_flag for i in top_ids) / 4
        urm_row = next(r for r in rows if r.metric == "urm_share")
        assert urm_row.value == expected_urm

    def test_full_sweep_covers_all_cutoffs(self):
        records = _toy_records()
        ids = [r.id for r in records]
        scores = np.arange(len(ids), dtype=float)
        rows = cutoff_sweep({"ml_baseline": (ids, scores)}, records)
        assert sorted({r.cutoff for r in rows}) == list(range(1, 11))


class TestWithTarget:
    def test_alternate_target_positive_rate(self, small_split):
        train, _ = small_split
        labels = target_labels(train, "admitted_or_waitlisted")
        admit = sum(r.outcome == "admitted" for r in train)
        wait = sum(r.outcome == "waitlisted" for r in train)
        assert labels.sum() == admit + wait

    def test_unknown_target_rejected(self, small_split):
        train, _ = small_split
        with pytest.raises(ValueError, match="target"):
            target_labels(train, "deferred")

    def test_targets_produce_different_models_same_direction(self, small_split):
        from admitaudit.features import builtin_policies
        from admitaudit.gbdt import GbdtConfig

        train, test = small_split
        policies = [p for p in builtin_policies() if p.name in ("ml_baseline", "no_race")]
        config = GbdtConfig(n_trees=10)
        reports = {}
        scores = {}
        for target in ("admitted", "admitted_or_waitlisted"):
            outcomes = groupstats.train_policy_models(
                train, test, policies, config=config, target=target, max_vocab=24
            )
            scores[target] = [o.score for o in outcomes["ml_baseline"]]
            reports[target] = group_impact(outcomes, test, target=target)
        assert scores["admitted"] != scores["admitted_or_waitlisted"]
        assert reports["admitted"].target == "admitted"
        assert reports["admitted_or_waitlisted"].target == "admitted_or_waitlisted"
