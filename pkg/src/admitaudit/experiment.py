"""Config-driven experiment pipeline and its CSV/JSON artifacts.

One JSON config drives: generate -> train -> audit -> report -> sweep. Every
randomized step's seed is derived from the single master seed, so rerunning
a config reproduces byte-identical CSV artifacts regardless of worker count.

Artifacts written to the output directory:

  applicants.csv   synthetic cohort (train + test)
  rankings.csv     per-policy single-model scores, deciles, pools
  outcomes_*.csv   per-set boolean top-pool membership, one column per model
  consistency.csv  per-applicant self-consistency and classification per set
  arbitrariness.csv  within/across comparisons and per-group ratios
  group_impact.csv top-pool composition, tests, bootstrap CIs
  sweep.csv        top-pool composition across cutoffs 10..1
  manifest.json    config hash, seeds, artifact hashes, wall time
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import __version__, audit, features, groupstats, ranking, synthgen
from .audit import BootstrapSpec, EnsembleOutcomes
from .features import FeatureSchema, PolicySpec
from .gbdt import GbdtConfig
from .ranking import RankOutcome
from .seeds import derive_seed
from .synthgen import ApplicantRecord, CohortSpec

NAIVE_POLICY = "naive_baseline"

ARTIFACT_APPLICANTS = "applicants.csv"
ARTIFACT_RANKINGS = "rankings.csv"
ARTIFACT_CONSISTENCY = "consistency.csv"
ARTIFACT_CONSISTENCY_SUMMARY = "consistency_summary.csv"
ARTIFACT_ARBITRARINESS = "arbitrariness.csv"
ARTIFACT_GROUP_IMPACT = "group_impact.csv"
ARTIFACT_SWEEP = "sweep.csv"
ARTIFACT_MANIFEST = "manifest.json"


class ConfigError(ValueError):
    pass


class MissingArtifactError(FileNotFoundError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 0
    out_dir: str = "artifacts"
    cohort: CohortSpec = field(default_factory=lambda: synthgen.demo_spec())
    schema_path: Optional[str] = None
    policies: tuple[PolicySpec, ...] = ()
    gbdt: GbdtConfig = field(default_factory=lambda: GbdtConfig(n_trees=50))
    m: int = 50
    k_across: Optional[int] = None
    cutoff: int = 9
    tau: float = 0.95
    target: str = "admitted"
    max_vocab: int = 64
    threads: int = 1
    include_naive: bool = True
    baseline: str = "ml_baseline"

    def validate(self) -> None:
        self.cohort.validate()
        self.gbdt.validate()
        if not self.policies:
            raise ConfigError("at least one policy is required")
        names = [p.name for p in self.policies]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate policy names: {names}")
        if self.baseline not in names:
            raise ConfigError(f"baseline policy {self.baseline!r} not in policies {names}")
        if self.m < 2:
            raise ConfigError(f"m must be >= 2, got {self.m}")
        if not 1 <= self.cutoff <= 10:
            raise ConfigError(f"cutoff must be in 1..10, got {self.cutoff}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must be in (0, 1], got {self.tau}")
        if self.target not in ("admitted", "admitted_or_waitlisted"):
            raise ConfigError(f"unknown target {self.target!r}")
        if self.k_across is not None and not 1 <= self.k_across <= self.m:
            raise ConfigError(f"k_across must be in 1..m, got {self.k_across}")

    @property
    def across_k(self) -> int:
        return self.k_across if self.k_across is not None else min(500, self.m // 2)

    def schema(self) -> FeatureSchema:
        if self.schema_path is None:
            return features.default_schema()
        with open(self.schema_path, encoding="utf-8") as fh:
            return FeatureSchema.from_json(fh.read())

    def path(self, artifact: str) -> str:
        return os.path.join(self.out_dir, artifact)

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "out_dir": self.out_dir,
            "cohort": dataclasses.asdict(self.cohort),
            "schema_path": self.schema_path,
            "policies": [
                {"name": p.name, "excluded_groups": sorted(p.excluded_groups)}
                for p in self.policies
            ],
            "gbdt": dataclasses.asdict(self.gbdt),
            "m": self.m,
            "k_across": self.k_across,
            "cutoff": self.cutoff,
            "tau": self.tau,
            "target": self.target,
            "max_vocab": self.max_vocab,
            "threads": self.threads,
            "include_naive": self.include_naive,
            "baseline": self.baseline,
        }

    def config_hash(self) -> str:
        # threads and out_dir do not change results; keep them out of the hash.
        payload = self.to_dict()
        payload.pop("threads")
        payload.pop("out_dir")
        canonical = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()


def resolve_policies(raw: Sequence) -> tuple[PolicySpec, ...]:
    """Accept builtin policy names or {"name", "excluded_groups"} objects."""
    builtin = {p.name: p for p in features.builtin_policies()}
    resolved = []
    for entry in raw:
        if isinstance(entry, str):
            if entry not in builtin:
                raise ConfigError(
                    f"unknown policy {entry!r}; builtin policies: {sorted(builtin)}"
                )
            resolved.append(builtin[entry])
        elif isinstance(entry, Mapping):
            resolved.append(
                PolicySpec(entry["name"], frozenset(entry.get("excluded_groups", ())))
            )
        else:
            raise ConfigError(f"cannot interpret policy entry {entry!r}")
    return tuple(resolved)


def load_config(path: str, **overrides) -> ExperimentConfig:
    """Load a JSON config; keyword overrides win over file values."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return config_from_dict(raw, **overrides)


def config_from_dict(raw: Mapping, **overrides) -> ExperimentConfig:
    data = dict(raw)
    data.update({k: v for k, v in overrides.items() if v is not None})
    cohort_raw = dict(data.get("cohort", {}))
    master_seed = int(data.get("master_seed", 0))
    if "seed" not in cohort_raw:
        cohort_raw["seed"] = derive_seed(master_seed, "cohort")
    try:
        cohort = CohortSpec(**cohort_raw)
    except TypeError as err:
        raise ConfigError(f"bad cohort block: {err}") from None
    gbdt_raw = data.get("gbdt", {"n_trees": 50})
    try:
        gbdt_config = GbdtConfig(**gbdt_raw)
    except TypeError as err:
        raise ConfigError(f"bad gbdt block: {err}") from None
    policies = resolve_policies(data.get("policies", ["ml_baseline", "no_race"]))
    config = ExperimentConfig(
        master_seed=master_seed,
        out_dir=str(data.get("out_dir", "artifacts")),
        cohort=cohort,
        schema_path=data.get("schema_path"),
        policies=policies,
        gbdt=gbdt_config,
        m=int(data.get("m", 50)),
        k_across=data.get("k_across"),
        cutoff=int(data.get("cutoff", 9)),
        tau=float(data.get("tau", 0.95)),
        target=str(data.get("target", "admitted")),
        max_vocab=int(data.get("max_vocab", 64)),
        threads=int(data.get("threads", 1)),
        include_naive=bool(data.get("include_naive", True)),
        baseline=str(data.get("baseline", "ml_baseline")),
    )
    config.validate()
    return config


def demo_config(out_dir: str, master_seed: int = 0, threads: int = 1) -> ExperimentConfig:
    """The desk-scale demo: 2,000/1,000 applicants, m=50, two policies."""
    return config_from_dict(
        {
            "master_seed": master_seed,
            "out_dir": out_dir,
            "cohort": {"n_train": 2000, "n_test": 1000},
            "policies": ["ml_baseline", "no_race"],
            "gbdt": {"n_trees": 50},
            "m": 50,
            "max_vocab": 64,
            "threads": threads,
        }
    )


def full_scale_config(out_dir: str, master_seed: int = 0, threads: int = 1) -> ExperimentConfig:
    """Production-scale cohort sizes and ensemble size (hours, not minutes)."""
    return config_from_dict(
        {
            "master_seed": master_seed,
            "out_dir": out_dir,
            "cohort": {"n_train": 44293, "n_test": 15540},
            "policies": ["ml_baseline", "no_race", "no_major", "no_uncontrollable"],
            "gbdt": {"n_trees": 100},
            "m": 1000,
            "max_vocab": 512,
            "threads": threads,
        }
    )


def _require(path: str, hint: str) -> str:
    if not os.path.exists(path):
        raise MissingArtifactError(f"missing artifact {path!r}; run {hint} first")
    return path


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


# --- stages -------------------------------------------------------------------


def stage_generate(config: ExperimentConfig) -> list[ApplicantRecord]:
    os.makedirs(config.out_dir, exist_ok=True)
    records = synthgen.generate_cohort(config.cohort)
    synthgen.write_cohort(records, config.path(ARTIFACT_APPLICANTS))
    return records


def load_applicants(config: ExperimentConfig) -> tuple[list[ApplicantRecord], list[ApplicantRecord]]:
    path = _require(config.path(ARTIFACT_APPLICANTS), "'generate'")
    return synthgen.split_cohort(synthgen.read_cohort(path))


def stage_train(config: ExperimentConfig) -> dict[str, list[RankOutcome]]:
    train, test = load_applicants(config)
    outcomes = groupstats.train_policy_models(
        train,
        test,
        config.policies,
        config=config.gbdt,
        schema=config.schema(),
        cutoff=config.cutoff,
        target=config.target,
        max_vocab=config.max_vocab,
        seed=config.master_seed,
    )
    write_rankings_csv(outcomes, config.path(ARTIFACT_RANKINGS))
    return outcomes


def write_rankings_csv(outcomes_by_policy: Mapping[str, Sequence[RankOutcome]], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["policy", "id", "score", "decile", "pool", "rank"])
        for policy, outcomes in outcomes_by_policy.items():
            for o in sorted(outcomes, key=lambda o: o.rank):
                writer.writerow([policy, o.id, repr(o.score), o.decile, o.pool, o.rank])


def read_rankings_csv(path: str) -> dict[str, list[RankOutcome]]:
    out: dict[str, list[RankOutcome]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["policy"], []).append(
                RankOutcome(
                    id=row["id"],
                    score=float(row["score"]),
                    decile=int(row["decile"]),
                    pool=row["pool"],
                    rank=int(row["rank"]),
                )
            )
    return out


def _outcomes_filename(set_name: str) -> str:
    safe = set_name.replace("(", "_").replace(")", "").replace(",", "__")
    return f"outcomes_{safe}.csv"


def stage_audit(config: ExperimentConfig) -> tuple[list[audit.ConsistencyReport], list[tuple]]:
    """Build ensembles, classify consistency, compare policies.

    Returns the consistency reports and the arbitrariness rows written out.
    """
    train, test = load_applicants(config)
    schema = config.schema()
    store = features.columnize(train + test, schema)
    spec = BootstrapSpec(m=config.m, master_seed=config.master_seed)
    within: dict[str, EnsembleOutcomes] = {}
    for policy in config.policies:
        within[policy.name] = audit.build_within_set(
            train,
            test,
            policy,
            spec,
            config=config.gbdt,
            schema=schema,
            cutoff=config.cutoff,
            target=config.target,
            max_vocab=config.max_vocab,
            n_workers=config.threads,
            store=store,
        )
        audit.write_outcomes_csv(
            within[policy.name], config.path(_outcomes_filename(policy.name))
        )

    across: dict[tuple[str, str], EnsembleOutcomes] = {}
    for policy in config.policies:
        if policy.name == config.baseline:
            continue
        pair = (config.baseline, policy.name)
        across[pair] = audit.build_across_set(
            within[pair[0]],
            within[pair[1]],
            k=config.across_k,
            seed=derive_seed(config.master_seed, "across", pair[0], pair[1]),
        )
        audit.write_outcomes_csv(across[pair], config.path(_outcomes_filename(across[pair].name)))

    reports = [audit.classify_consistency(w, tau=config.tau) for w in within.values()]
    reports += [audit.classify_consistency(x, tau=config.tau) for x in across.values()]
    audit.write_consistency_csv(reports, config.path(ARTIFACT_CONSISTENCY))

    race_by_id = {r.id: r.race_ethnicity for r in test}
    rows: list[tuple] = []
    for (a, b), across_set in across.items():
        comparison = audit.compare_policies(within[a], within[b], across_set)
        rows.append(
            (f"across({a},{b})_vs_within_{a}", "all", comparison.mean_sc_within_a,
             comparison.mean_sc_across, comparison.ar_across_vs_a, comparison.p_across_vs_a)
        )
        rows.append(
            (f"across({a},{b})_vs_within_{b}", "all", comparison.mean_sc_within_b,
             comparison.mean_sc_across, comparison.ar_across_vs_b, comparison.p_across_vs_b)
        )
        rows.append(
            (f"within_{b}_vs_within_{a}", "all", comparison.mean_sc_within_a,
             comparison.mean_sc_within_b, comparison.ar_b_vs_a, comparison.p_b_vs_a)
        )
        for g in audit.group_arbitrariness(within[a], within[b], race_by_id):
            rows.append((f"within_{b}_vs_within_{a}", g.group, g.mean_sc_a, g.mean_sc_b, g.ar, g.p))
    write_arbitrariness_csv(rows, config.path(ARTIFACT_ARBITRARINESS))
    return reports, rows


def write_arbitrariness_csv(rows: Sequence[tuple], path: str, alpha: float = 0.05) -> None:
    """Rows are (comparison, group, mean_sc_ref, mean_sc_cmp, ar, p)."""
    tested = [i for i, row in enumerate(rows) if row[5] is not None]
    flags: dict[int, tuple[float, bool]] = {}
    if tested:
        adjusted = groupstats.bonferroni([rows[i][5] for i in tested], alpha=alpha)
        flags = dict(zip(tested, adjusted))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["comparison", "group", "mean_sc_ref", "mean_sc_cmp", "ar", "p", "significant"]
        )
        for i, (comparison, group, ref, cmp_, ar, p) in enumerate(rows):
            significant = flags[i][1] if i in flags else None
            writer.writerow(
                [comparison, group, _fmt(ref), _fmt(cmp_), _fmt(ar), _fmt(p), _fmt(significant)]
            )


def _ensemble_share_ci(
    outcomes: EnsembleOutcomes, records_by_id: Mapping[str, ApplicantRecord]
) -> dict[str, tuple[float, float]]:
    """2.5/97.5 percentile bands of each metric across ensemble members."""
    flags = {
        "urm_share": np.array([records_by_id[i].urm_flag for i in outcomes.ids], dtype=float),
        "first_gen_share": np.array([records_by_id[i].first_gen for i in outcomes.ids], dtype=float),
        "low_income_share": np.array([records_by_id[i].fee_waiver for i in outcomes.ids], dtype=float),
        "admitted_share": np.array(
            [records_by_id[i].outcome == "admitted" for i in outcomes.ids], dtype=float
        ),
        "admitted_or_waitlisted_share": np.array(
            [records_by_id[i].outcome in ("admitted", "waitlisted") for i in outcomes.ids],
            dtype=float,
        ),
    }
    for category in synthgen.RACE_CATEGORIES:
        flags[f"race_share:{category}"] = np.array(
            [records_by_id[i].race_ethnicity == category for i in outcomes.ids], dtype=float
        )
    member = outcomes.outcomes.astype(float)  # (n, M)
    sizes = member.sum(axis=0)
    out: dict[str, tuple[float, float]] = {}
    for metric, flag in flags.items():
        shares = flag @ member / sizes
        lo, hi = np.percentile(shares, [2.5, 97.5])
        out[metric] = (float(lo), float(hi))
    pct = np.array(
        [
            p if (p := _best_pct(records_by_id[i])) is not None else 0.0
            for i in outcomes.ids
        ]
    )
    submitted = np.array([_best_pct(records_by_id[i]) is not None for i in outcomes.ids], dtype=float)
    sub_counts = submitted @ member
    with np.errstate(invalid="ignore"):
        means = (pct * submitted) @ member / sub_counts
    means = means[np.isfinite(means)]
    if len(means):
        lo, hi = np.percentile(means, [2.5, 97.5])
        out["mean_test_percentile"] = (float(lo), float(hi))
    return out


def _best_pct(record: ApplicantRecord) -> Optional[float]:
    values = [p for p in (record.sat_percentile, record.act_percentile) if p is not None]
    return max(values) if values else None


def stage_report(config: ExperimentConfig) -> groupstats.GroupImpactReport:
    train, test = load_applicants(config)
    rankings = read_rankings_csv(_require(config.path(ARTIFACT_RANKINGS), "'train'"))
    outcomes_by_policy: dict[str, Sequence] = dict(rankings)
    if config.include_naive:
        outcomes_by_policy[NAIVE_POLICY] = ranking.naive_rank(test)
    report = groupstats.group_impact(
        outcomes_by_policy, test, baseline=config.baseline, target=config.target
    )
    records_by_id = {r.id: r for r in test}
    cis: dict[str, dict[str, tuple[float, float]]] = {}
    for policy in outcomes_by_policy:
        path = config.path(_outcomes_filename(policy))
        if os.path.exists(path):
            cis[policy] = _ensemble_share_ci(audit.read_outcomes_csv(path), records_by_id)
    write_group_impact_csv(report, config.path(ARTIFACT_GROUP_IMPACT), cis)
    consistency_path = config.path(ARTIFACT_CONSISTENCY)
    if os.path.exists(consistency_path):
        write_consistency_summary(consistency_path, config.path(ARTIFACT_CONSISTENCY_SUMMARY))
    return report


def write_consistency_summary(consistency_path: str, out_path: str) -> None:
    """Classification shares per set, recomputed from the raw per-applicant rows."""
    by_set = audit.read_consistency_csv(consistency_path)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["set_name", "class", "share"])
        for set_name in sorted(by_set):
            entries = by_set[set_name]
            for label in (audit.CLASS_TOP, audit.CLASS_NOT_TOP, audit.CLASS_ARBITRARY):
                share = sum(e.label == label for e in entries) / len(entries)
                writer.writerow([set_name, label, repr(share)])


def write_group_impact_csv(
    report: groupstats.GroupImpactReport,
    path: str,
    cis: Optional[Mapping[str, Mapping[str, tuple[float, float]]]] = None,
) -> None:
    cis = cis or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["policy", "metric", "value", "ci_lo", "ci_hi", "p", "adjusted_significant"])
        for entry in report.entries:
            tests = {t.metric: t for t in entry.tests}
            metrics: list[tuple[str, Optional[float]]] = [("n_top", float(entry.n_top))]
            metrics += [(m, entry.shares[m]) for m in groupstats.SHARE_METRICS]
            metrics += [
                (m, entry.shares[m])
                for m in sorted(entry.shares)
                if m.startswith("race_share:")
            ]
            metrics.append((groupstats.PERCENTILE_METRIC, entry.mean_test_percentile))
            for metric, value in metrics:
                test = tests.get(metric)
                ci = cis.get(entry.policy, {}).get(metric)
                writer.writerow(
                    [
                        entry.policy,
                        metric,
                        _fmt(value),
                        _fmt(ci[0]) if ci else "",
                        _fmt(ci[1]) if ci else "",
                        _fmt(test.p) if test else "",
                        _fmt(test.significant) if test else "",
                    ]
                )


def stage_sweep(config: ExperimentConfig) -> list[groupstats.SweepRow]:
    train, test = load_applicants(config)
    rankings = read_rankings_csv(_require(config.path(ARTIFACT_RANKINGS), "'train'"))
    scores_by_policy = {
        policy: ([o.id for o in outcomes], [o.score for o in outcomes])
        for policy, outcomes in rankings.items()
    }
    rows = groupstats.cutoff_sweep(scores_by_policy, test)
    with open(config.path(ARTIFACT_SWEEP), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cutoff", "policy", "metric", "value"])
        for row in rows:
            writer.writerow([row.cutoff, row.policy, row.metric, _fmt(row.value)])
    return rows


def write_manifest(config: ExperimentConfig, wall_time_s: float) -> dict:
    artifacts = {}
    for name in sorted(os.listdir(config.out_dir)):
        if name.endswith(".csv"):
            with open(config.path(name), "rb") as fh:
                artifacts[name] = hashlib.sha256(fh.read()).hexdigest()
    content = hashlib.sha256(
        "\n".join(f"{name}:{digest}" for name, digest in sorted(artifacts.items())).encode()
    ).hexdigest()
    manifest = {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "seeds": {
            "master": config.master_seed,
            "cohort": config.cohort.seed,
        },
        "versions": {"admitaudit": __version__},
        "artifacts": artifacts,
        "content_hash": content,
        "wall_time_s": wall_time_s,
    }
    with open(config.path(ARTIFACT_MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


STAGES = ("generate", "train", "audit", "report", "sweep")


def run(config: ExperimentConfig) -> dict:
    """Run the full pipeline; returns the manifest."""
    config.validate()
    start = time.monotonic()
    stage_generate(config)
    stage_train(config)
    stage_audit(config)
    stage_report(config)
    stage_sweep(config)
    return write_manifest(config, wall_time_s=time.monotonic() - start)
