"""Declarative feature schema and preprocessing pipeline.

Raw applicant fields are encoded into a numeric design matrix: one-hot
categoricals with RARE/MISSING levels (levels under 1% train frequency are
recoded RARE), median-imputed numerics with missing indicators, and TF-IDF
unigrams + bigrams for text fields. Policy ablations drop every column
derived from an excluded feature group.

All fitting statistics (level frequencies, medians, vocabulary, document
frequencies) come from training rows only. For ensemble work, records can
be columnized once into a :class:`ColumnStore` and then fit/transformed
repeatedly on row-index subsets, which keeps per-bootstrap refits cheap.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .synthgen import ApplicantRecord

KINDS = ("numeric", "categorical", "text", "boolean")
POLICY_GROUPS = ("race", "major", "uncontrollable")
ALL_TAGS = POLICY_GROUPS + ("controllable",)

RARE_LEVEL = "RARE"
MISSING_LEVEL = "MISSING"

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class SchemaError(ValueError):
    pass


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class SchemaField:
    name: str
    kind: str
    tags: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise SchemaError(f"field {self.name!r}: unknown kind {self.kind!r}")
        unknown = self.tags - set(ALL_TAGS)
        if unknown:
            raise SchemaError(f"field {self.name!r}: unknown tags {sorted(unknown)}")
        if "race" in self.tags and "uncontrollable" not in self.tags:
            raise SchemaError(f"field {self.name!r}: race-tagged fields must also be uncontrollable")
        if "controllable" in self.tags and "uncontrollable" in self.tags:
            raise SchemaError(f"field {self.name!r}: controllable and uncontrollable are mutually exclusive")


@dataclass(frozen=True)
class FeatureSchema:
    fields: tuple[SchemaField, ...]

    def __post_init__(self) -> None:
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate field names in schema")

    def field_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields)

    def to_json(self) -> str:
        payload = [
            {"field": f.name, "kind": f.kind, "tags": sorted(f.tags)} for f in self.fields
        ]
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FeatureSchema":
        payload = json.loads(text)
        return cls(
            tuple(
                SchemaField(entry["field"], entry["kind"], frozenset(entry.get("tags", ())))
                for entry in payload
            )
        )


@dataclass(frozen=True)
class PolicySpec:
    """A named ablation: the set of feature groups removed from the model."""

    name: str
    excluded_groups: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        unknown = self.excluded_groups - set(POLICY_GROUPS)
        if unknown:
            raise PolicyError(
                f"policy {self.name!r} references unknown group(s) {sorted(unknown)}; "
                f"known groups: {list(POLICY_GROUPS)}"
            )


def builtin_policies() -> list[PolicySpec]:
    """The four standard policies: full model plus three ablations.

    Group cardinalities on the synthetic schema (2 race fields, 1 major
    field, 8 uncontrollable fields) are smaller than a production raw-field
    inventory would give; the grouping logic is what carries over.
    """
    return [
        PolicySpec("ml_baseline", frozenset()),
        PolicySpec("no_race", frozenset({"race"})),
        PolicySpec("no_major", frozenset({"major"})),
        PolicySpec("no_uncontrollable", frozenset({"uncontrollable"})),
    ]


def default_schema() -> FeatureSchema:
    """Schema for the synthetic :class:`ApplicantRecord` fields."""
    u = frozenset({"uncontrollable"})
    ru = frozenset({"race", "uncontrollable"})
    c = frozenset({"controllable"})
    return FeatureSchema(
        (
            SchemaField("race_ethnicity", "categorical", ru),
            SchemaField("urm_flag", "boolean", ru),
            SchemaField("sex", "categorical", u),
            SchemaField("first_gen", "boolean", u),
            SchemaField("fee_waiver", "boolean", u),
            SchemaField("citizenship", "categorical", u),
            SchemaField("parental_education", "categorical", u),
            SchemaField("school_type", "categorical", u),
            SchemaField("highest_math", "numeric", c),
            SchemaField("gpa", "numeric", c),
            SchemaField("sat_percentile", "numeric", c),
            SchemaField("act_percentile", "numeric", c),
            SchemaField("intended_major", "categorical", frozenset({"major", "controllable"})),
            SchemaField("activity_text", "text", c),
            SchemaField("essay_text", "text", c),
        )
    )


def tokenize(text: str) -> list[str]:
    """Lowercased unigrams plus adjacent bigrams (joined with a space)."""
    words = _TOKEN_RE.findall(text.lower())
    return words + [f"{a} {b}" for a, b in zip(words, words[1:])]


@dataclass(frozen=True)
class TextColumn:
    """CSR-style per-document term counts over a store-global term table."""

    terms: tuple[str, ...]
    indptr: np.ndarray  # int64, len n_docs + 1
    term_ids: np.ndarray  # int32, unique term ids per doc
    counts: np.ndarray  # float64, raw counts aligned with term_ids


@dataclass(frozen=True)
class ColumnStore:
    """Records columnized once for repeated subset fitting/transforming."""

    schema: FeatureSchema
    ids: tuple[str, ...]
    numeric: Mapping[str, np.ndarray]
    boolean: Mapping[str, np.ndarray]
    cat_codes: Mapping[str, np.ndarray]
    cat_levels: Mapping[str, tuple[str, ...]]
    text: Mapping[str, TextColumn]

    @property
    def n_rows(self) -> int:
        return len(self.ids)


def columnize(records: Sequence[ApplicantRecord], schema: FeatureSchema) -> ColumnStore:
    if not records:
        raise ValueError("cannot columnize an empty record list")
    n = len(records)
    numeric: dict[str, np.ndarray] = {}
    boolean: dict[str, np.ndarray] = {}
    cat_codes: dict[str, np.ndarray] = {}
    cat_levels: dict[str, tuple[str, ...]] = {}
    text: dict[str, TextColumn] = {}
    for f in schema.fields:
        raw = [getattr(r, f.name) for r in records]
        if f.kind == "numeric":
            numeric[f.name] = np.array(
                [float(v) if v is not None else np.nan for v in raw], dtype=np.float64
            )
        elif f.kind == "boolean":
            boolean[f.name] = np.array([1.0 if v else 0.0 for v in raw], dtype=np.float64)
        elif f.kind == "categorical":
            levels = sorted({str(v) for v in raw if v is not None})
            index = {lvl: i for i, lvl in enumerate(levels)}
            codes = np.array(
                [index[str(v)] if v is not None else -1 for v in raw], dtype=np.int32
            )
            cat_codes[f.name] = codes
            cat_levels[f.name] = tuple(levels)
        else:
            term_index: dict[str, int] = {}
            terms: list[str] = []
            indptr = np.zeros(n + 1, dtype=np.int64)
            ids_parts: list[np.ndarray] = []
            counts_parts: list[np.ndarray] = []
            total = 0
            for i, value in enumerate(raw):
                doc = Counter(tokenize(str(value) if value is not None else ""))
                doc_ids = np.empty(len(doc), dtype=np.int32)
                doc_counts = np.empty(len(doc), dtype=np.float64)
                for j, (term, count) in enumerate(sorted(doc.items())):
                    tid = term_index.get(term)
                    if tid is None:
                        tid = len(terms)
                        term_index[term] = tid
                        terms.append(term)
                    doc_ids[j] = tid
                    doc_counts[j] = count
                ids_parts.append(doc_ids)
                counts_parts.append(doc_counts)
                total += len(doc)
                indptr[i + 1] = total
            text[f.name] = TextColumn(
                terms=tuple(terms),
                indptr=indptr,
                term_ids=np.concatenate(ids_parts) if ids_parts else np.empty(0, dtype=np.int32),
                counts=np.concatenate(counts_parts) if counts_parts else np.empty(0, dtype=np.float64),
            )
    return ColumnStore(
        schema=schema,
        ids=tuple(r.id for r in records),
        numeric=numeric,
        boolean=boolean,
        cat_codes=cat_codes,
        cat_levels=cat_levels,
        text=text,
    )


@dataclass(frozen=True)
class CategoricalState:
    kept: tuple[str, ...]  # sorted; levels at or above the 1% threshold
    rare: frozenset[str]


@dataclass(frozen=True)
class NumericState:
    median: float


@dataclass(frozen=True)
class TextState:
    vocab: tuple[str, ...]  # sorted; selected by document frequency
    idf: np.ndarray  # aligned with vocab


@dataclass(frozen=True)
class PreprocessorState:
    schema: FeatureSchema
    n_train: int
    categorical: Mapping[str, CategoricalState]
    numeric: Mapping[str, NumericState]
    text: Mapping[str, TextState]
    max_vocab: int


def fit_preprocessor(
    records: Sequence[ApplicantRecord],
    schema: Optional[FeatureSchema] = None,
    max_vocab: int = 512,
) -> PreprocessorState:
    """Fit encoding state on training records only."""
    if not records:
        raise ValueError("cannot fit a preprocessor on an empty record list")
    schema = schema or default_schema()
    store = columnize(records, schema)
    return fit_columns(store, np.arange(store.n_rows), max_vocab=max_vocab)


def fit_columns(store: ColumnStore, rows: np.ndarray, max_vocab: int = 512) -> PreprocessorState:
    """Fit encoding state on a row subset of a column store.

    ``rows`` may contain repeats (bootstrap resample); frequencies then count
    repeated rows with multiplicity, exactly as if the resampled dataset had
    been materialized.
    """
    rows = np.asarray(rows)
    n = len(rows)
    if n == 0:
        raise ValueError("cannot fit a preprocessor on an empty row subset")
    categorical: dict[str, CategoricalState] = {}
    numeric: dict[str, NumericState] = {}
    text: dict[str, TextState] = {}
    for f in store.schema.fields:
        if f.kind == "categorical":
            codes = store.cat_codes[f.name][rows]
            counts = np.bincount(codes[codes >= 0], minlength=len(store.cat_levels[f.name]))
            kept = []
            rare = []
            for level, count in zip(store.cat_levels[f.name], counts):
                # "fewer than 1%" is a strict inequality; exact integer test.
                if count > 0 and 100 * int(count) < n:
                    rare.append(level)
                elif count > 0:
                    kept.append(level)
            categorical[f.name] = CategoricalState(kept=tuple(kept), rare=frozenset(rare))
        elif f.kind == "numeric":
            values = store.numeric[f.name][rows]
            present = values[~np.isnan(values)]
            median = float(np.median(present)) if len(present) else 0.0
            numeric[f.name] = NumericState(median=median)
        elif f.kind == "text":
            col = store.text[f.name]
            gather, _ = _csr_gather_index(col, rows)
            df = np.bincount(col.term_ids[gather], minlength=len(col.terms))
            present = np.flatnonzero(df)
            if len(present) > max_vocab:
                # Top max_vocab by document frequency, ties to the
                # alphabetically earlier term.
                terms_arr = np.array(col.terms, dtype=object)[present]
                order = np.lexsort((terms_arr, -df[present]))
                present = present[order[:max_vocab]]
            vocab = sorted(col.terms[tid] for tid in present)
            df_by_term = {col.terms[tid]: int(df[tid]) for tid in present}
            idf = np.array(
                [math.log((1 + n) / (1 + df_by_term[t])) + 1.0 for t in vocab], dtype=np.float64
            )
            text[f.name] = TextState(vocab=tuple(vocab), idf=idf)
    return PreprocessorState(
        schema=store.schema,
        n_train=n,
        categorical=categorical,
        numeric=numeric,
        text=text,
        max_vocab=max_vocab,
    )


def _csr_gather_index(col: TextColumn, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices into the CSR arrays for the given rows (with repeats).

    Returns ``(gather, row_of)`` where ``col.term_ids[gather]`` concatenates
    the per-doc entries and ``row_of`` maps each entry to its output row.
    """
    starts = col.indptr[rows]
    lengths = (col.indptr[rows + 1] - starts).astype(np.int64)
    total = int(lengths.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    cum = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    within = np.arange(total, dtype=np.int64) - np.repeat(cum, lengths)
    gather = np.repeat(starts, lengths) + within
    row_of = np.repeat(np.arange(len(rows), dtype=np.int64), lengths)
    return gather, row_of


@dataclass(frozen=True)
class ColumnDescriptor:
    """Provenance of one design-matrix column."""

    field: str
    role: str  # numeric | missing_indicator | onehot | tfidf
    detail: str = ""

    def key(self) -> tuple[str, str, str]:
        return (self.field, self.role, self.detail)


@dataclass(frozen=True)
class DesignMatrix:
    ids: tuple[str, ...]
    columns: tuple[ColumnDescriptor, ...]
    values: np.ndarray  # float64, shape (n_rows, n_columns)
    policy: str = "ml_baseline"

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_array(
        cls, values: np.ndarray, ids: Optional[Sequence[str]] = None, policy: str = "ad_hoc"
    ) -> "DesignMatrix":
        """Wrap a plain array (for direct model use outside the pipeline)."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("expected a 2-d array")
        if ids is None:
            ids = tuple(f"row-{i}" for i in range(values.shape[0]))
        columns = tuple(ColumnDescriptor(f"x{j}", "numeric") for j in range(values.shape[1]))
        return cls(ids=tuple(ids), columns=columns, values=values, policy=policy)


def transform(
    records: Sequence[ApplicantRecord],
    state: PreprocessorState,
    policy: Optional[PolicySpec] = None,
) -> DesignMatrix:
    """Encode records with a fitted state under a policy ablation."""
    store = columnize(records, state.schema)
    return transform_columns(store, np.arange(store.n_rows), state, policy)


def active_fields(schema: FeatureSchema, policy: PolicySpec) -> tuple[SchemaField, ...]:
    return tuple(f for f in schema.fields if not (f.tags & policy.excluded_groups))


def transform_columns(
    store: ColumnStore,
    rows: np.ndarray,
    state: PreprocessorState,
    policy: Optional[PolicySpec] = None,
) -> DesignMatrix:
    """Encode a row subset of a column store with a fitted state."""
    policy = policy or PolicySpec("ml_baseline", frozenset())
    rows = np.asarray(rows)
    n = len(rows)
    blocks: list[np.ndarray] = []
    columns: list[ColumnDescriptor] = []
    for f in active_fields(state.schema, policy):
        if f.kind == "numeric":
            values = store.numeric[f.name][rows]
            missing = np.isnan(values)
            imputed = np.where(missing, state.numeric[f.name].median, values)
            blocks.append(np.column_stack([imputed, missing.astype(np.float64)]))
            columns.append(ColumnDescriptor(f.name, "numeric"))
            columns.append(ColumnDescriptor(f.name, "missing_indicator"))
        elif f.kind == "boolean":
            blocks.append(store.boolean[f.name][rows, None])
            columns.append(ColumnDescriptor(f.name, "numeric"))
        elif f.kind == "categorical":
            cat = state.categorical[f.name]
            level_names = list(cat.kept) + [RARE_LEVEL, MISSING_LEVEL]
            n_cols = len(level_names)
            rare_col = n_cols - 2
            missing_col = n_cols - 1
            kept_index = {lvl: i for i, lvl in enumerate(cat.kept)}
            # Map every store-level code to a local column; unseen or rare
            # levels collapse to RARE, absent values to MISSING.
            code_to_col = np.full(len(store.cat_levels[f.name]) + 1, rare_col, dtype=np.int64)
            for code, level in enumerate(store.cat_levels[f.name]):
                code_to_col[code] = kept_index.get(level, rare_col)
            code_to_col[-1] = missing_col
            local = code_to_col[store.cat_codes[f.name][rows]]
            block = np.zeros((n, n_cols), dtype=np.float64)
            block[np.arange(n), local] = 1.0
            blocks.append(block)
            columns.extend(ColumnDescriptor(f.name, "onehot", lvl) for lvl in level_names)
        else:
            tstate = state.text[f.name]
            col = store.text[f.name]
            vocab_size = len(tstate.vocab)
            block = np.zeros((n, vocab_size), dtype=np.float64)
            if vocab_size:
                term_to_local = {t: i for i, t in enumerate(tstate.vocab)}
                gid_to_local = np.full(len(col.terms), -1, dtype=np.int64)
                for gid, term in enumerate(col.terms):
                    local = term_to_local.get(term)
                    if local is not None:
                        gid_to_local[gid] = local
                gather, row_of = _csr_gather_index(col, rows)
                local = gid_to_local[col.term_ids[gather]]
                keep = local >= 0
                block[row_of[keep], local[keep]] = col.counts[gather[keep]]
                block *= tstate.idf
                norms = np.linalg.norm(block, axis=1, keepdims=True)
                np.divide(block, norms, out=block, where=norms > 0)
            blocks.append(block)
            columns.extend(ColumnDescriptor(f.name, "tfidf", t) for t in tstate.vocab)
    values = np.concatenate(blocks, axis=1) if blocks else np.zeros((n, 0), dtype=np.float64)
    ids = tuple(store.ids[i] for i in rows)
    return DesignMatrix(ids=ids, columns=tuple(columns), values=values, policy=policy.name)
