"""Decile and pool assignment for model scores, plus the naive baseline.

Model scores are sorted descending (ties broken by applicant id) and split
into 10 contiguous blocks; decile 10 holds the highest scores. When n is not
divisible by 10 the remainder goes to the highest deciles, so the top pool
never shrinks below its nominal share. The top pool is every decile at or
above the cutoff (default 9, i.e. the top 20%).

The naive baseline ranks by highest math course band, then by the best
submitted test percentile within the band; non-submitters come last within
their band. Its top set keeps boundary ties together, so it may exceed the
nominal 20%.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .synthgen import ApplicantRecord

POOL_TOP = "top"
POOL_MIDDLE = "middle"
POOL_BOTTOM = "bottom"


class RankingError(ValueError):
    pass


@dataclass(frozen=True)
class RankOutcome:
    id: str
    score: float
    decile: int  # 1 (lowest scores) .. 10 (highest)
    pool: str
    rank: int  # 1-based, 1 = best score


def decile_sizes(n: int) -> list[int]:
    """Sizes of deciles 1..10; the remainder goes to the highest deciles."""
    q, r = divmod(n, 10)
    return [q + 1 if d > 10 - r else q for d in range(1, 11)]


def _decile_of_position(n: int) -> np.ndarray:
    """Decile for each 0-based position in the descending score order."""
    sizes = decile_sizes(n)
    out = np.empty(n, dtype=np.int64)
    pos = 0
    for decile in range(10, 0, -1):
        size = sizes[decile - 1]
        out[pos : pos + size] = decile
        pos += size
    return out


def top_pool_mask(scores: np.ndarray, cutoff: int = 9) -> np.ndarray:
    """Boolean top-pool membership; ties broken by row position.

    Fast path used by ensemble audits, where rows are already in ascending
    applicant-id order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = len(scores)
    _check_decile_args(scores, n, cutoff)
    order = np.lexsort((np.arange(n), -scores))
    top_count = sum(decile_sizes(n)[cutoff - 1 :])
    mask = np.zeros(n, dtype=bool)
    mask[order[:top_count]] = True
    return mask


def _check_decile_args(scores: np.ndarray, n: int, cutoff: int) -> None:
    if n < 10:
        raise RankingError(f"decile assignment needs at least 10 applicants, got {n}")
    if not 1 <= cutoff <= 10:
        raise RankingError(f"cutoff must be in 1..10, got {cutoff}")
    if np.isnan(scores).any():
        raise RankingError("scores contain NaN")


def assign_deciles(
    ids: Sequence[str], scores: Sequence[float], cutoff: int = 9
) -> list[RankOutcome]:
    """Rank applicants into deciles and pools.

    The bottom pool mirrors the top: deciles <= 11 - cutoff that are not in
    the top pool; everything else is middle.
    """
    scores_arr = np.asarray(scores, dtype=np.float64)
    n = len(scores_arr)
    if len(ids) != n:
        raise RankingError(f"ids ({len(ids)}) and scores ({n}) differ in length")
    _check_decile_args(scores_arr, n, cutoff)
    id_arr = np.array(ids, dtype=object)
    tie_rank = np.argsort(np.argsort(id_arr))
    order = np.lexsort((tie_rank, -scores_arr))
    deciles = _decile_of_position(n)
    outcomes: list[Optional[RankOutcome]] = [None] * n
    for position, row in enumerate(order):
        decile = int(deciles[position])
        if decile >= cutoff:
            pool = POOL_TOP
        elif decile <= 11 - cutoff:
            pool = POOL_BOTTOM
        else:
            pool = POOL_MIDDLE
        outcomes[row] = RankOutcome(
            id=str(id_arr[row]),
            score=float(scores_arr[row]),
            decile=decile,
            pool=pool,
            rank=position + 1,
        )
    return outcomes  # type: ignore[return-value]


@dataclass(frozen=True)
class NaiveRankEntry:
    id: str
    math_band: int
    best_percentile: Optional[float]  # max of submitted SAT/ACT percentiles
    submitted: bool
    rank: int
    top: bool


def _naive_key(record: ApplicantRecord) -> tuple[int, int, float]:
    percentiles = [p for p in (record.sat_percentile, record.act_percentile) if p is not None]
    best = max(percentiles) if percentiles else None
    submitted = best is not None
    # Lower tuple sorts first: higher band, then submitters by descending
    # percentile, then non-submitters.
    return (-record.highest_math, 0 if submitted else 1, -(best if submitted else 0.0))


def naive_rank(records: Sequence[ApplicantRecord], top_share: float = 0.2) -> list[NaiveRankEntry]:
    """Rank by math band then best test percentile; flag the top set.

    The nominal top set is ceil(top_share * n); applicants tied with the
    boundary key are kept together, so the flagged set may be larger.
    """
    if not records:
        return []
    keyed = sorted(records, key=lambda r: (_naive_key(r), r.id))
    n = len(keyed)
    nominal = max(1, math.ceil(top_share * n))
    boundary = _naive_key(keyed[nominal - 1])
    entries = []
    for position, record in enumerate(keyed):
        percentiles = [p for p in (record.sat_percentile, record.act_percentile) if p is not None]
        best = max(percentiles) if percentiles else None
        entries.append(
            NaiveRankEntry(
                id=record.id,
                math_band=record.highest_math,
                best_percentile=best,
                submitted=best is not None,
                rank=position + 1,
                top=_naive_key(record) <= boundary,
            )
        )
    return entries
