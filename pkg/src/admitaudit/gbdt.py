"""Histogram-based gradient-boosted decision trees for binary classification.

Second-order logistic boosting with quantile-binned split candidates, fixed
bin edges computed once from the training matrix, and leaf values
-G / (H + lambda). All randomness lives upstream (bootstrap resampling);
training itself is deterministic.

Gradient and hessian sums are accumulated on a fixed integer grid
(quantized to 2**-30) inside float64, so partial sums are exact integers and
every reduction is order-independent. That makes training bit-identical
under row permutations and under any histogram work-chunking, which is what
the determinism contract requires.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .features import DesignMatrix

_QUANT_SCALE = float(2**30)
_MAX_ROWS = 4_000_000  # keeps quantized sums under 2**53 (exact in float64)
_LAMBDA = 1.0
_MIN_GAIN = 1e-12
_PROB_EPS = 1e-15
_CHUNK = 256

try:  # compiled histogram kernel; the numpy fallback is bit-identical
    from numba import njit as _njit

    @_njit(cache=True)
    def _hist_kernel(binned, rows, gq, hq, hist_g, hist_h, hist_c):  # pragma: no cover
        for ii in range(rows.shape[0]):
            r = rows[ii]
            g = gq[r]
            h = hq[r]
            for f in range(binned.shape[1]):
                b = binned[r, f]
                hist_g[f, b] += g
                hist_h[f, b] += h
                hist_c[f, b] += 1

except ImportError:  # pragma: no cover
    _hist_kernel = None


class GbdtError(ValueError):
    pass


@dataclass(frozen=True)
class GbdtConfig:
    n_trees: int = 100
    max_depth: int = 4
    learning_rate: float = 0.1
    min_samples_leaf: int = 20
    n_bins: int = 64
    seed: int = 0

    def validate(self) -> None:
        if self.n_trees < 0:
            raise GbdtError(f"n_trees must be >= 0, got {self.n_trees}")
        for name in ("max_depth", "min_samples_leaf", "n_bins"):
            if getattr(self, name) < 1:
                raise GbdtError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not (0.0 < self.learning_rate <= 1.0):
            raise GbdtError(f"learning_rate must be in (0, 1], got {self.learning_rate}")


@dataclass(frozen=True)
class Tree:
    """Flat node arrays; feature -1 marks a leaf, children -1 unset."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, values: np.ndarray, depth_cap: int) -> np.ndarray:
        n = values.shape[0]
        idx = np.zeros(n, dtype=np.int32)
        rows = np.arange(n)
        for _ in range(depth_cap):
            feat = self.feature[idx]
            internal = feat >= 0
            if not internal.any():
                break
            col = np.where(internal, feat, 0)
            go_left = values[rows, col] <= self.threshold[idx]
            nxt = np.where(go_left, self.left[idx], self.right[idx])
            idx = np.where(internal, nxt, idx)
        return self.value[idx]


@dataclass(frozen=True)
class TrainedModel:
    config: GbdtConfig
    base_score: float
    trees: tuple[Tree, ...]
    columns: tuple[tuple[str, str, str], ...]
    bin_edges: tuple[np.ndarray, ...]
    target: str = "admitted"
    loss_history: tuple[float, ...] = field(default_factory=tuple)
    version: str = "1"


def sigmoid(scores: np.ndarray) -> np.ndarray:
    """Logistic link, clipped away from exact 0 and 1."""
    out = np.empty_like(scores, dtype=np.float64)
    pos = scores >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-scores[pos]))
    ez = np.exp(scores[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, _PROB_EPS, 1.0 - _PROB_EPS)


def logistic_loss(labels: np.ndarray, probs: np.ndarray) -> float:
    labels = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(labels * np.log(probs) + (1.0 - labels) * np.log(1.0 - probs)))


def logistic_gradient_hessian(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row gradient (p - y) and hessian p(1 - p) of the logistic loss."""
    p = sigmoid(np.asarray(scores, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64)
    return p - y, p * (1.0 - p)


def compute_bin_edges(values: np.ndarray, n_bins: int) -> list[np.ndarray]:
    """Per-column candidate thresholds from training-data quantiles."""
    edges: list[np.ndarray] = []
    for j in range(values.shape[1]):
        col = values[:, j]
        uniq = np.unique(col)
        if len(uniq) <= 1:
            edges.append(np.empty(0, dtype=np.float64))
        elif len(uniq) <= n_bins:
            edges.append((uniq[:-1] + uniq[1:]) / 2.0)
        else:
            qs = np.quantile(col, np.arange(1, n_bins) / n_bins)
            edges.append(np.unique(qs))
    return edges


def bin_values(values: np.ndarray, edges: Sequence[np.ndarray]) -> np.ndarray:
    """Bin with x <= edge going left of it; bin b means edges[b-1] < x <= edges[b]."""
    n, n_cols = values.shape
    binned = np.zeros((n, n_cols), dtype=np.uint8)
    for j in range(n_cols):
        if len(edges[j]):
            binned[:, j] = np.searchsorted(edges[j], values[:, j], side="left")
    return binned


def _node_histograms(
    binned: np.ndarray,
    rows: Optional[np.ndarray],
    gq: np.ndarray,
    hq: np.ndarray,
    n_bins: int,
    pool: Optional[ThreadPoolExecutor],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-(feature, bin) gradient/hessian/count sums for a node's rows.

    Sums quantized integer-valued float64, so the result is independent of
    accumulation order (and therefore of kernel choice and chunking).
    """
    n_cols = binned.shape[1]
    if _hist_kernel is not None:
        hist_g = np.zeros((n_cols, n_bins), dtype=np.float64)
        hist_h = np.zeros((n_cols, n_bins), dtype=np.float64)
        hist_c = np.zeros((n_cols, n_bins), dtype=np.int64)
        row_idx = np.arange(binned.shape[0], dtype=np.int64) if rows is None else rows
        _hist_kernel(binned, row_idx, gq, hq, hist_g, hist_h, hist_c)
        return hist_g, hist_h, hist_c

    sub = binned if rows is None else binned[rows]
    g_rows = gq if rows is None else gq[rows]
    h_rows = hq if rows is None else hq[rows]
    hist_g = np.empty((n_cols, n_bins), dtype=np.float64)
    hist_h = np.empty((n_cols, n_bins), dtype=np.float64)
    hist_c = np.empty((n_cols, n_bins), dtype=np.int64)

    def fill(start: int) -> None:
        stop = min(start + _CHUNK, n_cols)
        width = stop - start
        flat = sub[:, start:stop].astype(np.int64)
        flat += np.arange(width, dtype=np.int64) * n_bins
        flat = flat.ravel()
        size = width * n_bins
        hist_g[start:stop] = np.bincount(
            flat, weights=np.repeat(g_rows, width), minlength=size
        ).reshape(width, n_bins)
        hist_h[start:stop] = np.bincount(
            flat, weights=np.repeat(h_rows, width), minlength=size
        ).reshape(width, n_bins)
        hist_c[start:stop] = np.bincount(flat, minlength=size).reshape(width, n_bins)

    starts = range(0, n_cols, _CHUNK)
    if pool is None:
        for start in starts:
            fill(start)
    else:
        list(pool.map(fill, starts))
    return hist_g, hist_h, hist_c


def _best_split(
    hist_g: np.ndarray,
    hist_h: np.ndarray,
    hist_c: np.ndarray,
    min_samples_leaf: int,
) -> Optional[tuple[int, int, float]]:
    """Best (feature, bin, gain); ties go to the lowest feature, then bin."""
    cum_g = np.cumsum(hist_g, axis=1)[:, :-1] / _QUANT_SCALE
    cum_h = np.cumsum(hist_h, axis=1)[:, :-1] / _QUANT_SCALE
    cum_c = np.cumsum(hist_c, axis=1)[:, :-1]
    total_g = float(hist_g[0].sum()) / _QUANT_SCALE
    total_h = float(hist_h[0].sum()) / _QUANT_SCALE
    total_c = int(hist_c[0].sum())
    right_g = total_g - cum_g
    right_h = total_h - cum_h
    right_c = total_c - cum_c
    parent_term = total_g * total_g / (total_h + _LAMBDA)
    gain = (
        cum_g * cum_g / (cum_h + _LAMBDA)
        + right_g * right_g / (right_h + _LAMBDA)
        - parent_term
    )
    gain[(cum_c < min_samples_leaf) | (right_c < min_samples_leaf)] = -np.inf
    if gain.size == 0:
        return None
    best_bin = np.argmax(gain, axis=1)
    best_gain = gain[np.arange(gain.shape[0]), best_bin]
    feature = int(np.argmax(best_gain))
    if not (best_gain[feature] > _MIN_GAIN):
        return None
    return feature, int(best_bin[feature]), float(best_gain[feature])


def _grow_tree(
    binned: np.ndarray,
    edges: Sequence[np.ndarray],
    gq: np.ndarray,
    hq: np.ndarray,
    config: GbdtConfig,
    n_bins: int,
    pool: Optional[ThreadPoolExecutor],
    contrib: np.ndarray,
) -> Tree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def make_leaf(node: int, hist_g: np.ndarray, hist_h: np.ndarray, rows: Optional[np.ndarray]) -> None:
        g = float(hist_g[0].sum()) / _QUANT_SCALE
        h = float(hist_h[0].sum()) / _QUANT_SCALE
        leaf_value = -g / (h + _LAMBDA)
        value[node] = leaf_value
        if rows is None:
            contrib[:] = leaf_value
        else:
            contrib[rows] = leaf_value

    root = new_node()
    root_hists = _node_histograms(binned, None, gq, hq, n_bins, pool)
    stack: list[tuple[int, Optional[np.ndarray], int, tuple[np.ndarray, np.ndarray, np.ndarray]]] = [
        (root, None, 0, root_hists)
    ]
    while stack:
        node, rows, depth, (hist_g, hist_h, hist_c) = stack.pop()
        count = int(hist_c[0].sum())
        split = None
        if depth < config.max_depth and count >= 2 * config.min_samples_leaf:
            split = _best_split(hist_g, hist_h, hist_c, config.min_samples_leaf)
        if split is None:
            make_leaf(node, hist_g, hist_h, rows)
            continue
        feat, bin_idx, _ = split
        feature[node] = feat
        threshold[node] = float(edges[feat][bin_idx])
        node_bins = binned[:, feat] if rows is None else binned[rows, feat]
        go_left = node_bins <= bin_idx
        left_rows = np.flatnonzero(go_left) if rows is None else rows[go_left]
        right_rows = np.flatnonzero(~go_left) if rows is None else rows[~go_left]
        # Histogram subtraction: build the smaller child, derive the other.
        # Quantized sums are exact integers, so subtraction is exact.
        if len(left_rows) <= len(right_rows):
            small_rows, big_rows, small_is_left = left_rows, right_rows, True
        else:
            small_rows, big_rows, small_is_left = right_rows, left_rows, False
        small = _node_histograms(binned, small_rows, gq, hq, n_bins, pool)
        big = (hist_g - small[0], hist_h - small[1], hist_c - small[2])
        left_h, right_h = (small, big) if small_is_left else (big, small)
        left[node] = new_node()
        right[node] = new_node()
        stack.append((left[node], left_rows, depth + 1, left_h))
        stack.append((right[node], right_rows, depth + 1, right_h))
    return Tree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        value=np.array(value, dtype=np.float64),
    )


def train(
    matrix: DesignMatrix,
    labels: Sequence[bool],
    config: Optional[GbdtConfig] = None,
    target: str = "admitted",
    n_threads: int = 1,
) -> TrainedModel:
    """Fit a boosted ensemble on a design matrix.

    ``n_threads`` only chunks histogram work; results are bit-identical for
    any thread count.
    """
    config = config or GbdtConfig()
    config.validate()
    values = matrix.values
    y = np.asarray(labels, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != len(y):
        raise GbdtError(f"matrix rows ({values.shape[0]}) do not match labels ({len(y)})")
    if values.shape[0] < 2:
        raise GbdtError("training requires at least 2 rows")
    if values.shape[0] > _MAX_ROWS:
        raise GbdtError(f"training supports at most {_MAX_ROWS} rows")
    if not np.isfinite(values).all():
        raise GbdtError("training matrix contains NaN or infinite values")
    positive = float(y.mean())
    if positive == 0.0 or positive == 1.0:
        raise GbdtError("labels contain a single class; both classes are required")

    edges = compute_bin_edges(values, config.n_bins)
    binned = bin_values(values, edges)
    n_bins = max((len(e) for e in edges), default=0) + 1
    base_score = math.log(positive / (1.0 - positive))
    scores = np.full(values.shape[0], base_score, dtype=np.float64)
    trees: list[Tree] = []
    losses: list[float] = []
    contrib = np.zeros(values.shape[0], dtype=np.float64)
    pool = ThreadPoolExecutor(max_workers=n_threads) if n_threads > 1 else None
    try:
        for _ in range(config.n_trees):
            g, h = logistic_gradient_hessian(scores, y)
            gq = np.rint(g * _QUANT_SCALE)
            hq = np.rint(h * _QUANT_SCALE)
            tree = _grow_tree(binned, edges, gq, hq, config, n_bins, pool, contrib)
            trees.append(tree)
            scores += config.learning_rate * contrib
            losses.append(logistic_loss(y, sigmoid(scores)))
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainedModel(
        config=config,
        base_score=base_score,
        trees=tuple(trees),
        columns=tuple(c.key() for c in matrix.columns),
        bin_edges=tuple(edges),
        target=target,
        loss_history=tuple(losses),
    )


def _check_columns(model: TrainedModel, matrix: DesignMatrix) -> None:
    got = tuple(c.key() for c in matrix.columns)
    if got == model.columns:
        return
    if len(got) != len(model.columns):
        raise GbdtError(
            f"column mismatch: model expects {len(model.columns)} columns, got {len(got)}"
        )
    for i, (expected, actual) in enumerate(zip(model.columns, got)):
        if expected != actual:
            raise GbdtError(
                f"column mismatch at index {i}: model expects {expected}, got {actual}"
            )


def predict_raw(model: TrainedModel, matrix: DesignMatrix) -> np.ndarray:
    """Additive scores: base + learning_rate * sum of leaf values."""
    _check_columns(model, matrix)
    values = matrix.values
    if not np.isfinite(values).all():
        raise GbdtError("prediction matrix contains NaN or infinite values")
    scores = np.full(values.shape[0], model.base_score, dtype=np.float64)
    for tree in model.trees:
        scores += model.config.learning_rate * tree.predict(values, model.config.max_depth)
    return scores


def predict_proba(model: TrainedModel, matrix: DesignMatrix) -> np.ndarray:
    """Admission probabilities, strictly inside (0, 1)."""
    return sigmoid(predict_raw(model, matrix))


def model_to_json(model: TrainedModel) -> str:
    payload = {
        "version": model.version,
        "target": model.target,
        "base_score": model.base_score,
        "config": {
            "n_trees": model.config.n_trees,
            "max_depth": model.config.max_depth,
            "learning_rate": model.config.learning_rate,
            "min_samples_leaf": model.config.min_samples_leaf,
            "n_bins": model.config.n_bins,
            "seed": model.config.seed,
        },
        "columns": [list(c) for c in model.columns],
        "bin_edges": [e.tolist() for e in model.bin_edges],
        "loss_history": list(model.loss_history),
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
            }
            for t in model.trees
        ],
    }
    return json.dumps(payload)


def model_from_json(text: str) -> TrainedModel:
    payload = json.loads(text)
    if payload.get("version") != "1":
        raise GbdtError(f"unsupported model version {payload.get('version')!r}")
    trees = tuple(
        Tree(
            feature=np.array(t["feature"], dtype=np.int32),
            threshold=np.array(t["threshold"], dtype=np.float64),
            left=np.array(t["left"], dtype=np.int32),
            right=np.array(t["right"], dtype=np.int32),
            value=np.array(t["value"], dtype=np.float64),
        )
        for t in payload["trees"]
    )
    return TrainedModel(
        config=GbdtConfig(**payload["config"]),
        base_score=payload["base_score"],
        trees=trees,
        columns=tuple(tuple(c) for c in payload["columns"]),
        bin_edges=tuple(np.array(e, dtype=np.float64) for e in payload["bin_edges"]),
        target=payload["target"],
        loss_history=tuple(payload["loss_history"]),
        version=payload["version"],
    )
