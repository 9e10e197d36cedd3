"""Decision table regressor.

Numeric predictors are cut into equal-frequency bins, categorical predictors
use their codes as-is. A best-first forward search picks the predictor subset
whose cell-mean table has the lowest leave-one-out squared error. Prediction
looks up the cell of the selected predictors and falls back to the global
mean for cells never seen in training.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .. import kernels
from .base import CATEGORICAL, NUMERIC, ColumnSpec, TrainingMatrix, stable_mean

DECISION_TABLE = "decision_table"


@dataclass(frozen=True, eq=False)
class DecisionTableModel:
    columns: ColumnSpec
    selected: tuple[int, ...]
    edges: tuple[np.ndarray | None, ...]  # per selected predictor; None for categorical
    table: dict
    default: float
    params: tuple[tuple[str, float], ...] = ()
    kind: str = DECISION_TABLE

    def key_of(self, x: np.ndarray) -> tuple[int, ...]:
        key = []
        for j, edges in zip(self.selected, self.edges):
            v = x[j]
            key.append(int(v) if edges is None else int(np.searchsorted(edges, v, side="right")))
        return tuple(key)

    def predict(self, row) -> float:
        return float(self.table.get(self.key_of(self.columns.encode(row)), self.default))

    def predict_many(self, rows) -> list[float]:
        X = self.columns.encode_many(rows)
        return [float(self.table.get(self.key_of(x), self.default)) for x in X]


def bin_edges(col: np.ndarray, bins: int) -> np.ndarray:
    """Interior cut points for equal-frequency binning of ``col``."""
    if bins < 2 or col.shape[0] == 0:
        return np.empty(0)
    return np.unique(np.quantile(col, np.arange(1, bins) / bins))


def discretize(X: np.ndarray, kinds, bins: int):
    """Integer cell coordinates for every column plus the edges used."""
    codes = np.empty(X.shape, dtype=np.int64)
    edges = []
    for j, kind in enumerate(kinds):
        if kind == CATEGORICAL:
            codes[:, j] = X[:, j].astype(np.int64)
            edges.append(None)
        else:
            e = bin_edges(X[:, j], bins)
            codes[:, j] = np.searchsorted(e, X[:, j], side="right")
            edges.append(e)
    return codes, edges


def _subset_keys(codes, radix, subset):
    keys = np.zeros(codes.shape[0], dtype=np.int64)
    for j in subset:
        keys = keys * radix[j] + codes[:, j]
    return keys


def _score(codes, radix, y, subset):
    if not subset:
        keys = np.zeros(y.shape[0], dtype=np.int64)
    else:
        keys = _subset_keys(codes, radix, subset)
    return kernels.loo_sse(keys, y) / y.shape[0]


def select_features(codes, y, max_subset_size=5, patience=5):
    """Best-first forward selection; returns (subset, score)."""
    n_cols = codes.shape[1]
    radix = codes.max(axis=0) + 1 if codes.shape[0] else np.ones(n_cols, dtype=np.int64)
    start = ()
    best_subset, best_score = start, _score(codes, radix, y, start)
    frontier = [(best_score, start)]
    seen = {start}
    stale = 0
    while frontier and stale < patience:
        _, subset = heapq.heappop(frontier)
        improved = False
        if len(subset) < max_subset_size:
            for j in range(n_cols):
                if j in subset:
                    continue
                child = tuple(sorted(subset + (j,)))
                if child in seen:
                    continue
                seen.add(child)
                s = _score(codes, radix, y, child)
                heapq.heappush(frontier, (s, child))
                if s < best_score:
                    best_score, best_subset = s, child
                    improved = True
        stale = 0 if improved else stale + 1
    return best_subset, best_score


def train_decision_table(data: TrainingMatrix, max_subset_size: int = 5, bins: int = 10,
                         patience: int = 5) -> DecisionTableModel:
    if data.target_kind != NUMERIC:
        raise ValueError("decision table needs a numeric target")
    if data.n_rows < 2:
        raise ValueError("need at least 2 training rows")
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins!r}")
    if max_subset_size < 0 or patience < 1:
        raise ValueError("max_subset_size must be >= 0 and patience >= 1")
    columns = data.column_spec()
    X, y = data.X, data.y
    codes, edges = discretize(X, columns.kinds, bins)
    subset, _ = select_features(codes, y, max_subset_size, patience)
    cells: dict[tuple[int, ...], list[float]] = {}
    for r in range(data.n_rows):
        cells.setdefault(tuple(int(codes[r, j]) for j in subset), []).append(float(y[r]))
    means = {k: stable_mean(v) for k, v in cells.items()}
    params = (("max_subset_size", float(max_subset_size)), ("bins", float(bins)),
              ("patience", float(patience)))
    return DecisionTableModel(columns, tuple(subset), tuple(edges[j] for j in subset),
                              means, stable_mean(y), params)
