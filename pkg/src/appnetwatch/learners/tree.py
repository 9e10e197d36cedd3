"""Binary decision/regression trees.

``train_regression_tree`` grows a variance-reduction tree on part of the data
and prunes it against a held-out remainder (reduced-error pruning, as in
REPTree). ``train_classification_tree`` follows C4.5: gain-ratio splits among
attributes whose gain is at least average, pessimistic-error subtree
replacement, no subtree raising.

Numeric splits send ``x <= threshold`` left; categorical splits are
one-vs-rest and send ``x == value`` left. Score ties go to the lowest feature
index, then the lowest threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .. import kernels
from .base import CATEGORICAL, NUMERIC, ColumnSpec, TrainingMatrix, stable_mean

REGRESSION_TREE = "regression_tree"
CLASSIFICATION_TREE = "classification_tree"

PRUNE_SEED = 20120101
_REL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TreeModel:
    kind: str
    columns: ColumnSpec
    feature: np.ndarray
    threshold: np.ndarray
    is_cat: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    counts: np.ndarray | None = None
    params: tuple[tuple[str, float], ...] = ()

    @property
    def n_nodes(self) -> int:
        return int(self.left.shape[0])

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.left < 0))

    def leaf_of(self, x: np.ndarray) -> int:
        node = 0
        left, right = self.left, self.right
        while left[node] >= 0:
            v = x[self.feature[node]]
            if self.is_cat[node]:
                node = left[node] if v == self.threshold[node] else right[node]
            else:
                node = left[node] if v <= self.threshold[node] else right[node]
        return node

    def predict(self, row):
        leaf = self.leaf_of(self.columns.encode(row))
        if self.kind == CLASSIFICATION_TREE:
            return self.columns.classes[int(self.value[leaf])]
        return float(self.value[leaf])

    def predict_many(self, rows) -> list:
        X = self.columns.encode_many(rows)
        leaves = kernels.route_rows(self.feature, self.threshold, self.is_cat, self.left, self.right, X)
        if self.kind == CLASSIFICATION_TREE:
            return [self.columns.classes[int(self.value[i])] for i in leaves]
        return [float(v) for v in self.value[leaves]]


class _Growth:
    """Mutable node lists used while growing; frozen into a TreeModel after."""

    def __init__(self):
        self.feature, self.threshold, self.is_cat = [], [], []
        self.left, self.right, self.value, self.counts = [], [], [], []

    def add(self, value, counts=None):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.is_cat.append(False)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        self.counts.append(counts)
        return len(self.left) - 1

    def split(self, node, feature, threshold, is_cat, left, right):
        self.feature[node] = feature
        self.threshold[node] = threshold
        self.is_cat[node] = is_cat
        self.left[node] = left
        self.right[node] = right

    def freeze(self, kind, columns, params, n_classes=None):
        # renumber reachable nodes breadth first so pruned subtrees disappear
        order, remap = [0], {0: 0}
        i = 0
        while i < len(order):
            node = order[i]
            i += 1
            for child in (self.left[node], self.right[node]):
                if child >= 0:
                    remap[child] = len(order)
                    order.append(child)
        feature = np.array([self.feature[n] for n in order], dtype=np.int64)
        threshold = np.array([self.threshold[n] for n in order], dtype=np.float64)
        is_cat = np.array([self.is_cat[n] for n in order], dtype=np.bool_)
        left = np.array([remap[self.left[n]] if self.left[n] >= 0 else -1 for n in order], dtype=np.int64)
        right = np.array([remap[self.right[n]] if self.right[n] >= 0 else -1 for n in order], dtype=np.int64)
        value = np.array([self.value[n] for n in order], dtype=np.float64)
        counts = None
        if n_classes is not None:
            counts = np.array([self.counts[n] for n in order], dtype=np.float64).reshape(len(order), n_classes)
        return TreeModel(kind, columns, feature, threshold, is_cat, left, right, value, counts, params)


def _check_params(min_leaf, max_depth):
    if int(min_leaf) != min_leaf or min_leaf < 1:
        raise ValueError(f"min_leaf must be an integer >= 1, got {min_leaf!r}")
    if int(max_depth) != max_depth or max_depth < 0:
        raise ValueError(f"max_depth must be a non-negative integer, got {max_depth!r}")


def _sse(y):
    if y.shape[0] == 0:
        return 0.0
    d = y - y.mean()
    return float(d @ d)


def _midpoint(a, b):
    mid = a + (b - a) / 2.0
    return a if mid >= b else mid


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------

def _best_regression_split(X, y, kinds, min_leaf):
    """(gain, feature, threshold, is_cat) of the best cut, or None."""
    n = y.shape[0]
    parent = _sse(y)
    if parent <= 0.0:
        return None
    best = None
    for j, kind in enumerate(kinds):
        col = X[:, j]
        if kind == CATEGORICAL:
            for code in np.unique(col):
                mask = col == code
                nl = int(mask.sum())
                if nl < min_leaf or n - nl < min_leaf:
                    continue
                gain = parent - _sse(y[mask]) - _sse(y[~mask])
                if best is None or gain > best[0]:
                    best = (gain, j, float(code), True)
        else:
            order = np.argsort(col, kind="mergesort")
            xs = np.ascontiguousarray(col[order])
            ys = np.ascontiguousarray(y[order])
            gain, pos = kernels.best_sse_split(xs, ys, float(min_leaf))
            if pos < 0:
                continue
            if best is None or gain > best[0]:
                best = (float(gain), j, _midpoint(float(xs[pos - 1]), float(xs[pos])), False)
    if best is None or best[0] <= _REL_TOL * parent:
        return None
    return best


def _grow_regression(tree, X, y, rows, depth, kinds, min_leaf, max_depth):
    ys = y[rows]
    node = tree.add(stable_mean(ys))
    if rows.shape[0] < 2 * min_leaf or depth >= max_depth:
        return node
    split = _best_regression_split(X[rows], ys, kinds, min_leaf)
    if split is None:
        return node
    _, j, thr, is_cat = split
    col = X[rows, j]
    go_left = col == thr if is_cat else col <= thr
    left = _grow_regression(tree, X, y, rows[go_left], depth + 1, kinds, min_leaf, max_depth)
    right = _grow_regression(tree, X, y, rows[~go_left], depth + 1, kinds, min_leaf, max_depth)
    tree.split(node, j, thr, is_cat, left, right)
    return node


def _reduced_error_prune(tree, node, X, y, rows):
    """Collapse subtrees that do not beat a leaf on the holdout; return holdout SSE."""
    d = y[rows] - tree.value[node]
    leaf_err = float(d @ d)
    if tree.left[node] < 0:
        return leaf_err
    col = X[rows, tree.feature[node]]
    thr = tree.threshold[node]
    go_left = col == thr if tree.is_cat[node] else col <= thr
    err = (_reduced_error_prune(tree, tree.left[node], X, y, rows[go_left])
           + _reduced_error_prune(tree, tree.right[node], X, y, rows[~go_left]))
    if err >= leaf_err:
        tree.left[node] = tree.right[node] = -1
        tree.feature[node] = -1
        return leaf_err
    return err


def holdout_split(n: int, fraction: float, seed: int = PRUNE_SEED):
    """Deterministic (grow_rows, holdout_rows) partition of ``range(n)``."""
    n_hold = int(round(n * fraction)) if fraction > 0 else 0
    if n - n_hold < 1:
        n_hold = n - 1
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def train_regression_tree(data: TrainingMatrix, min_leaf: int = 2, max_depth: int = 20,
                          prune_fraction: float = 0.25) -> TreeModel:
    if data.target_kind != NUMERIC:
        raise ValueError("regression tree needs a numeric target")
    _check_params(min_leaf, max_depth)
    if not 0 <= prune_fraction < 1:
        raise ValueError(f"prune_fraction must lie in [0, 1), got {prune_fraction!r}")
    if data.n_rows < 2:
        raise ValueError("need at least 2 training rows")
    X, y = data.X, data.y
    columns = data.column_spec()
    grow, hold = holdout_split(data.n_rows, prune_fraction)
    tree = _Growth()
    _grow_regression(tree, X, y, grow, 0, columns.kinds, int(min_leaf), int(max_depth))
    if hold.shape[0]:
        _reduced_error_prune(tree, 0, X, y, hold)
    params = (("min_leaf", float(min_leaf)), ("max_depth", float(max_depth)),
              ("prune_fraction", float(prune_fraction)))
    return tree.freeze(REGRESSION_TREE, columns, params)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

def _entropy(counts):
    total = counts.sum()
    if total <= 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def _best_classification_split(X, codes, kinds, n_classes, min_leaf):
    n = codes.shape[0]
    total = np.bincount(codes, minlength=n_classes).astype(np.float64)
    h_all = _entropy(total)
    # best cut per attribute by information gain
    per_attr = []
    for j, kind in enumerate(kinds):
        col = X[:, j]
        best = None
        if kind == CATEGORICAL:
            for code in np.unique(col):
                mask = col == code
                nl = int(mask.sum())
                if nl < min_leaf or n - nl < min_leaf:
                    continue
                lc = np.bincount(codes[mask], minlength=n_classes).astype(np.float64)
                gain = h_all - (nl / n) * _entropy(lc) - ((n - nl) / n) * _entropy(total - lc)
                if gain > _REL_TOL and (best is None or gain > best[0]):
                    split_info = _entropy(np.array([nl, n - nl], dtype=np.float64))
                    best = (gain, split_info, j, float(code), True)
        else:
            order = np.argsort(col, kind="mergesort")
            xs = np.ascontiguousarray(col[order])
            cs = np.ascontiguousarray(codes[order])
            gains, infos = kernels.entropy_split_scan(xs, cs, n_classes, float(min_leaf))
            if gains.shape[0] == 0 or np.all(np.isnan(gains)):
                continue
            i = int(np.nanargmax(gains))
            if gains[i] > _REL_TOL:
                best = (float(gains[i]), float(infos[i]), j, _midpoint(float(xs[i]), float(xs[i + 1])), False)
        if best is not None:
            per_attr.append(best)
    if not per_attr:
        return None
    mean_gain = sum(b[0] for b in per_attr) / len(per_attr)
    chosen = None
    for gain, split_info, j, thr, is_cat in per_attr:
        if gain < mean_gain - _REL_TOL:
            continue
        ratio = gain / split_info if split_info > 0 else 0.0
        if chosen is None or ratio > chosen[0]:
            chosen = (ratio, j, thr, is_cat)
    return chosen


def _grow_classification(tree, X, codes, rows, depth, kinds, n_classes, min_leaf, max_depth):
    counts = np.bincount(codes[rows], minlength=n_classes).astype(np.float64)
    # argmax takes the first maximum; classes are sorted, so ties go lexicographically
    node = tree.add(float(np.argmax(counts)), counts)
    if rows.shape[0] < 2 * min_leaf or depth >= max_depth or np.count_nonzero(counts) <= 1:
        return node
    split = _best_classification_split(X[rows], codes[rows], kinds, n_classes, min_leaf)
    if split is None:
        return node
    _, j, thr, is_cat = split
    col = X[rows, j]
    go_left = col == thr if is_cat else col <= thr
    left = _grow_classification(tree, X, codes, rows[go_left], depth + 1, kinds, n_classes, min_leaf, max_depth)
    right = _grow_classification(tree, X, codes, rows[~go_left], depth + 1, kinds, n_classes, min_leaf, max_depth)
    tree.split(node, j, thr, is_cat, left, right)
    return node


def pessimistic_extra_errors(n: float, e: float, confidence: float = 0.25) -> float:
    """Extra errors added to ``e`` observed errors out of ``n`` (C4.5 upper bound)."""
    if e < 1:
        base = n * (1 - confidence ** (1.0 / n))
        if e == 0:
            return base
        return base + e * (pessimistic_extra_errors(n, 1.0, confidence) - base)
    if e + 0.5 >= n:
        return max(n - e, 0.0)
    z = NormalDist().inv_cdf(1 - confidence)
    f = (e + 0.5) / n
    r = (f + z * z / (2 * n) + z * math.sqrt(f / n - f * f / n + z * z / (4 * n * n))) / (1 + z * z / n)
    return r * n - e


def _leaf_estimate(counts, confidence):
    n = counts.sum()
    e = n - counts.max()
    return e + pessimistic_extra_errors(n, e, confidence)


def _pessimistic_prune(tree, node, confidence):
    counts = tree.counts[node]
    leaf_est = _leaf_estimate(counts, confidence)
    if tree.left[node] < 0:
        return leaf_est
    subtree_est = (_pessimistic_prune(tree, tree.left[node], confidence)
                   + _pessimistic_prune(tree, tree.right[node], confidence))
    if leaf_est <= subtree_est + 0.1:
        tree.left[node] = tree.right[node] = -1
        tree.feature[node] = -1
        return leaf_est
    return subtree_est


def train_classification_tree(data: TrainingMatrix, min_leaf: int = 2, max_depth: int = 20,
                              prune: bool = True, confidence: float = 0.25) -> TreeModel:
    if data.target_kind != CATEGORICAL:
        raise ValueError("classification tree needs a categorical target")
    _check_params(min_leaf, max_depth)
    if data.n_rows < 1:
        raise ValueError("need at least 1 training row")
    columns = data.column_spec()
    n_classes = len(columns.classes)
    X = data.X
    codes = data.y.astype(np.int64)
    tree = _Growth()
    _grow_classification(tree, X, codes, np.arange(data.n_rows), 0, columns.kinds, n_classes,
                         int(min_leaf), int(max_depth))
    if prune:
        _pessimistic_prune(tree, 0, confidence)
    params = (("min_leaf", float(min_leaf)), ("max_depth", float(max_depth)),
              ("confidence", float(confidence) if prune else 0.0))
    return tree.freeze(CLASSIFICATION_TREE, columns, params, n_classes=n_classes)
