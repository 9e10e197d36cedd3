"""Numeric inner loops shared by the learners.

Every kernel exists twice: ``*_np`` is vectorised numpy, ``*_nb`` is the
same loop compiled with numba. The public names at the bottom of the module
point at one or the other according to :data:`appnetwatch._accel.USE_NUMBA`.

Sums are accumulated left to right in both versions (``np.cumsum`` rather than
``np.sum``) so the regression kernels agree bit for bit across backends.
"""

import math

import numpy as np

from ._accel import HAVE_NUMBA, USE_NUMBA, jit

__all__ = [
    "best_sse_split",
    "entropy_split_scan",
    "loo_sse",
    "route_rows",
    "NUMPY_KERNELS",
    "NUMBA_KERNELS",
    "backend",
]


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def best_sse_split_np(xs, ys, min_leaf):
    """Best variance-reduction cut of presorted ``(xs, ys)``.

    Returns ``(gain, pos)`` where the left child is ``[:pos]``. ``pos`` is -1
    when no cut leaves ``min_leaf`` rows on both sides of a change in ``xs``.
    The first maximum wins, i.e. the lowest threshold on ties.
    """
    n = ys.shape[0]
    if n < 2:
        return -np.inf, -1
    mean = np.cumsum(ys)[-1] / n
    yc = ys - mean
    c1 = np.cumsum(yc)
    c2 = np.cumsum(yc * yc)
    total = c1[-1]
    total2 = c2[-1]
    sse_parent = total2 - total * total / n
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    lsum = c1[:-1]
    lsq = c2[:-1]
    rsum = total - lsum
    rsq = total2 - lsq
    gain = sse_parent - (lsq - lsum * lsum / nl) - (rsq - rsum * rsum / nr)
    valid = (nl >= min_leaf) & (nr >= min_leaf) & (xs[1:] > xs[:-1])
    if not valid.any():
        return -np.inf, -1
    gain = np.where(valid, gain, -np.inf)
    i = int(np.argmax(gain))
    return float(gain[i]), i + 1


def _entropy_rows_np(counts, totals):
    out = np.zeros(counts.shape[0])
    safe = np.where(totals > 0, totals, 1.0)
    for j in range(counts.shape[1]):
        p = counts[:, j] / safe
        term = np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
        out = out - term
    return out


def entropy_split_scan_np(xs, codes, n_classes, min_leaf):
    """Information gain and split information for every cut position.

    ``xs`` sorted ascending, ``codes`` the class index of each row in the same
    order. Entry ``i`` describes the cut with left child ``[:i + 1]``; invalid
    cuts carry ``nan`` gain.
    """
    n = codes.shape[0]
    if n < 2:
        return np.full(0, np.nan), np.full(0, np.nan)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), codes] = 1.0
    left = np.cumsum(onehot, axis=0)[:-1]
    total = np.cumsum(onehot, axis=0)[-1]
    right = total - left
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    h_all = _entropy_rows_np(total[None, :], np.array([float(n)]))[0]
    gain = h_all - (nl / n) * _entropy_rows_np(left, nl) - (nr / n) * _entropy_rows_np(right, nr)
    split_info = _entropy_rows_np(np.stack([nl, nr], axis=1), np.full(n - 1, float(n)))
    valid = (nl >= min_leaf) & (nr >= min_leaf) & (xs[1:] > xs[:-1])
    gain = np.where(valid, gain, np.nan)
    return gain, split_info


def loo_sse_np(keys, ys):
    """Leave-one-out squared error of cell-mean prediction.

    Rows sharing a key form a cell; each row is predicted by the mean of the
    other rows in its cell, or by the mean of all other rows when it is alone.
    """
    n = ys.shape[0]
    _, inv = np.unique(keys, return_inverse=True)
    sums = np.bincount(inv, weights=ys)
    counts = np.bincount(inv)
    total = np.cumsum(ys)[-1]
    cs = sums[inv]
    cc = counts[inv].astype(np.float64)
    alone = cc <= 1.0
    pred = np.where(alone, (total - ys) / (n - 1), (cs - ys) / np.where(alone, 2.0, cc - 1.0))
    err = pred - ys
    return float(np.cumsum(err * err)[-1])


def route_rows_np(feature, threshold, is_cat, left, right, X):
    """Leaf index reached by each row of ``X`` in a flattened binary tree."""
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    while True:
        internal = left[node] >= 0
        if not internal.any():
            return node
        idx = rows[internal]
        cur = node[idx]
        vals = X[idx, feature[cur]]
        go_left = np.where(is_cat[cur], vals == threshold[cur], vals <= threshold[cur])
        node[idx] = np.where(go_left, left[cur], right[cur])


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def best_sse_split_py(xs, ys, min_leaf):
    n = ys.shape[0]
    if n < 2:
        return -np.inf, -1
    acc = 0.0
    for i in range(n):
        acc += ys[i]
    mean = acc / n
    c1 = np.empty(n)
    c2 = np.empty(n)
    s1 = 0.0
    s2 = 0.0
    for i in range(n):
        d = ys[i] - mean
        s1 += d
        s2 += d * d
        c1[i] = s1
        c2[i] = s2
    total = c1[n - 1]
    total2 = c2[n - 1]
    sse_parent = total2 - total * total / n
    best = -np.inf
    best_pos = -1
    for i in range(1, n):
        nl = float(i)
        nr = n - nl
        if nl < min_leaf or nr < min_leaf or not xs[i] > xs[i - 1]:
            continue
        lsum = c1[i - 1]
        lsq = c2[i - 1]
        rsum = total - lsum
        rsq = total2 - lsq
        g = sse_parent - (lsq - lsum * lsum / nl) - (rsq - rsum * rsum / nr)
        if g > best:
            best = g
            best_pos = i
    return best, best_pos


def _entropy_impl(counts, total):
    h = 0.0
    if total <= 0:
        return h
    for j in range(counts.shape[0]):
        p = counts[j] / total
        if p > 0:
            h -= p * math.log2(p)
    return h


_entropy_py = jit(_entropy_impl)


def entropy_split_scan_py(xs, codes, n_classes, min_leaf):
    n = codes.shape[0]
    gain = np.full(max(n - 1, 0), np.nan)
    split_info = np.full(max(n - 1, 0), np.nan)
    if n < 2:
        return gain, split_info
    total = np.zeros(n_classes)
    for i in range(n):
        total[codes[i]] += 1.0
    h_all = _entropy_py(total, float(n))
    left = np.zeros(n_classes)
    pair = np.zeros(2)
    for i in range(n - 1):
        left[codes[i]] += 1.0
        nl = float(i + 1)
        nr = n - nl
        pair[0] = nl
        pair[1] = nr
        split_info[i] = _entropy_py(pair, float(n))
        if nl < min_leaf or nr < min_leaf or not xs[i + 1] > xs[i]:
            continue
        right = total - left
        gain[i] = h_all - (nl / n) * _entropy_py(left, nl) - (nr / n) * _entropy_py(right, nr)
    return gain, split_info


def loo_sse_py(keys, ys):
    n = ys.shape[0]
    order = np.argsort(keys, kind="mergesort")
    total = 0.0
    for i in range(n):
        total += ys[i]
    cell_sum = np.empty(n)
    cell_cnt = np.empty(n)
    start = 0
    while start < n:
        stop = start
        key = keys[order[start]]
        s = 0.0
        while stop < n and keys[order[stop]] == key:
            s += ys[order[stop]]
            stop += 1
        for j in range(start, stop):
            cell_sum[order[j]] = s
            cell_cnt[order[j]] = stop - start
        start = stop
    err = 0.0
    for i in range(n):
        if cell_cnt[i] <= 1.0:
            pred = (total - ys[i]) / (n - 1)
        else:
            pred = (cell_sum[i] - ys[i]) / (cell_cnt[i] - 1.0)
        d = pred - ys[i]
        err += d * d
    return err


def route_rows_py(feature, threshold, is_cat, left, right, X):
    out = np.empty(X.shape[0], dtype=np.int64)
    for r in range(X.shape[0]):
        node = 0
        while left[node] >= 0:
            v = X[r, feature[node]]
            if is_cat[node]:
                go_left = v == threshold[node]
            else:
                go_left = v <= threshold[node]
            node = left[node] if go_left else right[node]
        out[r] = node
    return out


NUMPY_KERNELS = {
    "best_sse_split": best_sse_split_np,
    "entropy_split_scan": entropy_split_scan_np,
    "loo_sse": loo_sse_np,
    "route_rows": route_rows_np,
}

if HAVE_NUMBA:
    best_sse_split_nb = jit(best_sse_split_py)
    entropy_split_scan_nb = jit(entropy_split_scan_py)
    loo_sse_nb = jit(loo_sse_py)
    route_rows_nb = jit(route_rows_py)

    NUMBA_KERNELS = {
        "best_sse_split": best_sse_split_nb,
        "entropy_split_scan": entropy_split_scan_nb,
        "loo_sse": loo_sse_nb,
        "route_rows": route_rows_nb,
    }
else:  # pragma: no cover
    NUMBA_KERNELS = {}

_active = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS

best_sse_split = _active["best_sse_split"]
entropy_split_scan = _active["entropy_split_scan"]
loo_sse = _active["loo_sse"]
route_rows = _active["route_rows"]


def backend():
    """Name of the kernel backend in use: ``"numba"`` or ``"numpy"``."""
    return "numba" if _active is NUMBA_KERNELS else "numpy"
