"""Numba kernels for exact greedy tree growth and ensemble prediction.

All output dimensions of a boosting round are grown together, level by
level: each tree keeps its own nodes and statistics, but a pass over a
feature column touches every row once and updates every tree, so random
row access is shared across outputs.
"""

import os

# prefer a layer that tolerates kernels launched from several Python threads
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp tbb workqueue")

import numpy as np  # noqa: E402
import numba  # noqa: E402
from numba import njit, prange  # noqa: E402

# Columns with at most this many distinct values are searched through
# per-node value histograms instead of the sorted scan. Both are exact.
LOW_CARDINALITY = 64


@njit(cache=True)
def column_layout(X):
    """Per-column sort order and value codes shared by every tree grown on ``X``.

    Returns ``order`` and ``xs`` (row indices and values sorted per column),
    the distinct ``levels`` and their count, the ``mode`` code of each
    low-cardinality column, and a CSR list (``nz_ptr``, ``nz_rows``) of rows
    whose code differs from the mode, with their ``codes``.
    """
    n, p = X.shape
    order = np.empty((p, n), dtype=np.int32)
    xs = np.empty((p, n))
    n_levels = np.zeros(p, dtype=np.int64)
    levels = np.zeros((p, LOW_CARDINALITY))
    codes = np.zeros((p, n), dtype=np.uint8)
    mode = np.zeros(p, dtype=np.int64)
    for f in range(p):
        idx = np.argsort(X[:, f], kind="mergesort")
        for q in range(n):
            order[f, q] = idx[q]
            xs[f, q] = X[idx[q], f]
        u = 0
        for q in range(n):
            if q == 0 or xs[f, q] > xs[f, q - 1]:
                if u < LOW_CARDINALITY:
                    levels[f, u] = xs[f, q]
                u += 1
        n_levels[f] = u
        if u <= LOW_CARDINALITY:
            counts = np.zeros(u, dtype=np.int64)
            c = -1
            for q in range(n):
                if q == 0 or xs[f, q] > xs[f, q - 1]:
                    c += 1
                codes[f, order[f, q]] = c
                counts[c] += 1
            mode[f] = np.argmax(counts)
    nz_ptr = np.zeros(p + 1, dtype=np.int64)
    for f in range(p):
        k = 0
        if n_levels[f] <= LOW_CARDINALITY:
            for i in range(n):
                if codes[f, i] != mode[f]:
                    k += 1
        nz_ptr[f + 1] = nz_ptr[f] + k
    nz_rows = np.empty(nz_ptr[p], dtype=np.int32)
    for f in range(p):
        if n_levels[f] <= LOW_CARDINALITY:
            k = nz_ptr[f]
            for i in range(n):
                if codes[f, i] != mode[f]:
                    nz_rows[k] = i
                    k += 1
    return order, xs, levels, n_levels, codes, mode, nz_ptr, nz_rows


@njit(cache=True, nogil=True)
def grow_joint(X, order, xs, levels, n_levels, codes, mode, nz_ptr, nz_rows,
               R, max_depth, min_leaf, min_gain, cap):
    """Grow one tree per column of ``R`` on the shared design matrix ``X``.

    Returns node arrays of shape (n_outputs, cap), node counts, and the leaf
    reached by every training row in every tree, shape (n, n_outputs).
    """
    n, p = X.shape
    d = R.shape[1]
    feature = np.full((d, cap), -1, dtype=np.int64)
    threshold = np.zeros((d, cap))
    left = np.full((d, cap), -1, dtype=np.int64)
    right = np.full((d, cap), -1, dtype=np.int64)
    value = np.zeros((d, cap))
    node_of = np.zeros((n, d), dtype=np.int32)
    n_nodes = np.ones(d, dtype=np.int64)

    frontier = np.zeros((d, cap), dtype=np.int64)
    next_frontier = np.zeros((d, cap), dtype=np.int64)
    n_front = np.ones(d, dtype=np.int64)
    n_split = np.zeros(d, dtype=np.int64)

    cnt = np.zeros((d, cap), dtype=np.int64)
    tot = np.zeros((d, cap))
    rmin = np.zeros((d, cap))
    rmax = np.zeros((d, cap))
    ctot = np.zeros((d, cap))
    splittable = np.zeros((d, cap), dtype=np.bool_)
    local = np.full((d, cap), -1, dtype=np.int64)
    best_score = np.zeros((d, cap))
    best_feat = np.full((d, cap), -1, dtype=np.int64)
    best_thr = np.zeros((d, cap))
    st = np.zeros(d * cap * 8)
    rc = np.zeros((n, d))
    hist_c = np.zeros(0, dtype=np.int64)
    hist_s = np.zeros(0)

    level = 0
    while level < max_depth:
        any_front = False
        for j in range(d):
            if n_front[j] > 0:
                any_front = True
        if not any_front:
            break

        for j in range(d):
            for k in range(n_nodes[j]):
                cnt[j, k] = 0
                tot[j, k] = 0.0
                rmin[j, k] = np.inf
                rmax[j, k] = -np.inf
                splittable[j, k] = False
                ctot[j, k] = 0.0
                local[j, k] = -1
        for i in range(n):
            for j in range(d):
                nd = node_of[i, j]
                v = R[i, j]
                cnt[j, nd] += 1
                tot[j, nd] += v
                if v < rmin[j, nd]:
                    rmin[j, nd] = v
                if v > rmax[j, nd]:
                    rmax[j, nd] = v
        max_split = 0
        for j in range(d):
            n_split[j] = 0
            for k in range(n_front[j]):
                nd = frontier[j, k]
                best_feat[j, nd] = -1
                if cnt[j, nd] >= 2 * min_leaf and rmax[j, nd] > rmin[j, nd]:
                    splittable[j, nd] = True
                    local[j, nd] = n_split[j]
                    n_split[j] += 1
            if n_split[j] > max_split:
                max_split = n_split[j]
        if max_split == 0:
            break
        # centred residuals keep the gain free of cancellation error
        for i in range(n):
            for j in range(d):
                nd = node_of[i, j]
                if splittable[j, nd]:
                    rc[i, j] = R[i, j] - tot[j, nd] / cnt[j, nd]
                    ctot[j, nd] += rc[i, j]
                else:
                    rc[i, j] = 0.0
        for j in range(d):
            for k in range(n_front[j]):
                nd = frontier[j, k]
                if splittable[j, nd]:
                    best_score[j, nd] = ctot[j, nd] * ctot[j, nd] / cnt[j, nd] + min_gain
        if hist_c.shape[0] < d * max_split * LOW_CARDINALITY:
            hist_c = np.zeros(d * max_split * LOW_CARDINALITY, dtype=np.int64)
            hist_s = np.zeros(d * max_split * LOW_CARDINALITY)

        for f in range(p):
            u = n_levels[f]
            if u < 2:
                continue
            if u <= LOW_CARDINALITY:
                m = mode[f]
                for k in range(d * max_split * u):
                    hist_c[k] = 0
                    hist_s[k] = 0.0
                for t in range(nz_ptr[f], nz_ptr[f + 1]):
                    i = nz_rows[t]
                    b = np.int64(codes[f, i])
                    for j in range(d):
                        nd = node_of[i, j]
                        if splittable[j, nd]:
                            h = (j * max_split + local[j, nd]) * u + b
                            hist_c[h] += 1
                            hist_s[h] += rc[i, j]
                for j in range(d):
                    for k in range(n_front[j]):
                        nd = frontier[j, k]
                        if not splittable[j, nd]:
                            continue
                        b0 = (j * max_split + local[j, nd]) * u
                        rest_c = cnt[j, nd]
                        rest_s = ctot[j, nd]
                        for b in range(u):
                            if b != m:
                                rest_c -= hist_c[b0 + b]
                                rest_s -= hist_s[b0 + b]
                        hist_c[b0 + m] = rest_c
                        hist_s[b0 + m] = rest_s
                        c = 0
                        s_left = 0.0
                        last = -1
                        for b in range(u):
                            hc = hist_c[b0 + b]
                            if hc == 0:
                                continue
                            if c >= min_leaf:
                                nr = cnt[j, nd] - c
                                if nr >= min_leaf:
                                    s_right = ctot[j, nd] - s_left
                                    score = s_left * s_left / c + s_right * s_right / nr
                                    if score > best_score[j, nd]:
                                        best_score[j, nd] = score
                                        best_feat[j, nd] = f
                                        lo = levels[f, last]
                                        hi = levels[f, b]
                                        thr = 0.5 * (lo + hi)
                                        if thr >= hi:
                                            thr = lo
                                        best_thr[j, nd] = thr
                            c += hc
                            s_left += hist_s[b0 + b]
                            last = b
                continue

            # one 8-slot record per (tree, node): count_left, sum_left,
            # last value, count, centred total, best score, splittable
            for j in range(d):
                for k in range(n_front[j]):
                    nd = frontier[j, k]
                    b = (j * cap + nd) * 8
                    st[b] = 0.0
                    st[b + 1] = 0.0
                    st[b + 3] = cnt[j, nd]
                    st[b + 4] = ctot[j, nd]
                    st[b + 5] = best_score[j, nd]
                    st[b + 6] = 1.0 if splittable[j, nd] else 0.0
            for q in range(n):
                i = order[f, q]
                v = xs[f, q]
                for j in range(d):
                    nd = node_of[i, j]
                    b = (j * cap + nd) * 8
                    if st[b + 6] == 0.0:
                        continue
                    c = st[b]
                    if c >= min_leaf and v > st[b + 2]:
                        nr = st[b + 3] - c
                        if nr >= min_leaf:
                            s_left = st[b + 1]
                            s_right = st[b + 4] - s_left
                            score = s_left * s_left / c + s_right * s_right / nr
                            if score > st[b + 5]:
                                st[b + 5] = score
                                best_feat[j, nd] = f
                                thr = 0.5 * (st[b + 2] + v)
                                if thr >= v:
                                    thr = st[b + 2]
                                best_thr[j, nd] = thr
                    st[b] = c + 1.0
                    st[b + 1] += rc[i, j]
                    st[b + 2] = v
            for j in range(d):
                for k in range(n_front[j]):
                    nd = frontier[j, k]
                    best_score[j, nd] = st[(j * cap + nd) * 8 + 5]

        for j in range(d):
            new_front = 0
            for k in range(n_front[j]):
                nd = frontier[j, k]
                if best_feat[j, nd] >= 0:
                    a = n_nodes[j]
                    feature[j, nd] = best_feat[j, nd]
                    threshold[j, nd] = best_thr[j, nd]
                    left[j, nd] = a
                    right[j, nd] = a + 1
                    next_frontier[j, new_front] = a
                    next_frontier[j, new_front + 1] = a + 1
                    new_front += 2
                    n_nodes[j] = a + 2
            for k in range(new_front):
                frontier[j, k] = next_frontier[j, k]
            n_front[j] = new_front
        for i in range(n):
            for j in range(d):
                nd = node_of[i, j]
                f = feature[j, nd]
                if f >= 0:
                    if X[i, f] <= threshold[j, nd]:
                        node_of[i, j] = left[j, nd]
                    else:
                        node_of[i, j] = right[j, nd]
        level += 1

    for j in range(d):
        for k in range(n_nodes[j]):
            cnt[j, k] = 0
            tot[j, k] = 0.0
    for i in range(n):
        for j in range(d):
            nd = node_of[i, j]
            cnt[j, nd] += 1
            tot[j, nd] += R[i, j]
    for j in range(d):
        for k in range(n_nodes[j]):
            if feature[j, k] < 0:
                value[j, k] = tot[j, k] / cnt[j, k]
    return feature, threshold, left, right, value, n_nodes, node_of


@njit(cache=True, parallel=True)
def predict_packed(X, feature, threshold, left, right, value, roots, dims,
                   shrinkage, out):
    """Add ``shrinkage * tree(x)`` into ``out[:, dims[t]]`` for every packed tree.

    Trees are visited in packed order, so each output column accumulates its
    trees in the order they were appended.
    """
    n = X.shape[0]
    n_trees = roots.shape[0]
    for i in prange(n):
        for t in range(n_trees):
            nd = roots[t]
            while feature[nd] >= 0:
                if X[i, feature[nd]] <= threshold[nd]:
                    nd = left[nd]
                else:
                    nd = right[nd]
            out[i, dims[t]] += shrinkage * value[nd]
    return out


@njit(cache=True)
def tree_depth(feature, left, right):
    # children always follow their parent in node order
    depth = np.zeros(feature.shape[0], dtype=np.int64)
    best = 0
    for k in range(feature.shape[0]):
        if feature[k] >= 0:
            depth[left[k]] = depth[k] + 1
            depth[right[k]] = depth[k] + 1
            if depth[k] + 1 > best:
                best = depth[k] + 1
    return best


@njit(cache=True)
def complete_tree(feature, threshold, left, right, value, depth):
    """Pad a tree to a complete tree of the given depth in heap order.

    A leaf above the bottom level becomes a chain of pass-through nodes
    (threshold ``+inf`` always routes left) ending in copies of its value,
    so every row takes exactly ``depth`` comparisons.
    """
    m = (1 << depth) - 1
    f = np.zeros(m, dtype=np.int64)
    th = np.full(m, np.inf)
    leaf = np.zeros(m + 1)
    src = np.zeros(2 * m + 1, dtype=np.int64)
    for k in range(2 * m + 1):
        nd = src[k]
        if k < m:
            if feature[nd] >= 0:
                f[k] = feature[nd]
                th[k] = threshold[nd]
                src[2 * k + 1] = left[nd]
                src[2 * k + 2] = right[nd]
            else:
                src[2 * k + 1] = nd
                src[2 * k + 2] = nd
        else:
            leaf[k - m] = value[nd]
    return f, th, leaf


ROW_BLOCK = 256


@njit(cache=True, parallel=True)
def predict_complete(X, feature, threshold, leaf, node_off, leaf_off, depth, dims,
                     shrinkage, out):
    """Same contract as :func:`predict_packed` for complete heap-ordered trees."""
    n = X.shape[0]
    n_trees = dims.shape[0]
    n_blocks = (n + ROW_BLOCK - 1) // ROW_BLOCK
    for b in prange(n_blocks):
        lo = b * ROW_BLOCK
        hi = min(n, lo + ROW_BLOCK)
        for t in range(n_trees):
            no = node_off[t]
            lf = leaf_off[t] - ((1 << depth[t]) - 1)
            dt = depth[t]
            j = dims[t]
            for i in range(lo, hi):
                k = 0
                for _ in range(dt):
                    k = 2 * k + 1 + np.int64(X[i, feature[no + k]] > threshold[no + k])
                out[i, j] += shrinkage * leaf[lf + k]
    return out


@njit(cache=True, parallel=True)
def _touch(a):
    s = 0.0
    for i in prange(a.size):
        s += a[i]
    return s


def concurrent_safe() -> bool:
    """Whether parallel kernels may run from several Python threads at once."""
    _touch(np.zeros(1))
    return numba.threading_layer() != "workqueue"
