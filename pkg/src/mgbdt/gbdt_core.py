"""CART regression trees and multi-output gradient boosting under squared loss.

Every forward and inverse mapping of the stack is a :class:`GBDTRegressor`:
one ordered forest per output dimension, each tree fit to the residuals of
that dimension. Splits are found by exact greedy search over all midpoints
between consecutive distinct feature values.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels


@dataclass(frozen=True)
class TreeGrowthParams:
    """Stopping rules for a single tree. ``max_depth=None`` grows until pure."""

    max_depth: int | None = 5
    min_samples_leaf: int = 1
    min_gain: float = 1e-12

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.min_gain < 0:
            raise ValueError("min_gain must be >= 0")


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Binary tree in flat-array form.

    Node ``k`` is internal when ``feature[k] >= 0``; rows with
    ``x[feature[k]] <= threshold[k]`` go to ``left[k]``, the rest to
    ``right[k]``. Leaves carry ``value[k]``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    max_depth: int | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for k in range(self.n_nodes):
            if self.feature[k] >= 0:
                depths[self.left[k]] = depths[self.right[k]] = depths[k] + 1
        return int(depths.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            idx = rows[active]
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


@dataclass(eq=False)
class GBDTRegressor:
    """Additive ensemble ``base + shrinkage * sum_k tree_k(x)`` per output.

    ``forests[d]`` is the ordered tree list for output ``d``. Trees are
    never modified once appended; :func:`boost_more` returns a new
    regressor that shares the existing trees.
    """

    n_features: int
    base: np.ndarray
    shrinkage: float
    forests: list[list[RegressionTree]]
    _pack: dict = field(default_factory=dict, repr=False)

    @property
    def output_dim(self) -> int:
        return len(self.base)

    @property
    def n_trees(self) -> int:
        return sum(len(f) for f in self.forests)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return predict(self, X)

    def _packed(self):
        # Flat tree pool for the prediction kernels, extended incrementally.
        pk = self._pack
        if not pk:
            pk.update(_empty_pack(self.output_dim, complete=True))
        new = [(d, t) for d, forest in enumerate(self.forests)
               for t in forest[pk["counts"][d]:]]
        if not new:
            return pk
        depths = [_kernels.tree_depth(t.feature, t.left, t.right) for _, t in new]
        if pk["complete"] and max(depths) > COMPLETE_MAX_DEPTH:
            pk.clear()
            pk.update(_empty_pack(self.output_dim, complete=False))
            new = [(d, t) for d, forest in enumerate(self.forests) for t in forest]
        parts = [[] for _ in pk["arrays"]]
        dims = [d for d, _ in new]
        if pk["complete"]:
            node_off, leaf_off, depth = [], [], []
            n_int, n_leaf = pk["n"]
            for (_, t), dt in zip(new, depths):
                for part, a in zip(parts, _kernels.complete_tree(
                        t.feature, t.threshold, t.left, t.right, t.value, dt)):
                    part.append(a)
                node_off.append(n_int)
                leaf_off.append(n_leaf)
                depth.append(dt)
                n_int += (1 << dt) - 1
                n_leaf += 1 << dt
            pk["n"] = (n_int, n_leaf)
            meta = (node_off, leaf_off, depth)
        else:
            roots = []
            offset = pk["n"]
            for _, t in new:
                parts[0].append(t.feature)
                parts[1].append(t.threshold)
                parts[2].append(np.where(t.left >= 0, t.left + offset, -1))
                parts[3].append(np.where(t.right >= 0, t.right + offset, -1))
                parts[4].append(t.value)
                roots.append(offset)
                offset += t.n_nodes
            pk["n"] = offset
            meta = (roots,)
        pk["arrays"] = [np.concatenate([a] + p) for a, p in zip(pk["arrays"], parts)]
        pk["meta"] = [np.concatenate([a, np.asarray(m, np.int64)]) for a, m in zip(pk["meta"], meta)]
        pk["dims"] = np.concatenate([pk["dims"], np.asarray(dims, np.int64)])
        pk["counts"] = [len(f) for f in self.forests]
        return pk


# Trees deeper than this are predicted by pointer chasing instead of padding.
COMPLETE_MAX_DEPTH = 12


def _empty_pack(d: int, complete: bool) -> dict:
    i64, f64 = np.empty(0, np.int64), np.empty(0)
    if complete:
        arrays, meta, n = [i64, f64, f64], [i64, i64, i64], (0, 0)
    else:
        arrays, meta, n = [i64, f64, i64, i64, f64], [i64], 0
    return dict(counts=[0] * d, n=n, complete=complete, arrays=arrays, meta=meta, dims=i64)


def n_threads() -> int:
    """Worker count from ``MGBDT_THREADS`` (0 or unset means all cores)."""
    try:
        n = int(os.environ.get("MGBDT_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def _check_xy(features, targets):
    X = np.ascontiguousarray(features, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(X) == 0:
        raise ValueError("empty training set")
    if len(Y) != len(X):
        raise ValueError(f"row mismatch: {len(X)} feature rows, {len(Y)} target rows")
    if not (np.isfinite(X).all() and np.isfinite(Y).all()):
        raise ValueError("non-finite input")
    return X, Y


def _node_capacity(n: int, max_depth: int | None) -> int:
    cap = 2 * n - 1
    if max_depth is not None and max_depth < 62:
        cap = min(cap, 2 ** (max_depth + 1) - 1)
    return cap


def _sort_order(X: np.ndarray):
    return _kernels.column_layout(X)


def _grow(X, layout, R, params: TreeGrowthParams):
    depth = params.max_depth if params.max_depth is not None else 2 ** 62
    cap = _node_capacity(len(X), params.max_depth)
    R = np.ascontiguousarray(R)
    d = R.shape[1]

    def run(cols):
        return _kernels.grow_joint(X, *layout, np.ascontiguousarray(R[:, cols]), depth,
                                   params.min_samples_leaf, float(params.min_gain), cap)

    chunks = np.array_split(np.arange(d), min(n_threads(), d))
    if len(chunks) == 1:
        parts = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(len(chunks)) as pool:
            parts = list(pool.map(run, chunks))
    trees = []
    for feature, threshold, left, right, value, n_nodes, _ in parts:
        for j, m in enumerate(n_nodes):
            trees.append(RegressionTree(feature[j, :m].copy(), threshold[j, :m].copy(),
                                        left[j, :m].copy(), right[j, :m].copy(),
                                        value[j, :m].copy(), params.max_depth))
    node_of = np.concatenate([part[6] for part in parts], axis=1)
    return trees, node_of


def fit_tree(features, residuals, params: TreeGrowthParams = TreeGrowthParams()) -> RegressionTree:
    """Fit a single regression tree to ``residuals`` by exact greedy search.

    Among equal-gain candidates the lowest feature index wins, then the
    smallest threshold. Leaf values are the mean residual of their rows.
    """
    X, R = _check_xy(features, residuals)
    if R.shape[1] != 1:
        raise ValueError("residuals must be a vector")
    trees, _ = _grow(X, _sort_order(X), R, params)
    return trees[0]


def _boost(model: GBDTRegressor, X, Y, rounds, params, pred):
    order = _sort_order(X)
    forests = [list(f) for f in model.forests]
    gamma = model.shrinkage
    for _ in range(rounds):
        trees, node_of = _grow(X, order, Y - pred, params)
        for j, tree in enumerate(trees):
            forests[j].append(tree)
            pred[:, j] += gamma * tree.value[node_of[:, j]]
    # share the packed cache prefix so prediction is incremental across epochs
    out = GBDTRegressor(model.n_features, model.base, gamma, forests, {})
    if model._pack:
        out._pack.update(model._pack, counts=list(model._pack["counts"]))
    return out, pred


def fit_boosted(features, targets, rounds: int, shrinkage: float = 0.1,
                params: TreeGrowthParams = TreeGrowthParams()) -> GBDTRegressor:
    """Boost ``rounds`` trees per output dimension from the target mean."""
    X, Y = _check_xy(features, targets)
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    if not 0 < shrinkage <= 1:
        raise ValueError("shrinkage must lie in (0, 1]")
    # contiguous rows make each dimension's mean independent of the others
    base = np.ascontiguousarray(Y.T).mean(axis=1)
    model = GBDTRegressor(X.shape[1], base, float(shrinkage), [[] for _ in range(Y.shape[1])])
    pred = np.tile(base, (len(X), 1))
    return _boost(model, X, Y, rounds, params, pred)[0]


def boost_more(model: GBDTRegressor, features, targets, rounds: int,
               params: TreeGrowthParams = TreeGrowthParams()) -> GBDTRegressor:
    """Warm start: append ``rounds`` trees per dimension fit to the current residuals."""
    return boost_more_predict(model, features, targets, rounds, params)[0]


def boost_more_predict(model: GBDTRegressor, features, targets, rounds: int,
                       params: TreeGrowthParams = TreeGrowthParams(), current=None):
    """:func:`boost_more` that also returns the new model's prediction on ``features``.

    ``current``, when given, must equal ``predict(model, features)``; it
    saves recomputing it. The returned prediction is bit-identical to
    ``predict(new_model, features)``.
    """
    X, Y = _check_xy(features, targets)
    if Y.shape[1] != model.output_dim:
        raise ValueError(f"target width {Y.shape[1]} != model output_dim {model.output_dim}")
    if X.shape[1] != model.n_features:
        raise ValueError(f"feature width {X.shape[1]} != model width {model.n_features}")
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    pred = predict(model, X) if current is None else np.array(current, dtype=np.float64)
    if rounds == 0:
        return model, pred
    return _boost(model, X, Y, rounds, params, pred)


def predict(model: GBDTRegressor, features) -> np.ndarray:
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(f"expected feature width {model.n_features}, got shape {X.shape}")
    out = np.tile(model.base, (len(X), 1))
    if model.n_trees == 0 or len(X) == 0:
        return out
    if not np.isfinite(X).all():
        raise ValueError("non-finite input")
    pk = model._packed()
    if pk["complete"]:
        return _kernels.predict_complete(X, *pk["arrays"], *pk["meta"], pk["dims"],
                                         model.shrinkage, out)
    return _kernels.predict_packed(X, *pk["arrays"], *pk["meta"], pk["dims"],
                                   model.shrinkage, out)
