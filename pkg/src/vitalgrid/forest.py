"""CART decision trees and random forests, written from scratch on numpy.

Trees are stored as flat node arrays (see :class:`Tree`), which doubles as
the on-disk serialization format. Split search scans every candidate
feature of a node in one vectorized pass: per feature the samples are
sorted and child impurities for every boundary between distinct values are
computed from prefix sums. Impurity is the sum of squared errors for
regression and the sample-weighted Gini index for classification.

Tie handling is part of the contract: candidate splits whose score lies
within ``TIE_REL_TOL * (1 + |best|)`` of the best score are treated as
exactly tied and broken by lowest feature index, then lowest threshold,
so results do not depend on summation order.

Randomness: tree i draws from ``substream(seed, DOMAIN_TREE, i)`` (PCG64,
documented in :mod:`vitalgrid.randomness`). Each tree consumes its stream
in a fixed order — bootstrap indices first, then per-node feature subsets
in depth-first preorder — so forests are bit-identical for a given seed
regardless of worker count.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.exceptions import NotFittedError

from .errors import ConfigError, DataError
from .randomness import DOMAIN_TREE, substream
from .validation import as_binary_labels, as_float_matrix, as_float_vector, check_n_features, check_same_length

REGRESSION = "regression"
CLASSIFICATION = "classification"

# Scores closer than this (relative) are considered exact ties.
TIE_REL_TOL = 1e-9
# A split must beat the parent impurity by more than this (relative) to be kept.
MIN_IMPROVEMENT_REL = 1e-12

LEAF = -1
FOREST_FORMAT = "vitalgrid-forest-nodes"
FOREST_FORMAT_VERSION = 1


def resolve_mtry(n_features: int, max_features) -> int:
    """Number of candidate features per node: 'sqrt', 'third', 'all', an int,
    or None (= all features)."""
    if max_features is None or max_features == "all":
        return n_features
    if max_features == "sqrt":
        return min(n_features, math.ceil(math.sqrt(n_features)))
    if max_features == "third":
        return min(n_features, math.ceil(n_features / 3))
    m = int(max_features)
    if m < 1:
        raise ConfigError("max_features must be >= 1")
    return min(n_features, m)


def _impurity_total(y: np.ndarray, task: str) -> float:
    """Node impurity on the same scale as split scores (SSE, or weighted Gini)."""
    n = len(y)
    if n == 0:
        return 0.0
    if task == REGRESSION:
        s = y.sum()
        return float((y * y).sum() - s * s / n)
    p = y.sum() / n
    return float(1.0 - p * p - (1.0 - p) * (1.0 - p))


def _split_scores_matrix(Xs: np.ndarray, y: np.ndarray, task: str, min_leaf: int):
    """Candidate scores for every boundary of every column of Xs.

    Returns (xs_sorted, scores) where scores[i, j] is the weighted child
    impurity of splitting column j between sorted rows i and i+1; +inf where
    the boundary is invalid (equal adjacent values or a child < min_leaf).
    """
    n, m = Xs.shape
    order = np.argsort(Xs, axis=0)
    xs = np.take_along_axis(Xs, order, axis=0)
    ys = y[order]  # (n, m)

    k = np.arange(1, n, dtype=np.float64)[:, None]  # left-child sizes
    valid = xs[1:] != xs[:-1]
    if min_leaf > 1:
        valid &= (k >= min_leaf) & (n - k >= min_leaf)

    if task == REGRESSION:
        c1 = np.cumsum(ys, axis=0)[:-1]
        c2 = np.cumsum(ys * ys, axis=0)[:-1]
        t1 = y.sum()
        t2 = float((y * y).sum())
        sse_left = c2 - c1 * c1 / k
        sse_right = (t2 - c2) - (t1 - c1) ** 2 / (n - k)
        scores = sse_left + sse_right
    else:
        pos_left = np.cumsum(ys, axis=0)[:-1]
        total_pos = y.sum()
        pos_right = total_pos - pos_left
        nl, nr = k, n - k
        gini_l = nl - (pos_left * pos_left + (nl - pos_left) ** 2) / nl
        gini_r = nr - (pos_right * pos_right + (nr - pos_right) ** 2) / nr
        scores = (gini_l + gini_r) / n

    return xs, np.where(valid, scores, np.inf)


def split_scores(x: np.ndarray, y: np.ndarray, task: str, min_leaf: int = 1):
    """All candidate (threshold, score) pairs for a single feature.

    Exposed so the incremental sweep can be checked against naive
    per-candidate recomputation. Invalid boundaries are dropped.
    """
    x = as_float_vector(x, "x")
    y = as_float_vector(y, "y")
    check_same_length(x, y)
    if len(x) < 2:
        return np.zeros(0), np.zeros(0)
    xs, scores = _split_scores_matrix(x.reshape(-1, 1), y, task, min_leaf)
    keep = np.isfinite(scores[:, 0])
    thresholds = (xs[:-1, 0] + xs[1:, 0]) / 2.0
    return thresholds[keep], scores[keep, 0]


def _best_split_on(X: np.ndarray, y: np.ndarray, idx: np.ndarray, feats: np.ndarray,
                   task: str, min_leaf: int):
    """Best (feature, threshold, score) over node rows ``idx``; None if no usable split.

    ``feats`` must be sorted ascending so the tie-break picks the lowest
    original feature index.
    """
    n = len(idx)
    if n < 2 * min_leaf or n < 2:
        return None
    Xs = X[np.ix_(idx, feats)]
    yv = y[idx]
    xs, scores = _split_scores_matrix(Xs, yv, task, min_leaf)

    best = scores.min()
    if not np.isfinite(best):
        return None
    parent = _impurity_total(yv, task)
    if parent - best <= MIN_IMPROVEMENT_REL * (1.0 + abs(parent)):
        return None

    tied = scores <= best + TIE_REL_TOL * (1.0 + abs(best))
    cols = tied.any(axis=0)
    j = int(np.argmax(cols))
    i = int(np.argmax(tied[:, j]))
    threshold = (xs[i, j] + xs[i + 1, j]) / 2.0
    return int(feats[j]), float(threshold), float(scores[i, j])


def best_split(X, y, feature_subset=None, task: str = REGRESSION, min_leaf: int = 1):
    """Public split search over a sample block; returns (feature, threshold, score) or None."""
    X = as_float_matrix(X)
    y = as_float_vector(y)
    check_same_length(X, y)
    feats = np.arange(X.shape[1]) if feature_subset is None else np.sort(np.asarray(feature_subset, dtype=np.intp))
    return _best_split_on(X, y, np.arange(len(y)), feats, task, min_leaf)


@dataclass
class Tree:
    """Flat-array binary tree.

    ``feature[i] == -1`` marks a leaf whose prediction is ``value[i]``
    (target mean for regression, class-1 fraction for classification);
    internal nodes route ``x[feature] <= threshold`` to ``left``.
    """

    feature: np.ndarray  # int32
    threshold: np.ndarray  # float64
    left: np.ndarray  # int32
    right: np.ndarray  # int32
    value: np.ndarray  # float64
    n_samples: np.ndarray  # int64

    def _routing(self):
        """Cached predict tables: leaves self-loop (x <= +inf goes 'left' to
        themselves), so traversal needs no per-level leaf masking and runs a
        fixed number of iterations."""
        cached = getattr(self, "_route", None)
        if cached is None or cached[0] is not self.feature:
            leaf = self.feature < 0
            self_idx = np.arange(self.n_nodes, dtype=np.int32)
            cached = (
                self.feature,
                np.where(leaf, 0, self.feature).astype(np.int64),
                np.where(leaf, np.inf, self.threshold),
                np.where(leaf, self_idx, self.left),
                np.where(leaf, self_idx, self.right),
                self.max_depth(),
            )
            self._route = cached
        return cached

    def predict(self, X: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        flat = np.ascontiguousarray(X.T).reshape(-1)
        return self._predict_flat(flat, n)

    def _predict_flat(self, flat_column_major: np.ndarray, n: int) -> np.ndarray:
        """Traversal over X stored column-major and flattened (len = p * n)."""
        _, feat, thr, left, right, depth = self._routing()
        node = np.zeros(n, dtype=np.int32)
        rows = np.arange(n, dtype=np.int64)
        for _ in range(depth):
            x = flat_column_major[feat[node] * n + rows]
            node = np.where(x <= thr[node], left[node], right[node])
        return self.value[node]

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def max_depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max()) if self.n_nodes else 0


def grow_tree(X, y, task: str, *, max_depth: int | None = 16, min_leaf: int = 2,
              max_features=None, rng: np.random.Generator | None = None,
              sample_idx: np.ndarray | None = None) -> Tree:
    """Fit one CART tree.

    Nodes are laid out in depth-first preorder (left subtree before right),
    which together with the fixed rng consumption order makes the structure
    a pure function of (data, parameters, rng state). With
    ``max_features=None`` the rng is never consumed.
    """
    X = as_float_matrix(X)
    y = as_float_vector(y)
    check_same_length(X, y)
    if len(y) == 0:
        raise DataError("cannot grow a tree from zero samples")
    n_features = X.shape[1]
    mtry = resolve_mtry(n_features, max_features)
    all_feats = np.arange(n_features, dtype=np.intp)

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []
    counts: list[int] = []

    def new_node() -> int:
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(0.0)
        counts.append(0)
        return len(feature) - 1

    if sample_idx is None:
        sample_idx = np.arange(len(y), dtype=np.intp)
    if mtry < n_features and rng is None:
        raise ConfigError("rng is required when max_features < n_features")

    # Depth-first preorder via an explicit stack (push right before left so
    # the left subtree is processed, and numbered, first).
    stack: list[tuple[np.ndarray, int, int, bool]] = [
        (np.asarray(sample_idx, dtype=np.intp), 0, LEAF, False)
    ]
    while stack:
        idx, depth, parent, is_left = stack.pop()
        node = new_node()
        if parent != LEAF:
            (left if is_left else right)[parent] = node
        yv = y[idx]
        counts[node] = len(idx)
        value[node] = float(yv.mean())
        pure = yv.min() == yv.max()
        at_depth = max_depth is not None and depth >= max_depth
        if pure or at_depth or len(idx) < 2 * min_leaf:
            continue
        if mtry >= n_features:
            feats = all_feats
        else:
            feats = np.sort(rng.choice(n_features, size=mtry, replace=False))
        found = _best_split_on(X, y, idx, feats, task, min_leaf)
        if found is None:
            continue
        f, thr, _ = found
        mask = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        stack.append((idx[~mask], depth + 1, node, False))
        stack.append((idx[mask], depth + 1, node, True))

    return Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
        n_samples=np.asarray(counts, dtype=np.int64),
    )


# --- parallel tree training -------------------------------------------------
#
# Workers are forked, so the training matrix is shared copy-on-write through
# this module global instead of being pickled per task.
_FIT_CONTEXT: dict = {}
_PREDICT_CONTEXT: dict = {}

# below this many rows a fork pool costs more than it saves
_PARALLEL_PREDICT_MIN_ROWS = 200_000


def _predict_chunk(bounds):
    start, stop = bounds
    X = _PREDICT_CONTEXT["X"]
    n = stop - start
    flat = np.ascontiguousarray(X[start:stop].T).reshape(-1)
    out = np.zeros(n)
    for tree in _PREDICT_CONTEXT["trees"]:
        out += tree._predict_flat(flat, n)
    return out


def _fit_one_tree(args):
    tree_index, seed = args
    X, y, task, params = (
        _FIT_CONTEXT["X"],
        _FIT_CONTEXT["y"],
        _FIT_CONTEXT["task"],
        _FIT_CONTEXT["params"],
    )
    rng = substream(seed, DOMAIN_TREE, tree_index)
    n = len(y)
    if params["bootstrap"]:
        sample_idx = rng.integers(0, n, size=n)
    else:
        sample_idx = np.arange(n, dtype=np.intp)
    tree = grow_tree(
        X, y, task,
        max_depth=params["max_depth"],
        min_leaf=params["min_leaf"],
        max_features=params["max_features"],
        rng=rng,
        sample_idx=sample_idx,
    )
    return tree


def effective_workers(workers) -> int:
    """Pool size actually used: requested workers capped at the core count."""
    if workers is None:
        return 1
    return max(1, min(int(workers), os.cpu_count() or 1))


def _train_trees(X, y, task, params, seed, n_trees, workers) -> list[Tree]:
    _FIT_CONTEXT.update(X=X, y=y, task=task, params=params)
    jobs = [(i, seed) for i in range(n_trees)]
    procs = min(effective_workers(workers), n_trees)
    try:
        if procs > 1 and hasattr(os, "fork"):
            import multiprocessing as mp
            ctx = mp.get_context("fork")
            with ctx.Pool(processes=procs) as pool:
                trees = pool.map(_fit_one_tree, jobs, chunksize=max(1, n_trees // (4 * procs)))
        else:
            trees = [_fit_one_tree(j) for j in jobs]
    finally:
        _FIT_CONTEXT.clear()
    return trees


class _ForestBase(BaseEstimator):
    """Shared fit/predict machinery; subclasses pin the task."""

    _task = ""

    def __init__(self, n_trees=100, max_depth=16, min_leaf=2, max_features=None,
                 bootstrap=True, seed=0, workers=None):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.seed = seed
        self.workers = workers

    def _fit(self, X, y):
        X = as_float_matrix(X)
        y = as_float_vector(y)
        check_same_length(X, y)
        if len(y) == 0:
            raise DataError("cannot fit a forest on zero samples")
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        params = dict(
            max_depth=self.max_depth,
            min_leaf=self.min_leaf,
            max_features=self._effective_max_features(),
            bootstrap=self.bootstrap,
        )
        self.trees_ = _train_trees(X, y, self._task, params, self.seed, self.n_trees, self.workers)
        self.n_features_in_ = X.shape[1]
        return self

    def _effective_max_features(self):
        if self.max_features is not None:
            return self.max_features
        return "third" if self._task == REGRESSION else "sqrt"

    def _check_fitted(self):
        if not hasattr(self, "trees_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted")

    def _mean_tree_output(self, X) -> np.ndarray:
        self._check_fitted()
        X = as_float_matrix(X)
        check_n_features(X, self.n_features_in_)
        n = X.shape[0]
        workers = effective_workers(self.workers)
        if workers > 1 and n >= _PARALLEL_PREDICT_MIN_ROWS and hasattr(os, "fork"):
            # every chunk accumulates trees in the same order, so results are
            # identical no matter how the rows are partitioned
            import multiprocessing as mp

            bounds = np.linspace(0, n, workers + 1, dtype=np.int64)
            jobs = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
            _PREDICT_CONTEXT.update(X=X, trees=self.trees_)
            try:
                ctx = mp.get_context("fork")
                with ctx.Pool(processes=len(jobs)) as pool:
                    parts = pool.map(_predict_chunk, jobs)
            finally:
                _PREDICT_CONTEXT.clear()
            out = np.concatenate(parts)
        else:
            flat = np.ascontiguousarray(X.T).reshape(-1)
            out = np.zeros(n)
            for tree in self.trees_:
                out += tree._predict_flat(flat, n)
        return out / len(self.trees_)


class RandomForestRegressor(_ForestBase, RegressorMixin):
    """Bootstrap ensemble of CART regression trees; prediction is the tree mean."""

    _task = REGRESSION

    def fit(self, X, y):
        return self._fit(X, y)

    def predict(self, X) -> np.ndarray:
        return self._mean_tree_output(X)


class RandomForestClassifier(_ForestBase, ClassifierMixin):
    """Bootstrap ensemble of CART Gini trees for binary labels.

    The score of a sample is the mean leaf class-1 fraction across trees,
    always in [0, 1]; ``predict`` thresholds it at 0.5 (score >= 0.5 -> 1).
    """

    _task = CLASSIFICATION

    def fit(self, X, y):
        y = as_binary_labels(y)
        self.classes_ = np.array([0, 1])
        return self._fit(X, y.astype(np.float64))

    def predict_proba(self, X) -> np.ndarray:
        p1 = self._mean_tree_output(X)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X) -> np.ndarray:
        return (self._mean_tree_output(X) >= 0.5).astype(np.int64)


# --- serialization ----------------------------------------------------------

def forest_to_dict(model: _ForestBase) -> dict:
    model._check_fitted()
    return {
        "format": FOREST_FORMAT,
        "version": FOREST_FORMAT_VERSION,
        "task": model._task,
        "n_features": int(model.n_features_in_),
        "params": {
            "n_trees": model.n_trees,
            "max_depth": model.max_depth,
            "min_leaf": model.min_leaf,
            "max_features": model.max_features,
            "bootstrap": model.bootstrap,
            "seed": model.seed,
        },
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
                "n_samples": t.n_samples.tolist(),
            }
            for t in model.trees_
        ],
    }


def forest_from_dict(data: dict) -> _ForestBase:
    if data.get("format") != FOREST_FORMAT:
        raise DataError(f"not a serialized forest: format={data.get('format')!r}")
    if data.get("version") != FOREST_FORMAT_VERSION:
        raise DataError(f"unsupported forest format version {data.get('version')!r}")
    cls = RandomForestRegressor if data["task"] == REGRESSION else RandomForestClassifier
    model = cls(**data["params"])
    model.trees_ = [
        Tree(
            feature=np.asarray(t["feature"], dtype=np.int32),
            threshold=np.asarray(t["threshold"], dtype=np.float64),
            left=np.asarray(t["left"], dtype=np.int32),
            right=np.asarray(t["right"], dtype=np.int32),
            value=np.asarray(t["value"], dtype=np.float64),
            n_samples=np.asarray(t["n_samples"], dtype=np.int64),
        )
        for t in data["trees"]
    ]
    model.n_features_in_ = int(data["n_features"])
    if data["task"] == CLASSIFICATION:
        model.classes_ = np.array([0, 1])
    return model


def save_forest(model: _ForestBase, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(forest_to_dict(model), fh, sort_keys=True)


def load_forest(path) -> _ForestBase:
    with open(path, "r", encoding="utf-8") as fh:
        return forest_from_dict(json.load(fh))
