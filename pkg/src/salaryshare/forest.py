"""Random forests of CART trees for regression and binary classification.

Trees split on ``x[feature] <= threshold`` with thresholds at midpoints of
consecutive distinct values. Each tree is grown on a bootstrap sample and
draws ``mtry`` candidate features at every node. Regression leaves hold the
mean response, classification leaves the fraction of class-1 samples.
For a 0/1 response the variance-reduction criterion and the Gini decrease
rank candidate splits identically, so both tasks share one split search.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numba import njit

__all__ = [
    "ForestConfig",
    "Tree",
    "Forest",
    "grow_tree",
    "fit_forest",
    "predict",
    "predict_proba",
    "default_mtry_grid",
    "canonical_order",
    "save_forest",
    "load_forest",
]

REGRESSION = "regression"
CLASSIFICATION = "classification"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    mtry: int | None = None  # None: ceil(p/3) for regression, ceil(sqrt(p)) for classification
    min_leaf: int | None = None  # None: 5 for regression, 1 for classification
    max_depth: int | None = None
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError(f"n_trees must be at least 1, got {self.n_trees}")
        if self.min_leaf is not None and self.min_leaf < 1:
            raise ValueError(f"min_leaf must be at least 1, got {self.min_leaf}")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError(f"max_depth must be non-negative, got {self.max_depth}")

    def resolved(self, p: int, task: str) -> "ForestConfig":
        mtry = self.mtry
        if mtry is None:
            mtry = math.ceil(p / 3) if task == REGRESSION else math.ceil(math.sqrt(p))
        if not 1 <= mtry <= p:
            raise ValueError(f"mtry must lie in [1, {p}], got {mtry}")
        min_leaf = self.min_leaf if self.min_leaf is not None else (5 if task == REGRESSION else 1)
        return ForestConfig(self.n_trees, int(mtry), int(min_leaf), self.max_depth, self.bootstrap, self.seed)


def default_mtry_grid(p: int) -> list[int]:
    """``{1, ceil(p/3), ceil(sqrt(p)), ceil(p/2), p}`` without duplicates, ascending."""
    if p < 1:
        raise ValueError("need at least one feature")
    return sorted({1, math.ceil(p / 3), math.ceil(math.sqrt(p)), math.ceil(p / 2), p})


# ---------------------------------------------------------------- kernels


@njit(cache=True, nogil=True)
def _grow_into(X, y, w, gorder, mtry, min_leaf, max_depth, feature, threshold, left, right, value, count):
    """Grow one tree on the rows with positive weight ``w`` (bootstrap counts).

    ``gorder[f]`` lists all rows sorted by feature ``f``. Every node owns the
    same segment ``[s, e)`` of each per-feature list, kept sorted by stable
    partitioning, so no sorting happens below the root. Writes nodes into the
    output arrays and returns the node count. Uses the numba random state,
    which the caller seeds.
    """
    p, n = gorder.shape
    m = 0
    for r in range(n):
        if w[r] > 0:
            m += 1
    lists = np.empty((p, m), dtype=np.int64)
    for f in range(p):
        k = 0
        for r in gorder[f]:
            if w[r] > 0:
                lists[f, k] = r
                k += 1
    goes_left = np.zeros(n, dtype=np.bool_)
    tmp = np.empty(m, dtype=np.int64)
    feats = np.arange(p)
    # stack of (node, start, end, depth)
    stack = np.empty((m + 1, 4), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = m
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = stack[top, 0]
        s = stack[top, 1]
        e = stack[top, 2]
        depth = stack[top, 3]
        wt = 0.0
        total = 0.0
        lo = np.inf
        hi = -np.inf
        for i in range(s, e):
            r = lists[0, i]
            v = y[r]
            wt += w[r]
            total += w[r] * v
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        value[node] = total / wt
        count[node] = int(wt)
        feature[node] = -1
        left[node] = -1
        right[node] = -1
        if lo == hi or wt < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue

        for i in range(mtry):
            j = np.random.randint(i, p)
            t = feats[i]
            feats[i] = feats[j]
            feats[j] = t
        cand = np.sort(feats[:mtry])

        parent = total * total / wt
        best = parent
        best_f = -1
        best_t = 0.0
        for f in cand:
            seg = lists[f]
            wl = 0.0
            sl = 0.0
            for i in range(s, e - 1):
                r = seg[i]
                wl += w[r]
                sl += w[r] * y[r]
                wr = wt - wl
                if wl < min_leaf:
                    continue
                if wr < min_leaf:
                    break
                a = X[r, f]
                b = X[seg[i + 1], f]
                if not a < b:
                    continue
                sr = total - sl
                score = sl * sl / wl + sr * sr / wr
                if score > best:
                    best = score
                    best_f = f
                    thr = 0.5 * (a + b)
                    if not thr < b:
                        thr = a
                    best_t = thr
        if best_f < 0 or best <= parent * (1.0 + 1e-12):
            continue

        for i in range(s, e):
            r = lists[0, i]
            goes_left[r] = X[r, best_f] <= best_t
        nl = 0
        for f in range(p):
            seg = lists[f]
            nl = 0
            nr = 0
            for i in range(s, e):
                r = seg[i]
                if goes_left[r]:
                    seg[s + nl] = r
                    nl += 1
                else:
                    tmp[nr] = r
                    nr += 1
            for i in range(nr):
                seg[s + nl + i] = tmp[i]

        feature[node] = best_f
        threshold[node] = best_t
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        # right pushed first so the left subtree is numbered first
        stack[top, 0] = rnode
        stack[top, 1] = s + nl
        stack[top, 2] = e
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = lnode
        stack[top, 1] = s
        stack[top, 2] = s + nl
        stack[top, 3] = depth + 1
        top += 1
    return n_nodes


@njit(cache=True, nogil=True)
def _grow_forest(X, y, gorder, seeds, mtry, min_leaf, max_depth, bootstrap):
    n = X.shape[0]
    T = seeds.size
    cap = 2 * n + 1
    feature = np.empty(T * cap, dtype=np.int64)
    threshold = np.zeros(T * cap)
    left = np.empty(T * cap, dtype=np.int64)
    right = np.empty(T * cap, dtype=np.int64)
    value = np.empty(T * cap)
    count = np.empty(T * cap, dtype=np.int64)
    sizes = np.empty(T, dtype=np.int64)
    w = np.empty(n)
    for t in range(T):
        np.random.seed(seeds[t])
        if bootstrap:
            w[:] = 0.0
            for i in range(n):
                w[np.random.randint(0, n)] += 1.0
        else:
            w[:] = 1.0
        o = t * cap
        sizes[t] = _grow_into(X, y, w, gorder, mtry, min_leaf, max_depth,
                              feature[o:o + cap], threshold[o:o + cap], left[o:o + cap],
                              right[o:o + cap], value[o:o + cap], count[o:o + cap])
    total = np.sum(sizes)
    offsets = np.zeros(T + 1, dtype=np.int64)
    out_f = np.empty(total, dtype=np.int64)
    out_t = np.empty(total)
    out_l = np.empty(total, dtype=np.int64)
    out_r = np.empty(total, dtype=np.int64)
    out_v = np.empty(total)
    out_c = np.empty(total, dtype=np.int64)
    pos = 0
    for t in range(T):
        o = t * cap
        k = sizes[t]
        out_f[pos:pos + k] = feature[o:o + k]
        out_t[pos:pos + k] = threshold[o:o + k]
        out_l[pos:pos + k] = left[o:o + k]
        out_r[pos:pos + k] = right[o:o + k]
        out_v[pos:pos + k] = value[o:o + k]
        out_c[pos:pos + k] = count[o:o + k]
        pos += k
        offsets[t + 1] = pos
    return out_f, out_t, out_l, out_r, out_v, out_c, offsets


@njit(cache=True, nogil=True)
def _predict(X, feature, threshold, left, right, value, offsets):
    n = X.shape[0]
    T = offsets.size - 1
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for t in range(T):
            base = offsets[t]
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            acc += value[base + node]
        out[i] = acc / T
    return out


# ---------------------------------------------------------------- public API


@dataclass(frozen=True)
class Tree:
    """Flat node arrays of one tree; node 0 is the root, ``feature == -1`` marks a leaf.

    Child indices are local to the tree.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return _predict(X, self.feature, self.threshold, self.left, self.right, self.value,
                        np.array([0, self.n_nodes], dtype=np.int64))


@dataclass(frozen=True)
class Forest:
    config: ForestConfig
    task: str
    feature_names: tuple[str, ...]
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    offsets: np.ndarray
    y_range: tuple[float, float]

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def trees(self) -> list[Tree]:
        out = []
        for a, b in zip(self.offsets[:-1], self.offsets[1:]):
            out.append(Tree(self.feature[a:b], self.threshold[a:b], self.left[a:b],
                            self.right[a:b], self.value[a:b], self.n_samples[a:b]))
        return out

    def digest(self) -> str:
        """SHA-256 over the node arrays; equal digests mean identical forests."""
        h = hashlib.sha256()
        for arr in (self.feature, self.threshold, self.left, self.right, self.value,
                    self.n_samples, self.offsets):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"forest expects {self.n_features} features, got {X.shape[1]}")
        return _predict(np.ascontiguousarray(X), self.feature, self.threshold, self.left,
                        self.right, self.value, self.offsets)


def canonical_order(X, y) -> np.ndarray:
    """Row order sorted lexicographically by (x_1, ..., x_p, y).

    Growing on this order makes the forest independent of how the caller
    happened to order the rows.
    """
    keys = np.column_stack([X, y]).T
    return np.lexsort(keys[::-1])


def _feature_orders(X) -> np.ndarray:
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)


def tree_seeds(seed: int, n_trees: int) -> np.ndarray:
    """One 31-bit seed per tree, derived from ``(seed, tree index)``."""
    return np.array(
        [np.random.SeedSequence(seed, spawn_key=(t,)).generate_state(1)[0] >> 1 for t in range(n_trees)],
        dtype=np.int64,
    )


def _prepare(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2:
        raise ValueError("X must be 2-d")
    if X.shape[0] == 0:
        raise ValueError("cannot grow a tree on zero rows")
    if X.shape[0] != y.size:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} entries")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in forest input")
    return X, y


def _check_task(y, task):
    if task == CLASSIFICATION:
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("classification labels must be 0/1")
    elif task != REGRESSION:
        raise ValueError(f"unknown task {task!r}")


def grow_tree(X, y, config: ForestConfig = ForestConfig(), tree_rng=None, task: str = REGRESSION) -> Tree:
    """Grow a single CART tree on all rows of ``(X, y)``, without resampling.

    ``tree_rng`` (an integer seed or ``numpy.random.Generator``) drives the
    per-node feature draws.
    """
    X, y = _prepare(X, y)
    _check_task(y, task)
    cfg = config.resolved(X.shape[1], task)
    if isinstance(tree_rng, np.random.Generator):
        seed = int(tree_rng.integers(0, 2**31 - 1))
    else:
        seed = int(tree_rng if tree_rng is not None else cfg.seed) % (2**31 - 1)
    depth = -1 if cfg.max_depth is None else cfg.max_depth
    Xc = np.ascontiguousarray(X)
    out = _grow_forest(Xc, y, _feature_orders(Xc), np.array([seed], dtype=np.int64),
                       cfg.mtry, cfg.min_leaf, depth, False)
    f, t, l, r, v, c, _ = out
    return Tree(f, t, l, r, v, c)


def fit_forest(X, y, config: ForestConfig = ForestConfig(), task: str = REGRESSION,
               feature_names=None) -> Forest:
    """Grow ``config.n_trees`` trees, each on its own bootstrap sample."""
    X, y = _prepare(X, y)
    _check_task(y, task)
    cfg = config.resolved(X.shape[1], task)
    order = canonical_order(X, y)
    Xc = np.ascontiguousarray(X[order])
    yc = y[order]
    depth = -1 if cfg.max_depth is None else cfg.max_depth
    f, t, l, r, v, c, offsets = _grow_forest(Xc, yc, _feature_orders(Xc), tree_seeds(cfg.seed, cfg.n_trees), cfg.mtry,
                                             cfg.min_leaf, depth, cfg.bootstrap)
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j + 1}" for j in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise ValueError("feature_names length does not match X")
    return Forest(cfg, task, names, f, t, l, r, v, c, offsets, (float(y.min()), float(y.max())))


def predict(forest: Forest, X):
    """Mean of the tree predictions. A single row gives a float, a matrix an array."""
    single = np.asarray(X).ndim == 1
    out = forest.predict(X)
    return float(out[0]) if single else out


def predict_proba(forest: Forest, X):
    """Class-1 probability as the mean over trees of the leaf class-1 fraction."""
    if forest.task != CLASSIFICATION:
        raise ValueError("predict_proba needs a classification forest")
    return predict(forest, X)


def save_forest(forest: Forest, path) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "config": asdict(forest.config),
        "task": forest.task,
        "feature_names": list(forest.feature_names),
        "y_range": list(forest.y_range),
    }
    with Path(path).open("wb") as fh:
        np.savez_compressed(
            fh,
            meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
            feature=forest.feature, threshold=forest.threshold, left=forest.left,
            right=forest.right, value=forest.value, n_samples=forest.n_samples,
            offsets=forest.offsets,
        )


def load_forest(path) -> Forest:
    with np.load(Path(path)) as data:
        meta = json.loads(data["meta"].tobytes().decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported forest format version {meta.get('format_version')}")
        arrays = {k: data[k] for k in ("feature", "threshold", "left", "right", "value", "n_samples", "offsets")}
    return Forest(
        config=ForestConfig(**meta["config"]),
        task=meta["task"],
        feature_names=tuple(meta["feature_names"]),
        y_range=tuple(meta["y_range"]),
        **arrays,
    )
