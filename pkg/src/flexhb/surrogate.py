"""Probabilistic regression forest over encoded configurations.

Each tree draws one uniform threshold per feature at every node and keeps the
split with the best variance reduction (randomized-threshold trees, no
bootstrap resampling). Trees therefore disagree away from the data, which is
where the predictive variance comes from; at a training point with min_leaf=1
every tree memorizes the target exactly. The mean prediction is the average
over trees, the variance is the across-tree spread plus a small floor so
acquisition functions stay well-defined.

All randomness flows through an explicit splitmix64 counter, so fits are
bit-reproducible for a given seed.
"""

from __future__ import annotations

import numpy as np
from numba import njit

EPS_VAR = 1e-8

DEFAULT_N_TREES = 24
DEFAULT_MIN_LEAF = 3


class SurrogateError(ValueError):
    """Insufficient data or mismatched dimensions."""


@njit(cache=True, inline="always")
def _mix64(state):
    state = (state + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = state
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    return state, z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _unit64(state):
    state, z = _mix64(state)
    return state, (z >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _build_tree(X, y, min_leaf, seed, feat, thr, left, right, value):
    """Grow one tree in place; returns the number of nodes used."""
    n = X.shape[0]
    d = X.shape[1]
    idx = np.arange(n)
    buf = np.empty(n, dtype=np.int64)
    max_nodes = feat.shape[0]
    stack_s = np.empty(max_nodes, dtype=np.int64)
    stack_e = np.empty(max_nodes, dtype=np.int64)
    stack_n = np.empty(max_nodes, dtype=np.int64)
    stack_s[0] = 0
    stack_e[0] = n
    stack_n[0] = 0
    top = 1
    n_nodes = 1
    state = np.uint64(seed)
    state, _ = _mix64(state)  # decorrelate small consecutive seeds
    while top > 0:
        top -= 1
        s, e, node = stack_s[top], stack_e[top], stack_n[top]
        m = e - s
        total = 0.0
        for i in range(s, e):
            total += y[idx[i]]
        mean = total / m
        feat[node] = -1
        value[node] = mean
        if m < 2 * min_leaf:
            continue
        spread = 0.0
        for i in range(s, e):
            dv = y[idx[i]] - mean
            spread += dv * dv
        if spread <= 0.0:
            continue
        best_f = -1
        best_t = 0.0
        best_score = -np.inf
        for f in range(d):
            lo = X[idx[s], f]
            hi = lo
            for i in range(s + 1, e):
                v = X[idx[i], f]
                if v < lo:
                    lo = v
                if v > hi:
                    hi = v
            if hi <= lo:
                continue
            state, u = _unit64(state)
            t = lo + u * (hi - lo)
            if t >= hi:
                t = np.nextafter(hi, lo)
            nl = 0
            sl = 0.0
            sr = 0.0
            for i in range(s, e):
                if X[idx[i], f] <= t:
                    nl += 1
                    sl += y[idx[i]]
                else:
                    sr += y[idx[i]]
            nr = m - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            score = sl * sl / nl + sr * sr / nr
            if score > best_score:
                best_score = score
                best_f = f
                best_t = t
        if best_f < 0:
            continue
        p = s
        q = 0
        for i in range(s, e):
            if X[idx[i], best_f] <= best_t:
                buf[p - s] = idx[i]
                p += 1
            else:
                q += 1
                buf[m - q] = idx[i]
        for i in range(m):
            idx[s + i] = buf[i]
        feat[node] = best_f
        thr[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack_s[top] = s
        stack_e[top] = p
        stack_n[top] = n_nodes
        top += 1
        stack_s[top] = p
        stack_e[top] = e
        stack_n[top] = n_nodes + 1
        top += 1
        n_nodes += 2
    return n_nodes


@njit(cache=True)
def _build_forest(X, y, n_trees, min_leaf, seed):
    n = X.shape[0]
    max_nodes = 2 * n + 1
    feat = np.empty((n_trees, max_nodes), dtype=np.int64)
    thr = np.zeros((n_trees, max_nodes), dtype=np.float64)
    left = np.zeros((n_trees, max_nodes), dtype=np.int64)
    right = np.zeros((n_trees, max_nodes), dtype=np.int64)
    value = np.zeros((n_trees, max_nodes), dtype=np.float64)
    for k in range(n_trees):
        _build_tree(X, y, min_leaf, seed + np.uint64(k) * np.uint64(0x51E2D6A9F4C1),
                    feat[k], thr[k], left[k], right[k], value[k])
    return feat, thr, left, right, value


@njit(cache=True)
def _predict_forest(feat, thr, left, right, value, X):
    n_trees = feat.shape[0]
    n = X.shape[0]
    out = np.empty((n_trees, n))
    for k in range(n_trees):
        for r in range(n):
            node = 0
            while feat[k, node] >= 0:
                if X[r, feat[k, node]] <= thr[k, node]:
                    node = left[k, node]
                else:
                    node = right[k, node]
            out[k, r] = value[k, node]
    return out


class ForestModel:
    """Immutable forest fitted on encoded vectors; lower metric is better."""

    def __init__(self, trees, n_train: int, dim: int, seed: int,
                 n_trees: int, min_leaf: int):
        self._trees = trees
        self.n_train = n_train
        self.dim = dim
        self.seed = seed
        self.n_trees = n_trees
        self.min_leaf = min_leaf

    @classmethod
    def fit(cls, X, y, seed: int, n_trees: int = DEFAULT_N_TREES,
            min_leaf: int = DEFAULT_MIN_LEAF) -> "ForestModel":
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.float64)
        if X.ndim != 2:
            raise SurrogateError("X must be a 2-d array of encoded vectors")
        if len(X) != len(y):
            raise SurrogateError("X and y lengths differ")
        if len(X) < 2:
            raise SurrogateError(f"need at least 2 points to fit, got {len(X)}")
        trees = _build_forest(X, y, n_trees, min_leaf, np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
        return cls(trees, len(X), X.shape[1], seed, n_trees, min_leaf)

    def predict_many(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        if X.shape[1] != self.dim:
            raise SurrogateError(f"expected dimension {self.dim}, got {X.shape[1]}")
        per_tree = _predict_forest(*self._trees, X)
        mean = per_tree.mean(axis=0)
        var = per_tree.var(axis=0) + EPS_VAR
        return mean, var

    def predict(self, x) -> tuple[float, float]:
        mean, var = self.predict_many(np.asarray(x, dtype=np.float64).reshape(1, -1))
        return float(mean[0]), float(var[0])


def loo_matrix(X, y, seed: int, n_trees: int = DEFAULT_N_TREES,
               min_leaf: int = DEFAULT_MIN_LEAF) -> np.ndarray:
    """Row j holds the predictions at every X of a forest fit without point j."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n = len(X)
    if n < 3:
        raise SurrogateError(f"leave-one-out needs at least 3 points, got {n}")
    out = np.empty((n, n))
    mask = np.ones(n, dtype=bool)
    for j in range(n):
        mask[j] = False
        model = ForestModel.fit(X[mask], y[mask], seed, n_trees=n_trees, min_leaf=min_leaf)
        out[j], _ = model.predict_many(X)
        mask[j] = True
    return out


def loo_means(X, y, seed: int, n_trees: int = DEFAULT_N_TREES,
              min_leaf: int = DEFAULT_MIN_LEAF) -> np.ndarray:
    """Element j is the prediction at X_j of a forest fit on all points but j."""
    return np.diag(loo_matrix(X, y, seed, n_trees=n_trees, min_leaf=min_leaf)).copy()
