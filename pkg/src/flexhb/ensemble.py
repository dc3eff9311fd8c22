"""Weighted ensemble of per-fidelity surrogates and the proposal step.

Low-fidelity surrogates are scored by how consistently they order the
full-fidelity measurements (ordered-pair ranking loss); the top surrogate,
which cannot be scored against itself, gets a simulated consistency derived
from the ratio of leave-one-out cross-validation losses at the two highest
levels. Consistencies are sharpened with a power gamma and normalized into
the mixture weights. Proposals maximize expected improvement over a random
candidate pool, with a fixed fraction of purely random picks interleaved.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .records import FidelityView
from .space import ConfigSpace, Configuration, ORIGIN_MODEL
from .surrogate import (DEFAULT_MIN_LEAF, DEFAULT_N_TREES, EPS_VAR, ForestModel,
                        SurrogateError, loo_matrix)

COMBINE_WEIGHTED_SUM = "weighted_sum"
COMBINE_GPOE = "gpoe"

DEFAULT_GAMMA = 3.0
DEFAULT_RANDOM_FRACTION = 0.2
DEFAULT_N_CANDIDATES = 5000
DEFAULT_MIN_POINTS = 5
CONSISTENCY_CAP = 0.99


def ranking_loss(pred_means: Sequence[float], ys: Sequence[float]) -> int:
    """Number of ordered pairs whose predicted and observed orderings disagree."""
    mu = np.asarray(pred_means, dtype=float)
    y = np.asarray(ys, dtype=float)
    if mu.shape != y.shape or mu.ndim != 1:
        raise ValueError("prediction and target vectors must have equal length")
    if len(mu) < 2:
        raise ValueError("ranking loss needs at least 2 points")
    mu_less = mu[:, None] < mu[None, :]
    y_less = y[:, None] < y[None, :]
    return int(np.sum(mu_less ^ y_less))


def consistency(loss: int, n: int) -> float:
    """Fraction of consistent ordered pairs, 1 - loss / (n * (n - 1))."""
    if n < 2:
        raise ValueError("consistency needs at least 2 points")
    return 1.0 - loss / (n * (n - 1))


def cv_ranking_loss(X, y, seed: int, n_trees: int = DEFAULT_N_TREES,
                    min_leaf: int = DEFAULT_MIN_LEAF) -> int:
    """Ranking loss of leave-one-out predictions against the observed ordering.

    Pair (j, k) compares the j-removed model's predictions at X_j and X_k.
    """
    y = np.asarray(y, dtype=float)
    preds = loo_matrix(X, y, seed, n_trees=n_trees, min_leaf=min_leaf)
    mu_less = preds.diagonal()[:, None] < preds
    y_less = y[:, None] < y[None, :]
    return int(np.sum(mu_less ^ y_less))


def weight_vector(p: Sequence[float], gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Normalize sharpened consistencies into mixture weights summing to 1."""
    p = np.asarray(p, dtype=float)
    powered = np.power(p, gamma)
    total = powered.sum()
    if total <= 0.0 or not np.isfinite(total):
        return np.full(len(p), 1.0 / len(p))
    return powered / total


def combined_predict(means: np.ndarray, variances: np.ndarray, weights: np.ndarray,
                     mode: str = COMBINE_WEIGHTED_SUM) -> tuple[np.ndarray, np.ndarray]:
    """Combine per-level Gaussian predictions; arrays are (levels, points)."""
    w = np.asarray(weights, dtype=float)[:, None]
    if mode == COMBINE_WEIGHTED_SUM:
        mean = (w * means).sum(axis=0)
        var = (w * (variances + (means - mean) ** 2)).sum(axis=0)
        return mean, np.maximum(var, EPS_VAR)
    if mode == COMBINE_GPOE:
        precision = (w / variances).sum(axis=0)
        mean = (w * means / variances).sum(axis=0) / precision
        return mean, np.maximum(1.0 / precision, EPS_VAR)
    raise ValueError(f"unknown combine mode {mode!r}")


def expected_improvement(mean, variance, y_best):
    """Expected improvement below y_best for a minimization objective."""
    mean = np.asarray(mean, dtype=float)
    sigma = np.sqrt(np.asarray(variance, dtype=float))
    scalar = mean.ndim == 0
    mean, sigma = np.atleast_1d(mean), np.atleast_1d(sigma)
    improvement = y_best - mean
    ei = np.maximum(improvement, 0.0)
    positive = sigma > 0
    if positive.any():
        z = improvement[positive] / sigma[positive]
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        ei = ei.astype(float)
        ei[positive] = improvement[positive] * ndtr(z) + sigma[positive] * pdf
    return float(ei[0]) if scalar else ei


def simulated_top_consistency(p_prev: float, cv_loss_prev: int, cv_loss_top: int,
                              invert_ratio: bool = False) -> float:
    """Consistency stand-in for the top surrogate, which has no held-out level.

    Scales the next-best level's consistency by the ratio of the two highest
    levels' cross-validation losses, capped at 0.99 (the raw product can
    exceed 1). A zero loss at the lower level would make the ratio undefined
    and is substituted with 1.
    """
    if cv_loss_prev == 0:
        cv_loss_prev = 1
    if invert_ratio and cv_loss_top > 0:
        ratio = cv_loss_prev / cv_loss_top
    else:
        ratio = cv_loss_top / cv_loss_prev
    return min(CONSISTENCY_CAP, p_prev * ratio)


def compute_weights(view: FidelityView, seed: int, gamma: float = DEFAULT_GAMMA,
                    min_points: int = DEFAULT_MIN_POINTS,
                    n_trees: int = DEFAULT_N_TREES, min_leaf: int = DEFAULT_MIN_LEAF,
                    invert_top_ratio: bool = False,
                    models: dict[int, ForestModel] | None = None,
                    ) -> tuple[list[int], np.ndarray, list[float]]:
    """Fit-or-reuse per-level surrogates and derive the mixture weights.

    Levels with fewer than ``min_points`` measurements are excluded. When the
    top level is too thin for cross-validation the weights fall back to
    uniform over the fitted levels (early-stage cold start).
    """
    levels = [r for r in view.levels if view.size(r) >= min_points]
    if not levels:
        return [], np.array([]), []
    if models is None:
        models = {}
        for r in levels:
            X, y = view.encoded(r)
            models[r] = ForestModel.fit(X, y, seed, n_trees=n_trees, min_leaf=min_leaf)
    top = levels[-1]
    X_top, y_top = view.encoded(top)
    n_top = len(y_top)
    if len(levels) == 1:
        return levels, np.array([1.0]), [1.0]
    if n_top < 3:
        uniform = np.full(len(levels), 1.0 / len(levels))
        return levels, uniform, [1.0 / len(levels)] * len(levels)
    p = []
    for r in levels[:-1]:
        mu, _ = models[r].predict_many(X_top)
        p.append(consistency(ranking_loss(mu, y_top), n_top))
    X_prev, y_prev = view.encoded(levels[-2])
    loss_prev = cv_ranking_loss(X_prev, y_prev, seed, n_trees=n_trees, min_leaf=min_leaf)
    loss_top = cv_ranking_loss(X_top, y_top, seed, n_trees=n_trees, min_leaf=min_leaf)
    p.append(simulated_top_consistency(p[-1], loss_prev, loss_top, invert_top_ratio))
    return levels, weight_vector(p, gamma), p


class MultiFidelityEnsemble:
    """Fitted per-level surrogates plus weights, refreshed lazily per snapshot."""

    def __init__(self, space: ConfigSpace, gamma: float = DEFAULT_GAMMA,
                 p_r: float = DEFAULT_RANDOM_FRACTION,
                 combine_mode: str = COMBINE_WEIGHTED_SUM,
                 n_cand: int = DEFAULT_N_CANDIDATES,
                 min_points: int = DEFAULT_MIN_POINTS,
                 n_trees: int = DEFAULT_N_TREES, min_leaf: int = DEFAULT_MIN_LEAF,
                 top_level_only: bool = False, invert_top_ratio: bool = False):
        if not 0.0 <= p_r <= 1.0:
            raise ValueError("p_r must lie in [0, 1]")
        self.space = space
        self.gamma = gamma
        self.p_r = p_r
        self.combine_mode = combine_mode
        self.n_cand = n_cand
        self.min_points = min_points
        self.n_trees = n_trees
        self.min_leaf = min_leaf
        self.top_level_only = top_level_only
        self.invert_top_ratio = invert_top_ratio
        self.levels: list[int] = []
        self.weights = np.array([])
        self.consistencies: list[float] = []
        self.models: dict[int, ForestModel] = {}
        self._fitted_version: int | None = None

    def refresh(self, view: FidelityView, seed: int) -> bool:
        """Refit surrogates and weights if the snapshot changed; True if refit."""
        if view.version == self._fitted_version:
            return False
        levels = [r for r in view.levels if view.size(r) >= self.min_points]
        if self.top_level_only and levels:
            levels = levels[-1:]
        self.models = {}
        for r in levels:
            X, y = view.encoded(r)
            self.models[r] = ForestModel.fit(X, y, seed, n_trees=self.n_trees,
                                             min_leaf=self.min_leaf)
        if self.top_level_only:
            self.levels = levels
            self.weights = np.ones(len(levels)) if levels else np.array([])
            self.consistencies = [1.0] * len(levels)
        else:
            self.levels, self.weights, self.consistencies = compute_weights(
                view, seed, gamma=self.gamma, min_points=self.min_points,
                n_trees=self.n_trees, min_leaf=self.min_leaf,
                invert_top_ratio=self.invert_top_ratio, models=self.models)
        self._fitted_version = view.version
        return True

    @property
    def ready(self) -> bool:
        return bool(self.levels)

    @property
    def fitted_version(self) -> int | None:
        return self._fitted_version

    def predict_many(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if not self.ready:
            raise SurrogateError("no fitted levels")
        means = np.empty((len(self.levels), len(X)))
        variances = np.empty_like(means)
        for i, r in enumerate(self.levels):
            means[i], variances[i] = self.models[r].predict_many(X)
        return combined_predict(means, variances, self.weights, self.combine_mode)

    def predict(self, x) -> tuple[float, float]:
        mean, var = self.predict_many(np.asarray(x, dtype=float).reshape(1, -1))
        return float(mean[0]), float(var[0])

    def propose_batch(self, view: FidelityView, k: int,
                      sample_rng: np.random.Generator, model_rng: np.random.Generator,
                      seed: int, n_cand: int | None = None) -> list[Configuration]:
        """Propose k configurations against one snapshot of the datasets.

        Each slot independently falls back to a uniform random sample with
        probability p_r (or when no surrogate is usable); otherwise the slot
        takes the EI argmax over a fresh random candidate pool, ties broken
        by the lowest candidate index.
        """
        n_cand = self.n_cand if n_cand is None else n_cand
        plans: list[tuple[str, object]] = []
        refreshed = False
        for _ in range(k):
            use_random = model_rng.random() < self.p_r
            if not use_random and not refreshed:
                self.refresh(view, seed)
                refreshed = True
            if use_random or not self.ready:
                plans.append(("random", self.space.sample_random(sample_rng)))
            else:
                pool = model_rng.random((n_cand, self.space.dim))
                plans.append(("model", pool))
        model_pools = [p for kind, p in plans if kind == "model"]
        picks: list[np.ndarray] = []
        if model_pools:
            stacked = np.vstack(model_pools)
            mean, var = self.predict_many(stacked)
            y_best = view.best_target()
            ei = expected_improvement(mean, var, y_best)
            for i, pool in enumerate(model_pools):
                scores = ei[i * n_cand:(i + 1) * n_cand]
                picks.append(pool[int(np.argmax(scores))])
        out = []
        it = iter(picks)
        for kind, payload in plans:
            if kind == "random":
                out.append(payload)
            else:
                out.append(self.space.config_from_vector(next(it), ORIGIN_MODEL))
        return out

    def propose(self, view: FidelityView, sample_rng: np.random.Generator,
                model_rng: np.random.Generator, seed: int,
                n_cand: int | None = None) -> Configuration:
        return self.propose_batch(view, 1, sample_rng, model_rng, seed, n_cand)[0]
