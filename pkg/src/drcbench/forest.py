"""Bagged CART regression forest, one ensemble per target parameter.

Trees grow greedily on variance reduction: at each node a random subset of
features is examined (features that admit no valid split do not count
toward the subset size), candidate thresholds sit midway between distinct
consecutive sorted values, and the split minimizing the summed left/right
squared error wins. Leaves predict their training mean, so predictions can
never leave the training target range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DomainError


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 2
    features_per_split: int | None = None  # default: ceil(p / 3)
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise DomainError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.min_samples_leaf < 1:
            raise DomainError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")
        if self.max_depth is not None and self.max_depth < 1:
            raise DomainError(f"max_depth must be >= 1 or None, got {self.max_depth}")


class _Node:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self):
        self.feature = -1
        self.threshold = 0.0
        self.left = None
        self.right = None
        self.value = 0.0


def _best_split_for_feature(x: np.ndarray, y: np.ndarray, min_leaf: int):
    """Best (sse, threshold) splitting one feature column, or None."""
    n = x.size
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    counts = np.arange(min_leaf, n - min_leaf + 1)
    if counts.size == 0:
        return None
    boundary = xs[counts] > xs[counts - 1]
    if not boundary.any():
        return None
    csum = np.cumsum(ys)
    csq = np.cumsum(ys * ys)
    nl = counts[boundary].astype(np.float64)
    sl, ql = csum[counts[boundary] - 1], csq[counts[boundary] - 1]
    nr = n - nl
    sr, qr = csum[-1] - sl, csq[-1] - ql
    sse = (ql - sl * sl / nl) + (qr - sr * sr / nr)
    j = int(np.argmin(sse))
    pos = counts[boundary][j]
    return float(sse[j]), float((xs[pos - 1] + xs[pos]) / 2.0)


class RegressionTree:
    """Single CART tree over float features and a scalar target."""

    def __init__(self, config: ForestConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng
        self.root: _Node | None = None

    def fit(self, X: np.ndarray, y: np.ndarray) -> "RegressionTree":
        p = X.shape[1]
        mtry = self.config.features_per_split or math.ceil(p / 3)
        mtry = min(mtry, p)
        min_leaf = self.config.min_samples_leaf
        self.root = _Node()
        stack = [(self.root, np.arange(X.shape[0]), 0)]
        while stack:
            node, idx, depth = stack.pop()
            ys = y[idx]
            node.value = float(ys.mean())
            if (
                (self.config.max_depth is not None and depth >= self.config.max_depth)
                or idx.size < 2 * min_leaf
                or np.ptp(ys) == 0.0
            ):
                continue
            best_sse, best_feature, best_threshold = np.inf, -1, 0.0
            productive = 0
            for f in self.rng.permutation(p):
                found = _best_split_for_feature(X[idx, f], ys, min_leaf)
                if found is None:
                    continue  # constant column here; does not count toward mtry
                productive += 1
                if found[0] < best_sse:
                    best_sse, best_feature, best_threshold = found[0], int(f), found[1]
                if productive >= mtry:
                    break
            if best_feature < 0:
                continue
            node.feature, node.threshold = best_feature, best_threshold
            go_left = X[idx, best_feature] <= best_threshold
            node.left, node.right = _Node(), _Node()
            stack.append((node.left, idx[go_left], depth + 1))
            stack.append((node.right, idx[~go_left], depth + 1))
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0])
        for i, row in enumerate(X):
            node = self.root
            while node.left is not None:
                node = node.left if row[node.feature] <= node.threshold else node.right
            out[i] = node.value
        return out


class Forest:
    """Bagged trees for each target column; per-tree seeds spawn from one master."""

    def __init__(self, config: ForestConfig, target_names: tuple[str, ...]):
        self.config = config
        self.target_names = target_names
        self.ensembles: list[list[RegressionTree]] = []

    def fit(self, X: np.ndarray, Y: np.ndarray) -> "Forest":
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.ndim != 2 or Y.shape[0] != X.shape[0]:
            raise DataError(f"feature/label shapes disagree: {X.shape} vs {Y.shape}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise DataError("features/labels contain non-finite values")
        if Y.shape[1] != len(self.target_names):
            raise DataError(f"expected {len(self.target_names)} targets, got {Y.shape[1]}")
        n = X.shape[0]
        seeds = np.random.SeedSequence(self.config.seed).spawn(
            len(self.target_names) * self.config.n_trees)
        self.ensembles = []
        k = 0
        for t in range(Y.shape[1]):
            trees = []
            for _ in range(self.config.n_trees):
                rng = np.random.default_rng(seeds[k])
                k += 1
                idx = rng.integers(0, n, n) if self.config.bootstrap else np.arange(n)
                tree = RegressionTree(self.config, rng).fit(X[idx], Y[idx, t])
                trees.append(tree)
            self.ensembles.append(trees)
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        cols = [
            np.mean([tree.predict(X) for tree in trees], axis=0) for trees in self.ensembles
        ]
        return np.stack(cols, axis=1)


def fit_forest(X: np.ndarray, Y: np.ndarray, target_names: tuple[str, ...],
               config: ForestConfig | None = None) -> Forest:
    return Forest(config or ForestConfig(), target_names).fit(X, Y)
