"""Anomaly scores: average KNN distance and isolation forest."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .distance import pairwise_euclidean
from .seeds import STREAM_IFOREST, rng_for

logger = logging.getLogger(__name__)

EULER_GAMMA = 0.5772156649015329


class ParameterError(ValueError):
    """An algorithm parameter is outside its valid range."""


def knn_avg_distance(rows: np.ndarray, k: int) -> np.ndarray:
    """Anomaly score of each row: its mean distance to the k nearest other rows.

    Ties on distance are broken by lower row index.
    """
    rows = np.asarray(rows, dtype=np.float64)
    n = rows.shape[0]
    if not 1 <= k <= n - 1:
        raise ParameterError(f"k must be in [1, {n - 1}], got {k}")
    dist = pairwise_euclidean(rows)
    np.fill_diagonal(dist, np.inf)
    # Stable argsort keeps lower indices first among equal distances.
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return np.take_along_axis(dist, nearest, axis=1).mean(axis=1)


def average_path_length(n: int) -> float:
    """Expected unsuccessful-search path length in a binary search tree of n points."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    harmonic = math.log(n - 1) + EULER_GAMMA
    return 2.0 * harmonic - 2.0 * (n - 1) / n


@dataclass
class _Node:
    size: int
    column: int | None = None
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.column is None


@dataclass
class IsolationForestModel:
    """A seeded ensemble of isolation trees over a fixed training matrix."""

    trees: list[_Node]
    subsample_size: int
    tree_count: int
    seed: int


def _grow_tree(rows: np.ndarray, indices: np.ndarray, depth: int, limit: int,
               rng: np.random.Generator) -> _Node:
    if len(indices) <= 1 or depth >= limit:
        return _Node(size=len(indices))
    values = rows[indices]
    lo = values.min(axis=0)
    hi = values.max(axis=0)
    splittable = np.flatnonzero(lo < hi)
    if splittable.size == 0:
        # All remaining points share the same values.
        return _Node(size=len(indices))
    column = int(splittable[rng.integers(splittable.size)])
    threshold = float(rng.uniform(lo[column], hi[column]))
    mask = values[:, column] < threshold
    left_idx = indices[mask]
    right_idx = indices[~mask]
    if len(left_idx) == 0 or len(right_idx) == 0:
        # Degenerate draw at the boundary; isolate nothing further here.
        return _Node(size=len(indices))
    return _Node(
        size=len(indices),
        column=column,
        threshold=threshold,
        left=_grow_tree(rows, left_idx, depth + 1, limit, rng),
        right=_grow_tree(rows, right_idx, depth + 1, limit, rng),
    )


def fit_isolation_forest(
    rows: np.ndarray,
    trees: int = 100,
    subsample: int = 256,
    seed: int = 0,
    row_ids: Sequence[Hashable] | None = None,
) -> IsolationForestModel:
    """Build a seeded isolation forest.

    Subsampling is defined over stable row identities when ``row_ids`` is
    given: permuting the rows (with their ids) yields the same trees.
    """
    rows = np.asarray(rows, dtype=np.float64)
    n = rows.shape[0]
    if n < 2:
        raise ParameterError("isolation forest needs at least two rows")
    if trees < 1 or subsample < 2:
        raise ParameterError("isolation forest needs trees >= 1 and subsample >= 2")
    if subsample > n:
        logger.warning("subsample %d larger than %d rows; clamping", subsample, n)
        subsample = n
    if row_ids is not None:
        if len(row_ids) != n or len(set(row_ids)) != n:
            raise ParameterError("row_ids must be unique and cover every row")
        identity_order = np.array(sorted(range(n), key=lambda i: row_ids[i]))
    else:
        identity_order = np.arange(n)
    limit = math.ceil(math.log2(subsample)) if subsample > 1 else 0
    forest = []
    for t in range(trees):
        rng = rng_for(seed, STREAM_IFOREST, t)
        picks = rng.choice(n, size=subsample, replace=False)
        sample = identity_order[np.sort(picks)]
        forest.append(_grow_tree(rows, sample, 0, limit, rng))
    return IsolationForestModel(
        trees=forest, subsample_size=subsample, tree_count=trees, seed=seed
    )


def _collect_paths(node: _Node, rows: np.ndarray, indices: np.ndarray, depth: int,
                   out: np.ndarray) -> None:
    if node.is_leaf:
        out[indices] = depth + average_path_length(node.size)
        return
    mask = rows[indices, node.column] < node.threshold
    _collect_paths(node.left, rows, indices[mask], depth + 1, out)
    _collect_paths(node.right, rows, indices[~mask], depth + 1, out)


def score_isolation_forest(model: IsolationForestModel, rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    n = rows.shape[0]
    total = np.zeros(n)
    paths = np.empty(n)
    all_idx = np.arange(n)
    for tree in model.trees:
        _collect_paths(tree, rows, all_idx, 0, paths)
        total += paths
    mean_path = total / model.tree_count
    return np.power(2.0, -mean_path / average_path_length(model.subsample_size))


def isolation_forest_scores(
    rows: np.ndarray,
    trees: int = 100,
    subsample: int = 256,
    seed: int = 0,
    row_ids: Sequence[Hashable] | None = None,
) -> np.ndarray:
    """Standard isolation-forest anomaly scores in (0, 1), deterministic per seed."""
    model = fit_isolation_forest(rows, trees=trees, subsample=subsample, seed=seed,
                                 row_ids=row_ids)
    return score_isolation_forest(model, np.asarray(rows, dtype=np.float64))
