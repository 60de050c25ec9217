"""Clustering: seeded k-means, ward-linkage agglomeration, silhouette analysis."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .outliers import ParameterError
from .seeds import STREAM_KMEANS, STREAM_SELECT_K, child_seed, rng_for

logger = logging.getLogger(__name__)

KMEANS_MAX_ITER = 300


@dataclass
class Clustering:
    k: int
    assignment: np.ndarray

    def __post_init__(self) -> None:
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        used = np.unique(self.assignment)
        if used.size != self.k or used.min() < 0 or used.max() >= self.k:
            raise ValueError(f"assignment must use every cluster id in [0, {self.k})")

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == cluster_id)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)


def _sq_distances(rows: np.ndarray, centers: np.ndarray) -> np.ndarray:
    rows_sq = np.einsum("ij,ij->i", rows, rows)
    centers_sq = np.einsum("ij,ij->i", centers, centers)
    d2 = rows_sq[:, None] + centers_sq[None, :] - 2.0 * rows @ centers.T
    return np.maximum(d2, 0.0)


def _kmeans_pp_init(rows: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = rows.shape[0]
    centers = np.empty((k, rows.shape[1]))
    chosen: list[int] = [int(rng.integers(n))]
    centers[0] = rows[chosen[0]]
    d2 = ((rows - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # Remaining points coincide with chosen centers; take the lowest
            # index not used yet so duplicates still spread over clusters.
            pick = next(i for i in range(n) if i not in chosen)
        else:
            pick = int(rng.choice(n, p=d2 / total))
        chosen.append(pick)
        centers[c] = rows[pick]
        d2 = np.minimum(d2, ((rows - centers[c]) ** 2).sum(axis=1))
    return centers


def kmeans(rows: np.ndarray, k: int, seed: int = 0) -> Clustering:
    """Lloyd iterations from a k-means++ start until assignments are stable.

    Empty clusters are repaired by reseeding them to the point farthest from
    its current centroid; ties always resolve to the lowest index.
    """
    rows = np.asarray(rows, dtype=np.float64)
    n = rows.shape[0]
    if not 1 <= k <= n:
        raise ParameterError(f"k must be in [1, {n}], got {k}")
    rng = rng_for(seed, STREAM_KMEANS)
    centers = _kmeans_pp_init(rows, k, rng)
    assignment = np.full(n, -1, dtype=np.int64)
    for iteration in range(KMEANS_MAX_ITER):
        d2 = _sq_distances(rows, centers)
        new_assignment = d2.argmin(axis=1)
        if iteration > 0:
            # Sticky ties: points equidistant to their current centroid stay
            # put, otherwise duplicates oscillate against empty-cluster repair.
            current = d2[np.arange(n), assignment]
            best = d2[np.arange(n), new_assignment]
            keep = current <= best
            new_assignment[keep] = assignment[keep]
        counts = np.bincount(new_assignment, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            # Farthest point whose cluster keeps at least one member.
            own = d2[np.arange(n), new_assignment]
            candidates = np.flatnonzero(counts[new_assignment] > 1)
            pick = int(candidates[own[candidates].argmax()])
            counts[new_assignment[pick]] -= 1
            new_assignment[pick] = empty
            counts[empty] += 1
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for c in range(k):
            centers[c] = rows[assignment == c].mean(axis=0)
    return Clustering(k=k, assignment=assignment)


@dataclass(frozen=True)
class WardMerge:
    """One agglomeration step; representatives are the smallest member indices."""

    left: int
    right: int
    height: float


def ward_linkage(dist: np.ndarray) -> list[WardMerge]:
    """Full bottom-up ward agglomeration via the Lance-Williams update.

    Ties on merge distance resolve to the lexicographically smallest
    representative pair.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    d2 = dist ** 2
    size = np.ones(n)
    active = np.ones(n, dtype=bool)
    work = d2.copy()
    np.fill_diagonal(work, np.inf)
    merges: list[WardMerge] = []
    for _ in range(n - 1):
        masked = np.where(active[:, None] & active[None, :], work, np.inf)
        flat = int(masked.argmin())
        i, j = divmod(flat, n)
        best = masked[i, j]
        ties = np.argwhere(masked == best)
        i, j = min((int(a), int(b)) for a, b in ties if a < b)
        merges.append(WardMerge(i, j, float(np.sqrt(max(best, 0.0)))))
        si, sj = size[i], size[j]
        others = np.flatnonzero(active)
        others = others[(others != i) & (others != j)]
        sk = size[others]
        updated = ((si + sk) * work[i, others] + (sj + sk) * work[j, others]
                   - sk * best) / (si + sj + sk)
        work[i, others] = updated
        work[others, i] = updated
        size[i] = si + sj
        active[j] = False
    return merges


def cut_ward(merges: list[WardMerge], n: int, k: int) -> Clustering:
    """Flat clustering after the first n - k merges, labels ordered by smallest member."""
    if not 1 <= k <= n:
        raise ParameterError(f"k must be in [1, {n}], got {k}")
    rep = np.arange(n)
    for merge in merges[: n - k]:
        rep[rep == merge.right] = merge.left
    labels = {r: c for c, r in enumerate(sorted(set(rep.tolist())))}
    assignment = np.array([labels[r] for r in rep])
    return Clustering(k=k, assignment=assignment)


def hac_ward(dist: np.ndarray, k: int) -> Clustering:
    """Ward-linkage agglomerative clustering cut at k clusters."""
    return cut_ward(ward_linkage(dist), np.asarray(dist).shape[0], k)


@dataclass
class SilhouetteReport:
    per_point: np.ndarray
    score: float
    per_cluster_max: dict[int, float]


def silhouette(dist: np.ndarray, clustering: Clustering) -> SilhouetteReport:
    """Per-point coefficients (b - a) / max(a, b); singletons score 0 by convention."""
    if clustering.k < 2:
        raise ParameterError("silhouette needs at least two clusters")
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    k = clustering.k
    onehot = np.zeros((n, k))
    onehot[np.arange(n), clustering.assignment] = 1.0
    counts = onehot.sum(axis=0)
    sums = dist @ onehot  # (n, k) summed distance to each cluster

    own = clustering.assignment
    own_count = counts[own]
    per_point = np.zeros(n)
    mean_other = sums / counts[None, :]
    mean_other[np.arange(n), own] = np.inf
    b = mean_other.min(axis=1)
    multi = own_count > 1
    a = np.zeros(n)
    a[multi] = sums[np.arange(n), own][multi] / (own_count[multi] - 1)
    denom = np.maximum(a, b)
    valid = multi & (denom > 0)
    per_point[valid] = (b[valid] - a[valid]) / denom[valid]

    per_cluster_max = {
        c: float(per_point[clustering.assignment == c].max()) for c in range(k)
    }
    return SilhouetteReport(
        per_point=per_point,
        score=float(per_point.mean()),
        per_cluster_max=per_cluster_max,
    )


@dataclass
class KSelection:
    k: int
    clustering: Clustering
    degenerate: bool = False
    quality_by_k: dict[int, int] = field(default_factory=dict)


ClusterFn = Callable[[int, int], Clustering]


def _quality(report: SilhouetteReport) -> int:
    # Count of clusters whose best coefficient reaches the overall score. The
    # comparison is >= so that perfectly tight, fully separated clusterings
    # (every coefficient equal) count every cluster.
    return sum(1 for peak in report.per_cluster_max.values() if peak >= report.score)


def select_k(
    dist: np.ndarray,
    cluster_fn: ClusterFn,
    k_max: int = 50,
    seed: int = 0,
) -> KSelection:
    """Pick the cluster count in [2, min(k_max, n-1)] maximizing the number of
    clusters whose peak silhouette coefficient reaches the overall score.

    Ties prefer the higher overall score, then the smaller k. All-identical
    inputs are degenerate (silhouette is undefined); k=2 is returned flagged.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if n < 3:
        raise ParameterError("cluster-count selection needs at least three rows")
    if dist.max() == 0.0:
        logger.warning("all pairwise distances are zero; defaulting to k=2")
        clustering = cluster_fn(2, child_seed(seed, STREAM_SELECT_K, 2))
        return KSelection(k=2, clustering=clustering, degenerate=True)

    best: tuple[int, float, int] | None = None
    best_result: tuple[int, Clustering] | None = None
    quality_by_k: dict[int, int] = {}
    for k in range(2, min(k_max, n - 1) + 1):
        clustering = cluster_fn(k, child_seed(seed, STREAM_SELECT_K, k))
        report = silhouette(dist, clustering)
        q = _quality(report)
        quality_by_k[k] = q
        key = (q, report.score, -k)
        if best is None or key > best:
            best = key
            best_result = (k, clustering)
    assert best_result is not None
    return KSelection(
        k=best_result[0],
        clustering=best_result[1],
        degenerate=False,
        quality_by_k=quality_by_k,
    )
