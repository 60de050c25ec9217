"""The six host prioritizers and their pipeline configuration.

Sorted pipelines (sknn, sif, skm, shac) order every host; the lof and if
baselines flag a threshold-selected subset first and append the rest so a
total order is always returned.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .encoding import FeatureMatrix
from .ml import (
    ParameterError,
    cut_ward,
    isolation_forest_scores,
    kmeans,
    knn_avg_distance,
    pairwise_euclidean,
    select_k,
    ward_linkage,
)
from .ml.seeds import STREAM_CLUSTER_ORDER, rng_for
from .matching import NscrEntry
from .triage import TriageReport, run_selection

LOF_SCORE_THRESHOLD = 1.5
IF_SCORE_THRESHOLD = 0.5
IFOREST_TREES = 100
IFOREST_SUBSAMPLE = 256
SILHOUETTE_K_MAX = 50


class Algorithm(str, Enum):
    SKNN = "sknn"
    SIF = "sif"
    SKM = "skm"
    SHAC = "shac"
    LOF = "lof"
    IF = "if"


NEEDS_K = {Algorithm.SKNN, Algorithm.LOF}
SORTED_ALGORITHMS = {Algorithm.SKNN, Algorithm.SIF, Algorithm.SKM, Algorithm.SHAC}


@dataclass(frozen=True)
class PipelineConfig:
    algorithm: Algorithm
    k: int | None = None
    sc: int | None = None
    pruning: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.algorithm in NEEDS_K:
            if self.k is None or self.k < 1:
                raise ParameterError(f"{self.algorithm.value} requires k >= 1")
        elif self.k is not None:
            raise ParameterError(f"{self.algorithm.value} does not take k")
        if self.sc is not None and self.sc <= 0:
            raise ParameterError("sc must be positive when set")

    @property
    def selection_mode(self) -> bool:
        return self.sc is not None

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        return cls(
            algorithm=Algorithm(str(data["algorithm"]).lower()),
            k=int(data["k"]) if data.get("k") not in (None, "") else None,
            sc=int(data["sc"]) if data.get("sc") not in (None, "") else None,
            pruning=_parse_bool(data.get("pruning", True)),
            seed=int(data.get("seed", 0)),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        """Load from JSON or simple key=value lines."""
        text = Path(path).read_text(encoding="utf-8")
        stripped = text.lstrip()
        if stripped.startswith("{"):
            return cls.from_dict(json.loads(text))
        data: dict[str, str] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            data[key.strip()] = value.strip()
        return cls.from_dict(data)

    @classmethod
    def preset(cls, name: str) -> "PipelineConfig":
        try:
            return PRESETS[name]
        except KeyError:
            raise ParameterError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in {"1", "true", "yes", "on"}


#: Recommended configurations (best selection/prioritization trade-off).
PRESETS: dict[str, PipelineConfig] = {
    "sknn15-sc20": PipelineConfig(Algorithm.SKNN, k=15, sc=20),
    "sknn20-sc20": PipelineConfig(Algorithm.SKNN, k=20, sc=20),
}


@dataclass
class RankedHost:
    entry: NscrEntry
    rank: int
    anomaly_score: float | None = None
    cluster: tuple[int, int] | None = None
    flagged: bool | None = None

    @property
    def vulnerable(self) -> bool | None:
        return self.entry.vulnerable


def _row_ids(fm: FeatureMatrix) -> list[tuple[str, str]]:
    return [(e.ip_initial or "", e.ip_updated or "") for e in fm.row_hosts]


def _score_order(scores: np.ndarray) -> np.ndarray:
    # Stable sort on the negated scores: ties keep input row order.
    return np.argsort(-scores, kind="stable")


def _ranked_by_score(fm: FeatureMatrix, scores: np.ndarray) -> list[RankedHost]:
    return [
        RankedHost(entry=fm.row_hosts[int(i)], rank=rank + 1, anomaly_score=float(scores[int(i)]))
        for rank, i in enumerate(_score_order(scores))
    ]


def _ranked_by_threshold(fm: FeatureMatrix, scores: np.ndarray,
                         threshold: float) -> list[RankedHost]:
    flagged_idx = [int(i) for i in _score_order(scores) if scores[int(i)] > threshold]
    flagged_set = set(flagged_idx)
    rest = [i for i in range(fm.n_rows) if i not in flagged_set]
    ranked = []
    for rank, i in enumerate(flagged_idx + rest):
        ranked.append(RankedHost(
            entry=fm.row_hosts[i],
            rank=rank + 1,
            anomaly_score=float(scores[i]),
            flagged=i in flagged_set,
        ))
    return ranked


def _cluster_sort_key(fm: FeatureMatrix, members: np.ndarray, size: int) -> tuple:
    smallest_ip = min((fm.row_hosts[int(i)].ip_updated or "") for i in members)
    return (size, smallest_ip)


def _ranked_by_clusters(fm: FeatureMatrix, clustering, seed: int) -> list[RankedHost]:
    order = []
    for cluster_id in range(clustering.k):
        members = clustering.members(cluster_id)
        order.append((_cluster_sort_key(fm, members, len(members)), cluster_id, members))
    order.sort(key=lambda item: item[0])
    ranked: list[RankedHost] = []
    for ordinal, (_, cluster_id, members) in enumerate(order):
        rng = rng_for(seed, STREAM_CLUSTER_ORDER, ordinal)
        shuffled = rng.permutation(np.sort(members))
        for i in shuffled:
            ranked.append(RankedHost(
                entry=fm.row_hosts[int(i)],
                rank=len(ranked) + 1,
                cluster=(cluster_id, len(members)),
            ))
    return ranked


def prioritize(fm: FeatureMatrix, cfg: PipelineConfig) -> list[RankedHost]:
    """Rank hosts for inspection (most suspicious first).

    Pruning is applied upstream by the caller; this operates on the rows of
    ``fm`` as given.
    """
    n = fm.n_rows
    if n < 2:
        raise ParameterError("prioritization needs at least two hosts")
    algo = cfg.algorithm
    if algo is Algorithm.SKNN:
        return _ranked_by_score(fm, knn_avg_distance(fm.rows, cfg.k))
    if algo is Algorithm.SIF:
        scores = isolation_forest_scores(
            fm.rows, trees=IFOREST_TREES, subsample=IFOREST_SUBSAMPLE,
            seed=cfg.seed, row_ids=_row_ids(fm),
        )
        return _ranked_by_score(fm, scores)
    if algo is Algorithm.LOF:
        return _ranked_by_threshold(fm, knn_avg_distance(fm.rows, cfg.k),
                                    LOF_SCORE_THRESHOLD)
    if algo is Algorithm.IF:
        scores = isolation_forest_scores(
            fm.rows, trees=IFOREST_TREES, subsample=IFOREST_SUBSAMPLE,
            seed=cfg.seed, row_ids=_row_ids(fm),
        )
        return _ranked_by_threshold(fm, scores, IF_SCORE_THRESHOLD)

    dist = pairwise_euclidean(fm.rows)
    if algo is Algorithm.SKM:
        rows = fm.rows
        selection = select_k(dist, lambda k, s: kmeans(rows, k, seed=s),
                             k_max=SILHOUETTE_K_MAX, seed=cfg.seed)
    elif algo is Algorithm.SHAC:
        merges = ward_linkage(dist)
        selection = select_k(dist, lambda k, s: cut_ward(merges, n, k),
                             k_max=SILHOUETTE_K_MAX, seed=cfg.seed)
    else:  # pragma: no cover - enum is exhaustive
        raise ParameterError(f"unknown algorithm {algo}")
    return _ranked_by_clusters(fm, selection.clustering, cfg.seed)


def selected_subset(ranked: list[RankedHost], cfg: PipelineConfig, oracle,
                    total_vulnerable: int | None = None) -> tuple[list[RankedHost], TriageReport]:
    """Inspection prefix under the stopping rule, shared with interactive triage."""
    if cfg.sc is None or cfg.sc <= 0:
        raise ParameterError("selection requires a positive stopping condition")
    report = run_selection(ranked, cfg.sc, oracle, total_vulnerable=total_vulnerable)
    return ranked[: report.inspected], report


def baseline_selection_report(ranked: list[RankedHost],
                              total_vulnerable: int | None = None) -> TriageReport:
    """Metrics when a threshold baseline's flagged prefix is the selection."""
    flagged = [host for host in ranked if host.flagged]
    if total_vulnerable is None:
        total_vulnerable = sum(bool(host.vulnerable) for host in ranked)
    tp = sum(bool(host.vulnerable) for host in flagged)
    fp = len(flagged) - tp
    precision = tp / (tp + fp) if flagged else 0.0
    if total_vulnerable == 0:
        recall = 1.0
    else:
        recall = tp / total_vulnerable
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return TriageReport(tp=tp, fp=fp, precision=precision, recall=recall, f1=f1,
                        inspected=len(flagged), zero_vulnerable=total_vulnerable == 0)
