"""From-scratch numeric core: distances, outlier scores, clustering, rank stats."""
from .clustering import (
    Clustering,
    KSelection,
    SilhouetteReport,
    WardMerge,
    cut_ward,
    hac_ward,
    kmeans,
    select_k,
    silhouette,
    ward_linkage,
)
from .distance import pairwise_euclidean
from .outliers import (
    IsolationForestModel,
    ParameterError,
    average_path_length,
    fit_isolation_forest,
    isolation_forest_scores,
    knn_avg_distance,
    score_isolation_forest,
)
from .seeds import child_seed, rng_for
from .stats import mann_whitney_u

__all__ = [
    "Clustering",
    "KSelection",
    "SilhouetteReport",
    "WardMerge",
    "IsolationForestModel",
    "ParameterError",
    "average_path_length",
    "child_seed",
    "cut_ward",
    "fit_isolation_forest",
    "hac_ward",
    "isolation_forest_scores",
    "kmeans",
    "knn_avg_distance",
    "mann_whitney_u",
    "pairwise_euclidean",
    "rng_for",
    "score_isolation_forest",
    "select_k",
    "silhouette",
    "ward_linkage",
]
