"""Pairwise Euclidean distances.

On one-hot rows the distance reduces to sqrt(2 * d) where d is the number of
ports whose labels differ.
"""
from __future__ import annotations

import numpy as np


def pairwise_euclidean(rows: np.ndarray) -> np.ndarray:
    """Full symmetric distance matrix with an exactly zero diagonal."""
    rows = np.asarray(rows, dtype=np.float64)
    sq = np.einsum("ij,ij->i", rows, rows)
    d2 = sq[:, None] + sq[None, :] - 2.0 * rows @ rows.T
    np.maximum(d2, 0.0, out=d2)
    d2 = (d2 + d2.T) / 2.0
    dist = np.sqrt(d2)
    np.fill_diagonal(dist, 0.0)
    return dist
