"""Two-sided Mann-Whitney U test with midranks.

Small samples (either side of size <= 8) use the exact permutation
distribution of U conditional on the pooled values, which handles ties;
larger samples use the normal approximation with tie correction and
continuity correction.
"""
from __future__ import annotations

import math

import numpy as np

from .outliers import ParameterError

EXACT_MAX_SMALLER_SIDE = 8


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _tie_term(values: np.ndarray) -> float:
    _, counts = np.unique(values, return_counts=True)
    return float((counts.astype(np.float64) ** 3 - counts).sum())


def _exact_two_sided_p(ranks: np.ndarray, n1: int, observed_u: float) -> float:
    """P(|U' - mu| >= |U - mu|) over all splits of the pooled sample.

    Counted with a subset-sum table over doubled midranks (integers), so tied
    values are handled exactly. Counts stay integral in float64 for any size
    reachable from the exact branch.
    """
    n = len(ranks)
    scaled = np.rint(ranks * 2).astype(np.int64)
    max_sum = int(scaled.sum())
    table = np.zeros((n1 + 1, max_sum + 1))
    table[0, 0] = 1.0
    for r in scaled:
        upper = min(n1, n)
        for j in range(upper, 0, -1):
            table[j, r:] += table[j - 1, :max_sum + 1 - r]
    counts = table[n1]
    sums = np.arange(max_sum + 1) / 2.0
    u_values = sums - n1 * (n1 + 1) / 2.0
    mu = n1 * (n - n1) / 2.0
    extreme = np.abs(u_values - mu) >= abs(observed_u - mu) - 1e-12
    return float(counts[extreme].sum() / counts.sum())


def _normal_two_sided_p(u: float, n1: int, n2: int, tie_term: float) -> float:
    n = n1 + n2
    mu = n1 * n2 / 2.0
    sigma_sq = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if sigma_sq <= 0.0:
        return 1.0  # every pooled value identical
    z = max(abs(u - mu) - 0.5, 0.0) / math.sqrt(sigma_sq)
    return math.erfc(z / math.sqrt(2.0))


def mann_whitney_u(a, b) -> tuple[float, float]:
    """Return (U of the first sample, two-sided p-value)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ParameterError("both samples must be non-empty")
    n1, n2 = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    if min(n1, n2) > EXACT_MAX_SMALLER_SIDE:
        p = _normal_two_sided_p(u, n1, n2, _tie_term(pooled))
    else:
        p = _exact_two_sided_p(ranks, n1, u)
    return u, min(p, 1.0)
