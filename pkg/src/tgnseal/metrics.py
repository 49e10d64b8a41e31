"""Ranking and significance metrics for run comparison."""

from __future__ import annotations

import math

import numpy as np

EXACT_LIMIT = 400  # max n1*n2 for the exact Mann-Whitney null distribution


def average_precision(scores, labels) -> float:
    """AP over a score-ranked list: mean of precision at each positive's rank.

    Descending by score, ties broken by original index (stable). Raises on
    zero positives.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    if not np.any(labels == 1):
        raise ValueError("average precision undefined without positives")
    order = np.lexsort((np.arange(len(scores)), -scores))
    ranked = labels[order]
    cum_pos = np.cumsum(ranked == 1)
    ranks = np.arange(1, len(scores) + 1)
    precisions = cum_pos[ranked == 1] / ranks[ranked == 1]
    return float(precisions.mean())


def _rankdata(x: np.ndarray) -> np.ndarray:
    """Average ranks (1-based) with ties sharing the mean rank."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(sx):
        j = i
        while j + 1 < len(sx) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_u_counts(n1: int, n2: int) -> np.ndarray:
    """counts[u] = #arrangements of n1-vs-n2 distinct ranks with U(a) = u.

    Recurrence on the largest pooled value: an `a` beats all j `b`s present,
    a `b` beats nothing.
    """
    table: dict[tuple[int, int], np.ndarray] = {}
    for i in range(n1 + 1):
        for j in range(n2 + 1):
            arr = np.zeros(i * j + 1)
            if i == 0 or j == 0:
                arr[0] = 1.0
            else:
                arr[j:] += table[(i - 1, j)]
                arr[: i * (j - 1) + 1] += table[(i, j - 1)]
            table[(i, j)] = arr
    return table[(n1, n2)]


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def mann_whitney_u(a, b, alternative: str = "two-sided") -> tuple[float, float]:
    """Mann-Whitney U of sample `a` against `b`, and the test's p-value.

    U counts pairs with a_i > b_j plus half the ties. The p-value is exact
    (full null-distribution enumeration) when n1*n2 <= 400 and there are no
    ties; otherwise the normal approximation with tie and continuity
    corrections applies. `alternative` is two-sided (default), greater, or
    less.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n1, n2 = len(a), len(b)
    if n1 < 1 or n2 < 1:
        raise ValueError("both samples must be non-empty")
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")

    pooled = np.concatenate([a, b])
    ranks = _rankdata(pooled)
    u_a = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)

    _, tie_counts = np.unique(pooled, return_counts=True)
    has_ties = bool(np.any(tie_counts > 1))

    if not has_ties and n1 * n2 <= EXACT_LIMIT:
        counts = _exact_u_counts(n1, n2)
        total = counts.sum()
        u_int = int(round(u_a))
        p_le = counts[: u_int + 1].sum() / total
        p_ge = counts[u_int:].sum() / total
        if alternative == "two-sided":
            p = min(1.0, 2.0 * min(p_le, p_ge))
        elif alternative == "greater":
            p = p_ge
        else:
            p = p_le
        return u_a, float(p)

    n = n1 + n2
    mu = n1 * n2 / 2.0
    tie_term = float((tie_counts**3 - tie_counts).sum()) / (n * (n - 1))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return u_a, 1.0  # all pooled values identical
    sd = math.sqrt(var)
    if alternative == "two-sided":
        z = max(0.0, (abs(u_a - mu) - 0.5) / sd)
        p = min(1.0, 2.0 * _norm_sf(z))
    elif alternative == "greater":
        p = _norm_sf((u_a - mu - 0.5) / sd)
    else:
        p = 1.0 - _norm_sf((u_a - mu + 0.5) / sd)
    return u_a, float(p)
