"""Slow reference implementations used as test oracles."""

import math

import numpy as np


def dtw_enumerate(a, b, band=None):
    """DTW by depth-first enumeration of every warping path.

    Each path from (0, 0) to (m-1, n-1) with steps (1,0), (0,1), (1,1) is
    walked explicitly; the result is the square root of the smallest summed
    squared step cost.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = len(a), len(b)
    cost = [[float(np.sum((a[i] - b[j]) ** 2)) for j in range(n)] for i in range(m)]
    best = math.inf

    def walk(i, j, acc):
        nonlocal best
        if band is not None and abs(i - j) > band:
            return
        acc += cost[i][j]
        if i == m - 1 and j == n - 1:
            best = min(best, acc)
            return
        if i + 1 < m:
            walk(i + 1, j, acc)
        if j + 1 < n:
            walk(i, j + 1, acc)
        if i + 1 < m and j + 1 < n:
            walk(i + 1, j + 1, acc)

    walk(0, 0, 0.0)
    return math.sqrt(best)


def brute_force_search(ref, q, dist):
    """``(index, score)`` of every window, sorted by score then index."""
    m = len(q)
    scored = [(dist(ref[i : i + m], q), i) for i in range(len(ref) - m + 1)]
    scored.sort()
    return [(i, s) for s, i in scored]
