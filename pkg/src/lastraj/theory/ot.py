"""Exact optimal transport at desk scale.

Discrete measures with rational masses are expanded into equal-mass atoms,
which turns the transport problem into a min-cost perfect matching. Small
matchings are solved by enumerating permutations, larger ones with the
Hungarian method (shortest augmenting paths with row/column potentials).
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np

from ..errors import ArgumentError, CapacityError

EXHAUSTIVE_MAX_ATOMS = 8
MAX_SUPPORT = 12
MAX_ATOMS = 720


def hungarian(cost) -> tuple[np.ndarray, float]:
    """Min-cost assignment of rows to columns for an n x m cost matrix, n <= m.

    Returns ``(cols, total)`` where ``cols[i]`` is the column given to row i.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ArgumentError("cost must be a matrix")
    n, m = cost.shape
    if n > m:
        cols_t, total = hungarian(cost.T)
        rows = np.empty(n, dtype=np.int64)
        rows[:] = -1
        for j, i in enumerate(cols_t):
            rows[i] = j
        return rows, total
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0.0

    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # owner[j]: 1-based row matched to column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    cols = np.empty(n, dtype=np.int64)
    for j in range(1, m + 1):
        if owner[j]:
            cols[owner[j] - 1] = j - 1
    return cols, float(cost[np.arange(n), cols].sum())


def exhaustive_matching(cost) -> tuple[np.ndarray, float]:
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ArgumentError("exhaustive matching needs a square cost matrix")
    best, best_perm = math.inf, tuple(range(n))
    rows = np.arange(n)
    for perm in itertools.permutations(range(n)):
        total = cost[rows, perm].sum()
        if total < best:
            best, best_perm = total, perm
    return np.array(best_perm, dtype=np.int64), float(best if n else 0.0)


def min_cost_perfect_matching(cost) -> tuple[np.ndarray, float]:
    cost = np.asarray(cost, dtype=np.float64)
    if cost.shape[0] <= EXHAUSTIVE_MAX_ATOMS:
        return exhaustive_matching(cost)
    return hungarian(cost)


def rational_counts(masses, max_denominator: int = 10_000) -> tuple[np.ndarray, int]:
    """Integer atom counts and common denominator for masses on a rational grid."""
    fracs = []
    for m in np.asarray(masses, dtype=np.float64):
        f = Fraction(float(m)).limit_denominator(max_denominator)
        if abs(float(f) - m) > 1e-12:
            raise ArgumentError(f"mass {m!r} is not on a rational grid")
        fracs.append(f)
    den = 1
    for f in fracs:
        den = den * f.denominator // math.gcd(den, f.denominator)
    counts = np.array([int(f * den) for f in fracs], dtype=np.int64)
    return counts, den


def w1_by_matching(p, q, cost) -> float:
    """Exact transport cost between discrete p and q over a cost matrix ``cost[i, j]``.

    ``p`` indexes rows and ``q`` columns; both must sum to 1 and be rational.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    if cost.shape != (len(p), len(q)):
        raise ArgumentError("cost shape does not match the two mass vectors")
    if abs(p.sum() - 1) > 1e-9 or abs(q.sum() - 1) > 1e-9:
        raise ArgumentError("masses must sum to 1")
    if np.count_nonzero(p) + np.count_nonzero(q) > MAX_SUPPORT:
        raise CapacityError(
            f"combined support {np.count_nonzero(p) + np.count_nonzero(q)} exceeds {MAX_SUPPORT}"
        )
    cp, dp = rational_counts(p)
    cq, dq = rational_counts(q)
    den = dp * dq // math.gcd(dp, dq)
    if den > MAX_ATOMS:
        raise CapacityError(f"{den} atoms needed, limit is {MAX_ATOMS}")
    rows = np.repeat(np.arange(len(p)), cp * (den // dp))
    cols = np.repeat(np.arange(len(q)), cq * (den // dq))
    _, total = min_cost_perfect_matching(cost[np.ix_(rows, cols)])
    return total / den


def exact_w1_general(space, metric=None) -> float:
    """Exact W1 between ``space.p`` and ``space.q`` under ``metric`` (default: the space's own)."""
    metric = metric or space.metric
    pts = space.points
    live = [i for i in range(len(pts)) if space.p[i] > 0 or space.q[i] > 0]
    if len(live) > MAX_SUPPORT:
        raise CapacityError(f"combined support {len(live)} exceeds {MAX_SUPPORT}")
    cost = np.array([[metric(pts[i], pts[j]) for j in live] for i in live], dtype=np.float64)
    return w1_by_matching(np.asarray(space.p)[live], np.asarray(space.q)[live], cost)


def exact_w1_discrete_line(p, q) -> float:
    """W1 between distributions on the integers 0..n-1: sum of absolute CDF gaps."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ArgumentError("bin count mismatch")
    gap = np.cumsum(p - q)[:-1]
    return float(np.abs(gap).sum())


def w1_on_line(values_p, masses_p, values_q, masses_q) -> float:
    """Exact W1 between two discrete measures on the real line.

    Same CDF-gap sum as on the integer grid, weighted by the distance between
    consecutive support values.
    """
    vp = np.asarray(values_p, dtype=np.float64)
    vq = np.asarray(values_q, dtype=np.float64)
    grid = np.union1d(vp, vq)
    fp = np.zeros(len(grid))
    fq = np.zeros(len(grid))
    np.add.at(fp, np.searchsorted(grid, vp), np.asarray(masses_p, dtype=np.float64))
    np.add.at(fq, np.searchsorted(grid, vq), np.asarray(masses_q, dtype=np.float64))
    gap = np.cumsum(fp - fq)[:-1]
    return float(np.sum(np.abs(gap) * np.diff(grid)))
