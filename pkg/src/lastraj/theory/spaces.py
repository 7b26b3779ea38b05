"""Finite trajectory spaces with two distributions, for exact bound checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError
from ..trajectory import Trajectory, traj_semimetric


@dataclass(frozen=True, eq=False)
class FiniteTrajectorySpace:
    """Enumerated support with a data distribution ``p`` and a generator distribution ``q``.

    ``points`` are usually trajectories; any hashable objects work as long as
    ``metric`` understands them.
    """

    points: tuple
    p: np.ndarray
    q: np.ndarray
    b: float = 1.0
    t_max: int = 1
    metric_fn: object = None
    bucket_of_length: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        q = np.asarray(self.q, dtype=np.float64)
        if p.shape != (len(self.points),) or q.shape != p.shape:
            raise ArgumentError("mass vectors must match the support")
        for name, m in (("p", p), ("q", q)):
            if np.any(m < 0) or abs(m.sum() - 1) > 1e-12:
                raise ArgumentError(f"{name} is not a distribution")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        for x in self.points:
            if isinstance(x, Trajectory):
                if x.length > self.t_max:
                    raise ArgumentError("support point longer than t_max")
                if np.any(x.intra + x.inter > self.b + 1e-12):
                    raise ArgumentError("support point breaks the per-step bound")

    def metric(self, x, y) -> float:
        if self.metric_fn is not None:
            return self.metric_fn(x, y)
        return traj_semimetric(x, y, self.b)

    def lengths(self) -> np.ndarray:
        return np.array([x.length for x in self.points], dtype=np.int64)

    def length_marginals(self) -> tuple[np.ndarray, np.ndarray]:
        """Length laws of p and q as vectors over 0..t_max."""
        lengths = self.lengths()
        lp = np.bincount(lengths, weights=self.p, minlength=self.t_max + 1)
        lq = np.bincount(lengths, weights=self.q, minlength=self.t_max + 1)
        return lp, lq

    def buckets(self) -> np.ndarray:
        if self.bucket_of_length is None:
            raise ArgumentError("space has no bucket map")
        return self.bucket_of_length[self.lengths()]

    def bucket_weights(self) -> tuple[np.ndarray, np.ndarray]:
        k = self.buckets()
        n = int(self.bucket_of_length.max()) + 1
        return (np.bincount(k, weights=self.p, minlength=n), np.bincount(k, weights=self.q, minlength=n))

    def with_masses(self, p, q) -> "FiniteTrajectorySpace":
        return FiniteTrajectorySpace(self.points, p, q, self.b, self.t_max, self.metric_fn,
                                     self.bucket_of_length, dict(self.meta))


def _composition(rng, total: int, parts: int) -> np.ndarray:
    """Random nonnegative integer vector of length ``parts`` summing to ``total``."""
    return rng.multinomial(total, rng.dirichlet(np.full(parts, 0.7)))


def random_bucket_map(rng, t_max: int) -> np.ndarray:
    """Contiguous partition of lengths 1..t_max into buckets (index 0 unused)."""
    cuts = rng.random(t_max - 1) < 0.5 if t_max > 1 else np.zeros(0, dtype=bool)
    ids = np.concatenate([[0], np.cumsum(cuts)])
    return np.concatenate([[0], ids]).astype(np.int64)


def random_space(rng, t_max_ceiling: int = 4, b_ceiling: float = 10, max_support: int = 6,
                 grid=(0, 1, 2), denominator: int = 12, matched_weights: bool = False
                 ) -> FiniteTrajectorySpace:
    """Draw a random finite space on an integer time grid.

    Masses are multiples of ``1/denominator``. With ``matched_weights`` both
    distributions put identical mass on every bucket of the random length
    partition.
    """
    t_max = int(rng.integers(1, t_max_ceiling + 1))
    b_low = 2 * max(grid)
    b = float(rng.integers(min(b_low, int(b_ceiling)), int(b_ceiling) + 1))
    grid = np.array([g for g in grid if 2 * g <= b] or [0])
    n = int(rng.integers(1, max_support + 1))

    seen, points = set(), []
    for _ in range(20 * n):
        if len(points) == n:
            break
        T = int(rng.integers(1, t_max + 1))
        intra = rng.choice(grid, size=T)
        inter = rng.choice(grid, size=T)
        key = (tuple(intra), tuple(inter))
        if key in seen:
            continue
        seen.add(key)
        points.append(Trajectory(np.zeros(T, dtype=np.int64), intra, inter, ()))
    n = len(points)
    bucket_map = random_bucket_map(rng, t_max)

    mode = rng.random()
    p_counts = _composition(rng, denominator, n)
    if matched_weights:
        k = bucket_map[[x.length for x in points]]
        q_counts = np.zeros(n, dtype=np.int64)
        for kk in np.unique(k):
            members = np.flatnonzero(k == kk)
            q_counts[members] = _composition(rng, int(p_counts[members].sum()), len(members))
    elif mode < 0.15:
        q_counts = p_counts.copy()
    elif mode < 0.35:
        # small perturbation of p: move a few units
        q_counts = p_counts.copy()
        for _ in range(int(rng.integers(1, 3))):
            src = rng.choice(np.flatnonzero(q_counts))
            q_counts[src] -= 1
            q_counts[rng.integers(n)] += 1
    else:
        q_counts = _composition(rng, denominator, n)
    return FiniteTrajectorySpace(
        tuple(points), p_counts / denominator, q_counts / denominator, b=b, t_max=t_max,
        bucket_of_length=bucket_map,
    )
