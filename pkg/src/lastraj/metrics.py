"""One-dimensional two-sample distances, discrete divergences and the derived-variable KS report."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ArgumentError
from .trajectory import DerivedKind, Trajectory, evaluate_derived

C_JS = math.sqrt(2.0)


def _sample(values, name="sample") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ArgumentError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ArgumentError(f"{name} contains non-finite values")
    return arr


def _distribution(masses, name="distribution", atol=1e-12) -> np.ndarray:
    arr = np.asarray(masses, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ArgumentError(f"{name} has no bins")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ArgumentError(f"{name} has negative or non-finite mass")
    if abs(arr.sum() - 1.0) > atol:
        raise ArgumentError(f"{name} sums to {arr.sum()!r}, not 1")
    return arr


def _pair(p, q):
    p = _distribution(p, "p")
    q = _distribution(q, "q")
    if p.shape != q.shape:
        raise ArgumentError(f"bin count mismatch: {p.size} vs {q.size}")
    return p, q


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic, sup_x |F_a(x) - F_b(x)|.

    Exact: both empirical CDFs are evaluated at every observed value.
    """
    a = np.sort(_sample(a, "a"))
    b = np.sort(_sample(b, "b"))
    grid = np.union1d(a, b)
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def weighted_cdf_ks(bins_a: np.ndarray, bins_b: np.ndarray) -> float:
    """KS between two mass vectors over the same ordered bins (cumulative mass functions)."""
    a = np.asarray(bins_a, dtype=np.float64)
    b = np.asarray(bins_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ArgumentError("bin count mismatch")
    sa, sb = a.sum(), b.sum()
    if sa <= 0 and sb <= 0:
        return 0.0
    if sa <= 0 or sb <= 0:
        return 1.0
    return float(np.max(np.abs(np.cumsum(a) / sa - np.cumsum(b) / sb)))


def w1_empirical_1d(a, b) -> float:
    """Exact 1-Wasserstein distance between two equal-weight empirical measures.

    Equal sizes use the sorted order-statistic formula; unequal sizes integrate
    |F_a^-1(u) - F_b^-1(u)| over u exactly (both inverses are step functions).
    """
    a = np.sort(_sample(a, "a"))
    b = np.sort(_sample(b, "b"))
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    n, m = a.size, b.size
    # breakpoints of both quantile functions on [0, 1]
    u = np.union1d(np.arange(n + 1) / n, np.arange(m + 1) / m)
    mids = 0.5 * (u[:-1] + u[1:])
    qa = a[np.minimum((mids * n).astype(np.int64), n - 1)]
    qb = b[np.minimum((mids * m).astype(np.int64), m - 1)]
    return float(np.sum(np.abs(qa - qb) * np.diff(u)))


def tv_discrete(p, q) -> float:
    p, q = _pair(p, q)
    return float(0.5 * np.abs(p - q).sum())


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats with 0 log 0 = 0; infinite when p has mass where q has none."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    support = p > 0
    if np.any(q[support] == 0):
        return math.inf
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def js_divergence(p, q) -> float:
    p, q = _pair(p, q)
    mid = 0.5 * (p + q)
    return max(0.0, 0.5 * kl_divergence(p, mid) + 0.5 * kl_divergence(q, mid))


# ---------------------------------------------------------------------------
# derived-variable report

@dataclass
class KsRow:
    metric: str
    ks: float
    n_real: int
    n_gen: int


@dataclass
class KsReport:
    rows: list[KsRow] = field(default_factory=list)

    @property
    def mean(self) -> float:
        if not self.rows:
            return 0.0
        return float(np.mean([r.ks for r in self.rows]))

    def get(self, metric: str) -> float:
        for row in self.rows:
            if row.metric == metric:
                return row.ks
        raise KeyError(metric)

    def as_dict(self) -> dict[str, float]:
        return {r.metric: r.ks for r in self.rows}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "ks", "n_real", "n_gen"])
        for r in self.rows:
            writer.writerow([r.metric, f"{r.ks:.6f}", r.n_real, r.n_gen])
        n_real = self.rows[0].n_real if self.rows else 0
        n_gen = self.rows[0].n_gen if self.rows else 0
        writer.writerow(["MeanAcrossMetrics", f"{self.mean:.6f}", n_real, n_gen])
        return buf.getvalue()

    def to_text(self) -> str:
        width = max([len(r.metric) for r in self.rows] + [len("Mean across metrics")])
        lines = [f"{'derived variable':<{width}}  {'KS':>8}  {'n_real':>7}  {'n_gen':>7}"]
        for r in self.rows:
            lines.append(f"{r.metric:<{width}}  {r.ks:8.4f}  {r.n_real:7d}  {r.n_gen:7d}")
        lines.append(f"{'Mean across metrics':<{width}}  {self.mean:8.4f}")
        return "\n".join(lines)


def derived_values(trajs: Sequence[Trajectory], kind: DerivedKind, meta=None, exit_walk=True):
    values = [evaluate_derived(t, kind, meta, exit_walk=exit_walk) for t in trajs]
    if kind.is_histogram:
        return np.vstack(values)
    return np.asarray(values, dtype=np.float64)


def derived_report(real_set: Sequence[Trajectory], gen_set: Sequence[Trajectory],
                   specs: Sequence[DerivedKind], meta=None) -> KsReport:
    """KS per derived variable between a real and a generated trajectory set.

    Scalar variables use the two-sample KS. Histogram variables pool each set's
    per-bin mass across trajectories and compare cumulative mass functions with
    bins in ascending id order.
    """
    if not real_set or not gen_set:
        raise ArgumentError("both trajectory sets must be nonempty")
    report = KsReport()
    for kind in specs:
        if isinstance(kind, str):
            kind = DerivedKind.parse(kind)
        real = derived_values(real_set, kind, meta)
        gen = derived_values(gen_set, kind, meta)
        if kind.is_histogram:
            ks = weighted_cdf_ks(real.sum(axis=0), gen.sum(axis=0))
        else:
            ks = ks_distance(real, gen)
        report.rows.append(KsRow(kind.value, ks, len(real_set), len(gen_set)))
    return report
