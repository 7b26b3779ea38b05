"""Exact certification of the derived-variable Wasserstein bounds on finite spaces.

Every check returns a :class:`Check` with the two sides of an inequality
computed independently; ``holds`` compares them at ``TOL``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError, CapacityError
from ..metrics import C_JS, js_divergence, tv_discrete
from ..trajectory import DerivedKind, evaluate_derived
from .ot import exact_w1_discrete_line, exact_w1_general, w1_on_line
from .spaces import FiniteTrajectorySpace, random_space

TOL = 1e-9
FUNCTIONALS = ("Tot", "Avg", "Vis")


@dataclass(frozen=True)
class BoundInputs:
    t_max: int
    b: float
    eps_intra: float
    eps_inter: float
    delta: float
    c_js: float = C_JS

    def __post_init__(self):
        if self.t_max < 1 or self.b <= 0 or self.c_js <= 0:
            raise ArgumentError("t_max, b and c_js must be positive")
        if min(self.eps_intra, self.eps_inter, self.delta) < 0:
            raise ArgumentError("losses and divergence must be nonnegative")


@dataclass
class Check:
    name: str
    lhs: float
    rhs: float
    holds: bool
    details: dict = field(default_factory=dict)

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


def _leq(name, lhs, rhs, **details) -> Check:
    return Check(name, float(lhs), float(rhs), bool(lhs <= rhs + TOL), details)


def theorem1_bound(f: str, inputs: BoundInputs, tv_length: float | None = None) -> float:
    """Upper bound on W1 between real and generated laws of derived variable ``f``."""
    length_term = inputs.b * inputs.t_max * inputs.c_js * math.sqrt(inputs.delta)
    if f == "Tot":
        return inputs.t_max * (inputs.eps_intra + inputs.eps_inter) + length_term
    if f == "Avg":
        return inputs.eps_intra + length_term
    if f == "Vis":
        if tv_length is None or not 0 <= tv_length <= 1:
            raise ArgumentError("Vis bound needs tv_length in [0, 1]")
        return 2 * inputs.t_max * tv_length
    raise ArgumentError(f"unknown derived variable {f!r}; expected one of {FUNCTIONALS}")


_KINDS = {"Tot": DerivedKind.TOTAL_TIME, "Avg": DerivedKind.AVG_INTRA, "Vis": DerivedKind.VISIT_COUNT}


def functional_values(space: FiniteTrajectorySpace, f: str, exit_walk: bool) -> np.ndarray:
    if f not in _KINDS:
        raise ArgumentError(f"unknown derived variable {f!r}")
    return np.array([evaluate_derived(x, _KINDS[f], exit_walk=exit_walk) for x in space.points])


def pushforward_w1(space: FiniteTrajectorySpace, f: str, exit_walk: bool) -> float:
    """Exact W1 between the laws of f(X) under p and under q."""
    if f == "Vis":
        lp, lq = space.length_marginals()
        return exact_w1_discrete_line(lp, lq)
    v = functional_values(space, f, exit_walk)
    return w1_on_line(v, space.p, v, space.q)


# ---------------------------------------------------------------------------
# coupling used to measure the per-step losses

def _northwest(order, a, b, plan):
    """Comonotone coupling of masses ``a`` and ``b`` laid out along ``order``."""
    a = a.copy()
    b = b.copy()
    i = j = 0
    n = len(order)
    while i < n and j < n:
        t = min(a[i], b[j])
        if t > 0:
            plan[order[i], order[j]] += t
        a[i] -= t
        b[j] -= t
        if a[i] <= 1e-15:
            i += 1
        if j < n and b[j] <= 1e-15:
            j += 1


def certification_coupling(space: FiniteTrajectorySpace) -> np.ndarray:
    """Coupling plan of p and q: maximal on lengths, sorted by total time inside each length.

    Inside each length class the matched mass ``min(P(T=l), Q(T=l))`` is spread
    over the class conditionals and paired comonotonically. Leftover mass (total
    equal to the length TV) is paired as an independent product.
    """
    n = len(space.points)
    lengths = space.lengths()
    lp, lq = space.length_marginals()
    key = functional_values(space, "Tot", exit_walk=False)
    plan = np.zeros((n, n))
    for ell in np.unique(lengths):
        idx = np.flatnonzero(lengths == ell)
        m = min(lp[ell], lq[ell])
        if m <= 0:
            continue
        order = idx[np.lexsort((idx, key[idx]))]
        _northwest(order, space.p[order] / lp[ell] * m, space.q[order] / lq[ell] * m, plan)
    rp = np.clip(space.p - plan.sum(axis=1), 0, None)
    rq = np.clip(space.q - plan.sum(axis=0), 0, None)
    rest = 0.5 * (rp.sum() + rq.sum())
    if rest > 1e-15:
        plan += np.outer(rp, rq) / rest
    return plan


@dataclass
class CouplingStats:
    eps_intra: float
    eps_inter: float
    matched_intra: float
    matched_inter: float
    length_tail: float
    mismatch_mass: float


def coupling_stats(space: FiniteTrajectorySpace, plan: np.ndarray) -> CouplingStats:
    eps_i = eps_e = sum_i = sum_e = tail = mismatch = 0.0
    pts = space.points
    for i, j in zip(*np.nonzero(plan > 0)):
        w = plan[i, j]
        x, y = pts[i], pts[j]
        mn = min(x.length, y.length)
        di = float(np.abs(x.intra[:mn] - y.intra[:mn]).sum())
        de = float(np.abs(x.inter[:mn] - y.inter[:mn]).sum())
        eps_i += w * di / mn
        eps_e += w * de / mn
        sum_i += w * di
        sum_e += w * de
        tail += w * space.b * abs(x.length - y.length)
        mismatch += w * (x.length != y.length)
    return CouplingStats(eps_i, eps_e, sum_i, sum_e, tail, mismatch)


def measured_inputs(space: FiniteTrajectorySpace, c_js: float = C_JS):
    plan = certification_coupling(space)
    stats = coupling_stats(space, plan)
    lp, lq = space.length_marginals()
    inputs = BoundInputs(space.t_max, space.b, stats.eps_intra, stats.eps_inter,
                         js_divergence(space.p, space.q), c_js)
    return inputs, tv_discrete(lp, lq), stats, plan


def certify_theorem1(space: FiniteTrajectorySpace, f: str, c_js: float = C_JS,
                     rhs_scale: float = 1.0) -> Check:
    """Exact W1 of the f-laws against the bound evaluated at measured losses.

    Total time drops the exit walk (T-1 transits). ``rhs_scale`` exists only to
    force failures in tests of the reporting path.
    """
    inputs, tv_len, stats, _ = measured_inputs(space, c_js)
    lhs = pushforward_w1(space, f, exit_walk=False)
    rhs = rhs_scale * theorem1_bound(f, inputs, tv_len)
    return _leq(f"theorem1_{f}", lhs, rhs, eps_intra=inputs.eps_intra, eps_inter=inputs.eps_inter,
                delta=inputs.delta, tv_length=tv_len)


# ---------------------------------------------------------------------------
# supporting lemmas

def check_matched_step(space: FiniteTrajectorySpace) -> list[Check]:
    stats = coupling_stats(space, certification_coupling(space))
    return [
        _leq("matched_step_intra", stats.matched_intra, space.t_max * stats.eps_intra),
        _leq("matched_step_inter", stats.matched_inter, space.t_max * stats.eps_inter),
    ]


def check_length_tail(space: FiniteTrajectorySpace, c_js: float = C_JS) -> list[Check]:
    stats = coupling_stats(space, certification_coupling(space))
    lp, lq = space.length_marginals()
    tv = tv_discrete(lp, lq)
    mid = space.b * space.t_max * tv
    delta = js_divergence(space.p, space.q)
    return [
        _leq("length_tail_tv", stats.length_tail, mid, mismatch_mass=stats.mismatch_mass, tv_length=tv),
        _leq("length_tail_js", mid, space.b * space.t_max * c_js * math.sqrt(delta)),
    ]


def check_nullspace(space: FiniteTrajectorySpace, a) -> float:
    """Largest within-bucket gap of E[a(K(X)) | K=k] between p and q.

    ``a`` maps bucket ids to reals (array or callable). Buckets where either
    side has no mass are skipped.
    """
    k = space.buckets()
    values = np.array([a(int(kk)) if callable(a) else a[int(kk)] for kk in k], dtype=np.float64)
    wp, wq = space.bucket_weights()
    gap = 0.0
    for kk in range(len(wp)):
        if wp[kk] <= 0 or wq[kk] <= 0:
            continue
        sel = k == kk
        ep = float(np.dot(space.p[sel], values[sel]) / wp[kk])
        eq = float(np.dot(space.q[sel], values[sel]) / wq[kk])
        gap = max(gap, abs(ep - eq))
    return gap


def within_bucket_w1(space: FiniteTrajectorySpace) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(w, w_hat, W1_k) with W1_k exact between the bucket conditionals of p and q.

    A bucket empty on either side gets W1_k = 0: its conditional on the empty
    side can be chosen freely, and its mass is already paid for through the
    weight mismatch term.
    """
    k = space.buckets()
    wp, wq = space.bucket_weights()
    w1 = np.zeros(len(wp))
    for kk in range(len(wp)):
        if wp[kk] <= 0 or wq[kk] <= 0:
            continue
        idx = np.flatnonzero(k == kk)
        sub = FiniteTrajectorySpace(
            tuple(space.points[i] for i in idx), space.p[idx] / wp[kk], space.q[idx] / wq[kk],
            space.b, space.t_max, space.metric_fn,
        )
        w1[kk] = exact_w1_general(sub)
    return wp, wq, w1


MIXTURE_CONSTANTS = {"Tot": lambda s: s.b * s.t_max, "Avg": lambda s: s.b, "Vis": lambda s: s.t_max}


def check_mixture_decomposition(space: FiniteTrajectorySpace, f: str, bucket_terms=None) -> Check:
    """W1 of the f-laws against within-bucket W1 plus a bucket-weight mismatch term.

    Total time here sums every transit so that it is 1-Lipschitz for the
    trajectory semi-metric; VisitCount is (1/B)-Lipschitz, fine for B >= 1.
    """
    wp, wq, w1 = bucket_terms if bucket_terms is not None else within_bucket_w1(space)
    lhs = pushforward_w1(space, f, exit_walk=True)
    c_f = MIXTURE_CONSTANTS[f](space)
    rhs = float(np.dot(wp, w1)) + c_f * 0.5 * float(np.abs(wp - wq).sum())
    return _leq(f"mixture_{f}", lhs, rhs)


def check_length_lower_bound(space: FiniteTrajectorySpace, w1_global: float | None = None) -> Check:
    """Global W1 is at least B times the bucket-weight TV (every cross-bucket move pays B)."""
    if w1_global is None:
        w1_global = exact_w1_general(space)
    wp, wq = space.bucket_weights()
    lower = space.b * 0.5 * float(np.abs(wp - wq).sum())
    # inequality points the other way: lower <= w1_global
    return _leq("length_lower_bound", lower, w1_global)


# ---------------------------------------------------------------------------
# bucket-separable Lipschitz critics

def lipschitz_vertices(dist: np.ndarray, tol: float = 1e-12) -> list[np.ndarray]:
    """Vertices of {phi : phi[0] = 0, |phi_i - phi_j| <= dist[i, j]}.

    Each vertex has a spanning tree of tight constraints, so it is reached by
    growing an assignment from point 0 with phi_v = phi_u +/- dist[u, v].
    """
    n = len(dist)
    if n == 0:
        return []
    found: dict[tuple, np.ndarray] = {}
    start = (0,), (0.0,)
    stack = [start]
    seen = {start}
    while stack:
        assigned, values = stack.pop()
        if len(assigned) == n:
            phi = np.empty(n)
            phi[list(assigned)] = values
            found[tuple(np.round(phi, 9))] = phi
            continue
        for v in range(n):
            if v in assigned:
                continue
            for u, phi_u in zip(assigned, values):
                for sign in (1.0, -1.0):
                    cand = phi_u + sign * dist[u, v]
                    if all(abs(cand - pw) <= dist[w, v] + tol for w, pw in zip(assigned, values)):
                        pairs = sorted(zip(assigned + (v,), values + (cand,)))
                        state = (tuple(a for a, _ in pairs), tuple(round(b, 9) for _, b in pairs))
                        if state not in seen:
                            seen.add(state)
                            stack.append((tuple(a for a, _ in pairs), tuple(b for _, b in pairs)))
    return list(found.values())


def bucket_ipm_sup(space: FiniteTrajectorySpace, max_points: int = 6) -> float:
    """sup of E_p[phi] - E_q[phi] over bucket-separable 1-Lipschitz critics, by vertex enumeration."""
    k = space.buckets()
    total = 0.0
    for kk in np.unique(k):
        idx = [i for i in np.flatnonzero(k == kk) if space.p[i] > 0 or space.q[i] > 0]
        if not idx:
            continue
        if len(idx) > max_points:
            raise CapacityError(f"bucket {kk} has {len(idx)} support points, limit {max_points}")
        dist = np.array([[space.metric(space.points[i], space.points[j]) for j in idx] for i in idx])
        diff = space.p[idx] - space.q[idx]
        best = max(float(np.dot(phi, diff)) for phi in lipschitz_vertices(dist))
        total += best
    return total


def check_bucket_ipm(space: FiniteTrajectorySpace, bucket_terms=None) -> Check:
    """With matched bucket weights, sum_k w_k W1_k equals the bucket-separable critic sup."""
    wp, wq, w1 = bucket_terms if bucket_terms is not None else within_bucket_w1(space)
    if np.abs(wp - wq).max() > 1e-12:
        raise ArgumentError("bucket weights differ; the identity needs matched weights")
    primal = float(np.dot(wp, w1))
    dual = bucket_ipm_sup(space)
    return Check("bucket_ipm", dual, primal, abs(primal - dual) <= TOL)


# ---------------------------------------------------------------------------
# sweeps

def space_checks(space: FiniteTrajectorySpace, rng, c_js: float = C_JS, rhs_scale: float = 1.0,
                 lemmas: bool = True) -> list[Check]:
    checks = [certify_theorem1(space, f, c_js, rhs_scale) for f in FUNCTIONALS]
    if not lemmas:
        return checks
    checks += check_matched_step(space)
    checks += check_length_tail(space, c_js)
    n_buckets = int(space.bucket_of_length.max()) + 1
    gap = check_nullspace(space, rng.normal(size=n_buckets) * 10)
    checks.append(Check("nullspace", gap, 1e-12, gap < 1e-12))
    terms = within_bucket_w1(space)
    checks += [check_mixture_decomposition(space, f, terms) for f in FUNCTIONALS]
    checks.append(check_length_lower_bound(space))
    if rhs_scale != 1.0:
        # debugging aid: shrink every inequality's right-hand side
        checks = checks[:len(FUNCTIONALS)] + [
            c if c.name == "nullspace" else _leq(c.name, c.lhs, c.rhs * rhs_scale, **c.details)
            for c in checks[len(FUNCTIONALS):]
        ]
    return checks


@dataclass
class SweepResult:
    rows: list[tuple[int, Check]] = field(default_factory=list)
    errors: list[tuple[int, str]] = field(default_factory=list)
    worst_tv_js_ratio: float = 0.0

    @property
    def all_hold(self) -> bool:
        return all(c.holds for _, c in self.rows)

    def summary(self) -> dict[str, tuple[int, int]]:
        out: dict[str, tuple[int, int]] = {}
        for _, c in self.rows:
            ok, total = out.get(c.name, (0, 0))
            out[c.name] = (ok + c.holds, total + 1)
        return out

    def summary_lines(self) -> list[str]:
        lines = []
        for name, (ok, total) in self.summary().items():
            status = "holds" if ok == total else "FAILS"
            lines.append(f"{name}: {status} ({ok}/{total})")
        lines.append(f"worst TV/sqrt(JS) ratio: {self.worst_tv_js_ratio:.6f} (constant {C_JS:.6f})")
        for space_id, msg in self.errors:
            lines.append(f"space {space_id}: skipped ({msg})")
        return lines

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["space_id", "check", "lhs", "rhs", "slack", "holds"])
        for space_id, c in self.rows:
            writer.writerow([space_id, c.name, f"{c.lhs:.12g}", f"{c.rhs:.12g}", f"{c.slack:.12g}",
                             str(c.holds).lower()])
        return buf.getvalue()


def run_sweep(n_spaces: int, seed: int = 0, t_max_ceiling: int = 4, b_ceiling: float = 10,
              max_support: int = 6, rhs_scale: float = 1.0, lemmas: bool = True,
              ipm: bool = True) -> SweepResult:
    """Certify every check on ``n_spaces`` random spaces; space i uses the stream (seed, i)."""
    result = SweepResult()
    for i in range(n_spaces):
        rng = np.random.default_rng([seed, i])
        try:
            space = random_space(rng, t_max_ceiling, b_ceiling, max_support)
            for c in space_checks(space, rng, rhs_scale=rhs_scale, lemmas=lemmas):
                result.rows.append((i, c))
            if ipm:
                matched = random_space(rng, t_max_ceiling, b_ceiling, max_support, matched_weights=True)
                result.rows.append((i, check_bucket_ipm(matched)))
            js = js_divergence(space.p, space.q)
            if js > 0:
                tv = tv_discrete(space.p, space.q)
                result.worst_tv_js_ratio = max(result.worst_tv_js_ratio, tv / math.sqrt(js))
        except CapacityError as exc:
            result.errors.append((i, str(exc)))
    return result
