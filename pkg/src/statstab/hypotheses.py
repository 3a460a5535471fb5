"""Finite-horizon falsification checks for the expansion, recurrence and
preimage-density hypotheses.

None of these checks proves anything: each samples finitely many orbits or
preimages and reports the horizon it used.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import HypothesisConstantsInvalid, NoAdmissibleSegments, OrbitEscapedDomain
from .maps import IntervalMap


@dataclass(frozen=True)
class HypothesisSet:
    lam: float  # expansion rate outside the critical neighbourhood
    Lambda: float  # growth rate along critical orbits
    kappa: float
    alpha: float  # slow-recurrence exponent
    delta: float  # critical neighbourhood radius, e^-k
    ell_hat: float  # strict upper bound on critical orders
    ell_lo: float  # strict lower bound on critical orders

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not (v > 0 and math.isfinite(v)):
                raise HypothesisConstantsInvalid(f"{name}={v} must be positive and finite")
        if not self.ell_hat > self.ell_lo:
            raise HypothesisConstantsInvalid("ell_hat must exceed ell_lo")

    @property
    def alpha_bound(self):
        return self.lam / (5.0 * self.ell_hat)

    @property
    def alpha_ok(self):
        return self.alpha < self.alpha_bound

    @classmethod
    def from_k(cls, k, **kw):
        return cls(delta=math.exp(-k), **kw)

    def orders_ok(self, m: IntervalMap):
        return all(self.ell_lo < c.order < self.ell_hat for c in m.critical_points)


DEFAULT_HYPOTHESES = {
    "chebyshev": dict(lam=0.3, Lambda=1.38, kappa=0.05, alpha=0.01, delta=math.exp(-3), ell_hat=2.5, ell_lo=0.5),
    "quadratic": dict(lam=0.3, Lambda=1.0, kappa=0.05, alpha=0.01, delta=math.exp(-3), ell_hat=2.5, ell_lo=0.5),
    "lorenz_singular": dict(lam=0.4, Lambda=1.0, kappa=1.0, alpha=0.005, delta=math.exp(-3), ell_hat=2.5, ell_lo=0.5),
    "lorenz_crit_sing": dict(lam=0.3, Lambda=1.5, kappa=0.05, alpha=0.01, delta=math.exp(-4), ell_hat=2.5, ell_lo=0.5),
}


def default_hypotheses(family):
    return HypothesisSet(**DEFAULT_HYPOTHESES.get(family, DEFAULT_HYPOTHESES["lorenz_singular"]))


@dataclass
class HypothesisReport:
    which: str
    horizon: int
    verdict: bool
    witness_k: int | None = None
    lambda_est: float | None = None
    kappa_est: float | None = None
    Lambda_est: float | None = None
    max_gap: float | None = None
    min_critical_distance: float | None = None
    witnesses: dict = field(default_factory=dict)

    def to_json(self):
        out = {
            "which": self.which,
            "horizon": self.horizon,
            "verdict": "pass" if self.verdict else "fail",
            "witness_k": self.witness_k,
            "lambda_est": self.lambda_est,
            "kappa_est": self.kappa_est,
            "Lambda_est": self.Lambda_est,
            "max_gap": self.max_gap,
            "min_critical_distance": self.min_critical_distance,
        }
        summary = {}
        for k, v in self.witnesses.items():
            if isinstance(v, dict) or (isinstance(v, (list, np.ndarray)) and len(v) > 20):
                continue  # long traces are kept on the object only
            summary[k] = np.asarray(v).tolist() if isinstance(v, np.ndarray) else v
        out["witnesses"] = summary
        return out


def _critical_value(m: IntervalMap, spec):
    k = m.branch_index(spec.location, spec.side)
    return float(m.branches[k].value(spec.location))


def check_H2(m: IntervalMap, hyp: HypothesisSet, N: int) -> HypothesisReport:
    """Slow recurrence and exponential growth along every critical orbit up to N."""
    if N < 1:
        raise ValueError("N must be >= 1")
    crit = [i for i, c in enumerate(m.critical_points) if c.is_critical]
    if not crit:
        return HypothesisReport("H2", N, True, witnesses={"vacuous": True})
    a, b = m.domain
    verdict, witness_k, lam_min = True, None, math.inf
    recurrence_k = growth_k = None
    traces = {}
    for i in crit:
        spec = m.critical_points[i]
        x = _critical_value(m, spec)
        dist = np.empty(N)
        logder = np.empty(N)
        total = 0.0
        for k in range(1, N + 1):
            if x < a - 1e-9 or x > b + 1e-9:
                raise OrbitEscapedDomain(f"c_{k} = {x} left the domain", operation="check_H2", k=k)
            x = min(max(x, a), b)
            d = m.critical_distance(x)
            dist[k - 1] = d
            if d == 0.0:
                lg = -math.inf
            else:
                lg = float(m.apply_log_derivative(np.array([x]))[0])
            total += lg
            logder[k - 1] = total
            lam_min = min(lam_min, total / k)
            slow = d >= hyp.delta * math.exp(-hyp.alpha * k)
            grows = total >= hyp.Lambda * k
            if not slow and recurrence_k is None:
                recurrence_k = k
            if not grows and growth_k is None:
                growth_k = k
            if not (slow and grows) and verdict:
                verdict, witness_k = False, k
            if d == 0.0:
                dist, logder = dist[:k], logder[:k]
                break
            x = float(m.apply(np.array([x]))[0])
        traces[i] = {"D": dist, "log_deriv": logder}
    first = traces[crit[0]]
    return HypothesisReport(
        "H2", N, verdict, witness_k=witness_k, Lambda_est=lam_min,
        witnesses={"critical_distance": first["D"], "log_derivative": first["log_deriv"],
                   "per_spec": traces, "recurrence_k": recurrence_k, "growth_k": growth_k,
                   "min_critical_distance": float(min(t["D"].min() for t in traces.values()))},
    )


def check_H1(m: IntervalMap, hyp: HypothesisSet, sample_count: int, n_max: int, seed=0) -> HypothesisReport:
    """Sampled expansion along orbit segments that stay outside the delta-neighbourhood.

    ``lambda_est`` is the smallest average log-derivative over admissible
    segments whose length lies in the upper half of the achieved range; the
    constant ``kappa_est`` is the smallest |(f^n)'| / (delta e^{lam n}) over all
    admissible segments, using the configured rate.
    """
    if sample_count < 1 or n_max < 1:
        raise ValueError("sample_count and n_max must be >= 1")
    rng = np.random.default_rng(seed)
    a, b = m.domain
    x = rng.uniform(a, b, sample_count)
    alive = np.ones(sample_count, bool)
    total = np.zeros(sample_count)
    mins = np.full(n_max + 1, np.inf)
    kappa = math.inf
    for n in range(1, n_max + 1):
        alive &= m.critical_distance(x) > hyp.delta
        if not alive.any():
            break
        total[alive] += m.apply_log_derivative(x[alive])
        mins[n] = total[alive].min()
        kappa = min(kappa, float(np.exp(total[alive] - hyp.lam * n).min()) / hyp.delta)
        x = m.apply(x)
    lengths = np.flatnonzero(np.isfinite(mins))
    if lengths.size == 0:
        raise NoAdmissibleSegments("no sampled orbit starts outside the neighbourhood", operation="check_H1")
    n_hi = int(lengths.max())
    window = lengths[lengths >= max(1, n_hi // 2)]
    lam_est = float(np.min(mins[window] / window))
    verdict = lam_est >= hyp.lam and kappa >= hyp.kappa
    return HypothesisReport("H1", n_hi, verdict, lambda_est=lam_est, kappa_est=kappa,
                            witnesses={"segment_min_log_derivative": mins[1:n_hi + 1],
                                       "window": [int(window.min()), n_hi]})


def preimage_levels(m: IntervalMap, point: float, depth: int):
    """Preimages of ``point`` by branchwise inversion, one array per depth 0..depth."""
    levels = [np.array([point], dtype=float)]
    for _ in range(depth):
        prev = levels[-1]
        found = [br.inverse(prev) for br in m.branches]
        nxt = np.concatenate(found)
        nxt = np.unique(nxt[np.isfinite(nxt)])
        levels.append(nxt)
    return levels


def check_H3(m: IntervalMap, t_max: int, eps: float) -> HypothesisReport:
    """Gap and critical-avoidance of the preimages of c* up to depth t_max."""
    if m.star is None:
        return HypothesisReport("H3", t_max, False, witnesses={"reason": "no designated point"})
    levels = preimage_levels(m, m.star.location, t_max)
    a, b = m.domain
    pts = np.unique(np.concatenate(levels))
    gaps = np.diff(np.concatenate([[a], pts, [b]]))
    max_gap = float(gaps.max())
    deeper = np.concatenate(levels[1:]) if t_max >= 1 else np.array([])
    min_dist = float(m.critical_distance(deeper).min()) if deeper.size else math.inf
    verdict = max_gap < eps and min_dist > 1e-12
    return HypothesisReport("H3", t_max, verdict, max_gap=max_gap, min_critical_distance=min_dist,
                            witnesses={"count": int(pts.size),
                                       "per_level": [int(lv.size) for lv in levels]})
