"""Tail statistics, derived constants, and expansion/distortion checks of induced branches."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientData, ThetaHatOutOfRange, ThetaNonpositive
from .hypotheses import HypothesisSet
from .inducing import InducedBranch, InducedMap, ResidualPiece
from .maps import IntervalMap

# ---------------------------------------------------------------------------
# tails
# ---------------------------------------------------------------------------

FIT_FLOOR_UNITS = 30


@dataclass
class TailStats:
    n: np.ndarray
    counts: np.ndarray  # Lebesgue measure of {T > n}, unresolved mass included
    C: float
    gamma: float
    r2: float
    window: tuple  # (first n, last n) used by the fit
    unit: float  # the mass of one branch (median) or one sample
    domain_mass: float
    residual_mass: float
    strata: dict = field(default_factory=dict)  # n -> {s: mass of {T > n} with s escapes before n}

    @property
    def gamma_positive(self):
        return self.gamma > 0

    def rows(self):
        out = []
        for n, c in zip(self.n, self.counts):
            st = self.strata.get(int(n))
            if st:
                for s in sorted(st):
                    out.append((int(n), c, s, st[s]))
            else:
                out.append((int(n), c, "", ""))
        return out

    def write_csv(self, path):
        from .io import write_csv
        write_csv(path, ["n", "mass_T_gt_n", "stratum_s", "stratum_mass"], self.rows())

    def to_json(self):
        return {"C": self.C, "gamma": self.gamma, "r2": self.r2, "window": list(self.window), "unit": self.unit,
                "domain_mass": self.domain_mass, "residual_mass": self.residual_mass,
                "counts": self.counts.tolist()}


def _records(induced):
    """(T, mass, escape_times) triples; unresolved pieces get T = inf."""
    from .tracer import TraceResult

    if isinstance(induced, InducedMap):
        recs = [(b.T, b.mass, b.escape_times) for b in induced.branches]
        recs += [(math.inf, r.mass, r.escape_times) for r in induced.residual]
        masses = np.array([b.mass for b in induced.branches])
        unit = float(np.median(masses)) if masses.size else 0.0
        return recs, induced.domain_length, induced.residual_mass, unit, induced.horizon
    if isinstance(induced, TraceResult):
        lo, hi = induced.domain
        w = (hi - lo) / induced.n
        recs = [(int(T) if ok else math.inf, w, e) for T, ok, e in
                zip(induced.T, induced.returned, induced.escape_times)]
        resid = w * float((~induced.returned).sum())
        return recs, hi - lo, resid, w, induced.horizon
    raise TypeError("expected an InducedMap or a TraceResult")


def fit_exponential(n, counts):
    """Least squares of log counts on n: returns (C, gamma, r2)."""
    n = np.asarray(n, float)
    y = np.log(np.asarray(counts, float))
    A = np.vstack([np.ones_like(n), n]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return math.exp(coef[0]), -float(coef[1]), r2


def tail_statistics(induced, n_max=None, stratify=True, min_points=5) -> TailStats:
    """Tail masses |{T > n}| and an exponential fit on the admissible window.

    The window starts where the tail first drops below the full base mass
    (before that {T > n} is the whole base) and ends at the last n whose mass
    is at least 30 units, a unit being the median branch mass for enumerated
    maps or the mass of one sample for sampled ones. Unresolved mass counts
    in every {T > n}, so the window also stops at the construction horizon.
    """
    recs, dom, resid, unit, horizon = _records(induced)
    if not recs:
        raise InsufficientData("no branches", operation="tail_statistics")
    n_max = horizon if n_max is None else int(n_max)
    Ts = np.array([r[0] for r in recs], float)
    ms = np.array([r[1] for r in recs], float)
    order = np.argsort(Ts, kind="stable")
    Ts, ms = Ts[order], ms[order]
    # mass with T > n is the suffix sum past the last T <= n
    suffix = np.concatenate([np.cumsum(ms[::-1])[::-1], [0.0]])
    ns = np.arange(0, n_max + 1)
    idx = np.searchsorted(Ts, ns, side="right")
    counts = suffix[idx]
    counts = np.minimum.accumulate(counts)  # guards against summation-order noise
    floor = FIT_FLOOR_UNITS * unit
    start = int(np.argmax(counts < counts[0])) if np.any(counts < counts[0]) else len(ns)
    ok = (ns >= start) & (counts >= floor) & (counts > resid) & (ns < horizon)
    usable = np.flatnonzero(ok)
    if usable.size < min_points:
        raise InsufficientData(f"only {usable.size} usable n values for the tail fit", operation="tail_statistics",
                               usable=int(usable.size))
    # contiguous window from the first usable n
    w0 = usable[0]
    w1 = w0
    while w1 + 1 < len(ok) and ok[w1 + 1]:
        w1 += 1
    if w1 - w0 + 1 < min_points:
        raise InsufficientData("fit window too short", operation="tail_statistics")
    C, gamma, r2 = fit_exponential(ns[w0:w1 + 1], counts[w0:w1 + 1])
    strata = {}
    if stratify:
        for n in ns[:: max(1, len(ns) // 50)]:
            row = {}
            for T, m, esc in recs:
                if T > n:
                    s = sum(1 for e in esc if e < n)
                    row[s] = row.get(s, 0.0) + m
            strata[int(n)] = row
    return TailStats(ns, counts, C, gamma, r2, (int(ns[w0]), int(ns[w1])), unit, dom, resid, strata)


def geometric_induced_map(K=60, ratio=0.5, domain=(0.0, 1.0)):
    """Synthetic induced map with |{T > n}| = ratio^n |domain| for n < K.

    Branch T = k has mass (ratio^(k-1) - ratio^k)|domain|; the mass beyond K is
    left as residual. Used as a fitting oracle.
    """
    lo, hi = domain
    L = hi - lo
    branches = []
    x = lo
    for k in range(1, K + 1):
        w = (ratio ** (k - 1) - ratio ** k) * L
        branches.append(InducedBranch(x, x + w, k, k, 0, np.zeros(k, np.int16), ()))
        x += w
    residual = [ResidualPiece(x, hi, K, "horizon")] if hi > x else []
    return InducedMap((lo, hi), branches, residual, K + 1)


# ---------------------------------------------------------------------------
# derived constants
# ---------------------------------------------------------------------------

@dataclass
class DerivedConstants:
    theta_c: dict  # spec index -> 1 - 5 alpha ell_c / Lambda
    theta: float
    theta_hat: float
    theta_hat_max: float
    sigma: float
    distortion: float | None = None

    def to_json(self):
        return {"theta_c": {str(k): v for k, v in self.theta_c.items()}, "theta": self.theta,
                "theta_hat": self.theta_hat, "theta_hat_max": self.theta_hat_max, "sigma": self.sigma,
                "distortion": self.distortion}


def derived_constants(hyp: HypothesisSet, m: IntervalMap, Lambda_est=None, theta_hat=None,
                      distortion=None) -> DerivedConstants:
    """theta_c for every critical (order >= 1) spec, the admissible theta-hat window and sigma.

    With no critical specs the constraint is vacuous and theta = 1. The
    default theta-hat is the midpoint of its window.
    """
    Lam = hyp.Lambda if Lambda_est is None else float(Lambda_est)
    if not Lam > 0:
        raise ThetaNonpositive(f"Lambda = {Lam} must be positive", operation="derived_constants")
    theta_c = {}
    for i, c in enumerate(m.critical_points):
        if c.is_critical:
            theta_c[i] = 1.0 - 5.0 * hyp.alpha * c.order / Lam
    bad = {i: t for i, t in theta_c.items() if t <= 0}
    if bad:
        raise ThetaNonpositive(f"theta_c <= 0 for specs {sorted(bad)}", operation="derived_constants",
                               theta_c=bad)
    theta = min(theta_c.values()) if theta_c else 1.0
    top = theta * Lam / (2.0 * hyp.ell_hat)
    if theta_hat is None:
        theta_hat = 0.5 * top
    if not 0 < theta_hat < top:
        raise ThetaHatOutOfRange(f"theta_hat = {theta_hat} outside (0, {top})", operation="derived_constants")
    sigma = min(math.exp(hyp.lam), math.exp(theta_hat))
    return DerivedConstants(theta_c, theta, float(theta_hat), top, sigma, distortion)


# ---------------------------------------------------------------------------
# branch evaluation
# ---------------------------------------------------------------------------

def branch_orbit(m: IntervalMap, path, x):
    """f^T(x) and log|(f^T)'(x)| along a fixed branch path, vectorized over x."""
    y = np.asarray(x, dtype=float).copy()
    logd = np.zeros_like(y)
    for k in path:
        br = m.branches[int(k)]
        logd += br.log_abs_derivative(y)
        y = br.value(y)
    return y, logd


def _branches(induced):
    if isinstance(induced, InducedMap):
        return induced.branches
    return list(induced)


def _rng(seed, rank):
    return np.random.default_rng([int(seed), int(rank)])


@dataclass
class ExpansionReport:
    sigma_est: float
    min_derivative: float
    per_branch: list  # (min secant ratio, min |(f^T)'|)
    samples_per_branch: int

    def to_json(self):
        return {"sigma_est": self.sigma_est, "min_derivative": self.min_derivative,
                "branches": len(self.per_branch), "samples_per_branch": self.samples_per_branch}


def expansion_diagnostic(m: IntervalMap, induced, samples_per_branch=16, seed=0) -> ExpansionReport:
    brs = _branches(induced)
    if not brs:
        raise InsufficientData("no branches", operation="expansion_diagnostic")
    per = []
    for rank, b in enumerate(brs):
        u = np.sort(_rng(seed, rank).random(samples_per_branch))
        x = b.lo + (b.hi - b.lo) * u
        x = np.concatenate([[b.lo], x, [b.hi]])
        y, logd = branch_orbit(m, b.path[:b.T], x)
        dx = np.diff(x)
        dy = np.abs(np.diff(y))
        good = dx > 0
        secant = float(np.min(dy[good] / dx[good])) if good.any() else math.nan
        per.append((secant, float(np.exp(logd.min()))))
    sec = np.array([p[0] for p in per])
    der = np.array([p[1] for p in per])
    return ExpansionReport(float(np.nanmin(sec)), float(der.min()), per, samples_per_branch)


@dataclass
class DistortionReport:
    D_hat: float  # max |(f^T)'(x)/(f^T)'(y) - 1| / |f^T x - f^T y|
    D2_est: float  # max log-distortion / sum_j |omega_j| / dist(omega_j, critical set)
    per_branch: list
    degenerate_pairs: int
    pair_samples: int

    def to_json(self):
        return {"D_hat": self.D_hat, "D2_est": self.D2_est, "branches": len(self.per_branch),
                "degenerate_pairs": self.degenerate_pairs, "pair_samples": self.pair_samples}


def itinerary_sum(m: IntervalMap, branch: InducedBranch):
    """sum over j < T of |omega_j| / dist(omega_j, critical set), omega_j = f^j(omega)."""
    a, b = branch.lo, branch.hi
    total = 0.0
    locs = m.critical_locations
    for k in branch.path[:branch.T]:
        if locs.size:
            inside = (locs > a) & (locs < b)
            dist = 0.0 if inside.any() else float(min(np.min(np.abs(locs - a)), np.min(np.abs(locs - b))))
        else:
            dist = math.inf
        total += (b - a) / dist if dist > 0 else math.inf
        br = m.branches[int(k)]
        u, v = float(br.value(a)), float(br.value(b))
        a, b = min(u, v), max(u, v)
    return total


def distortion_diagnostic(m: IntervalMap, induced, pair_samples=8, seed=0) -> DistortionReport:
    if pair_samples < 8:
        raise ValueError("pair_samples must be at least 8")
    brs = _branches(induced)
    if not brs:
        raise InsufficientData("no branches", operation="distortion_diagnostic")
    per = []
    degenerate = 0
    for rank, b in enumerate(brs):
        rng = _rng(seed, rank)
        x = b.lo + (b.hi - b.lo) * rng.random(pair_samples)
        yv = b.lo + (b.hi - b.lo) * rng.random(pair_samples)
        fx, lx = branch_orbit(m, b.path[:b.T], x)
        fy, ly = branch_orbit(m, b.path[:b.T], yv)
        gap = np.abs(fx - fy)
        tiny = gap <= 4 * np.spacing(np.maximum(np.abs(fx), np.abs(fy)))
        degenerate += int(tiny.sum())
        ratio = np.abs(np.expm1(lx - ly))
        d = float(np.max(ratio[~tiny] / gap[~tiny])) if (~tiny).any() else math.nan
        logdist = float(np.max(np.abs(lx - ly)))
        s = itinerary_sum(m, b)
        per.append((d, logdist / s if s > 0 and math.isfinite(s) else math.nan))
    D = np.array([p[0] for p in per])
    R = np.array([p[1] for p in per])
    D_hat = float(np.nanmax(D)) if np.isfinite(D).any() else math.nan
    D2 = float(np.nanmax(R)) if np.isfinite(R).any() else math.nan
    return DistortionReport(D_hat, D2, per, degenerate, pair_samples)


def endpoint_mismatch(m: IntervalMap, induced, target, dps=None):
    """Max over branches of |f^T(endpoint) - matching end of target| / |target|.

    In double precision the forward orbit amplifies rounding by |(f^T)'|, so
    for narrow branches the check measures the arithmetic, not the branch.
    With ``dps`` the endpoints (exact binary floats) are iterated in mpmath
    at that many digits; branch formulas must then be plain arithmetic.
    """
    lo_t, hi_t = target
    L = hi_t - lo_t
    worst = 0.0
    if dps is None:
        for b in _branches(induced):
            y, _ = branch_orbit(m, b.path[:b.T], np.array([b.lo, b.hi]))
            img = np.sort(y)
            worst = max(worst, abs(img[0] - lo_t) / L, abs(img[1] - hi_t) / L)
        return worst
    import mpmath

    with mpmath.workdps(dps):
        for b in _branches(induced):
            ends = [mpmath.mpf(b.lo), mpmath.mpf(b.hi)]
            for k in b.path[:b.T]:
                f = m.branches[int(k)].f
                ends = [f(e) for e in ends]
            u, v = sorted(ends)
            worst = max(worst, float(abs(u - lo_t) / L), float(abs(v - hi_t) / L))
    return worst
