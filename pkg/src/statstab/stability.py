"""Parameter scans: density continuity, tail uniformity, level-set overlap, uniqueness."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .density import DensityEstimate, birkhoff_density, l1_distance, tower_density, ulam_density
from .diagnostics import tail_statistics
from .errors import DomainAlignmentFailed, DomainError, InsufficientData
from .hypotheses import HypothesisSet
from .inducing import InducedMap
from .maps import IntervalMap, make_builtin_family
from .metric import map_distance
from .pipeline import InducingSetup, induce_exact, induce_sampled, prepare


@dataclass(frozen=True)
class DensityBudget:
    method: str = "ulam"
    cells: int = 512
    bins: int = 200
    n_iter: int = 10**7
    burn_in: int = 1000
    n_seeds: int = 8
    seed: int = 0
    workers: int = 1

    def to_json(self):
        return asdict(self)


def estimate_density(m: IntervalMap, budget: DensityBudget, setup: InducingSetup | None = None) -> DensityEstimate:
    if budget.method == "ulam":
        return ulam_density(m, budget.cells)
    if budget.method == "birkhoff":
        return birkhoff_density(m, budget.n_iter, budget.burn_in, budget.n_seeds, budget.bins, budget.seed,
                                budget.workers)
    if budget.method == "tower":
        prep = prepare(m, setup or InducingSetup())
        return tower_density(m, induce_sampled(prep), budget.bins)
    raise ValueError(f"unknown density method {budget.method!r}")


def _annotate(err: DomainError, param, value):
    err.witness = dict(err.witness, **{param: value})
    return err


# ---------------------------------------------------------------------------
# stability curve
# ---------------------------------------------------------------------------

@dataclass
class StabilityRow:
    a: float
    offset: float
    d: float
    l1: float
    gamma_fit: float | None
    C_fit: float | None
    method: str

    def csv_row(self):
        return (self.a, self.d, self.l1, "" if self.gamma_fit is None else self.gamma_fit,
                "" if self.C_fit is None else self.C_fit, self.method)


STABILITY_HEADER = ["a", "d", "l1", "gamma_fit", "c_fit", "method"]


def dyadic_offsets(eps, scales, start=0):
    """0 and +-2^-k eps for k = start .. start + scales - 1."""
    out = [0.0]
    for k in range(start, start + scales):
        out += [-(2.0 ** -k) * eps, (2.0 ** -k) * eps]
    return out


def stability_curve(family, a0, offsets, budget: DensityBudget = DensityBudget(), param="a", base_params=None,
                    tail_setup: InducingSetup | None = None, grid_n=4096):
    """Rows (a, d(f_a, f_a0), L1(rho_a, rho_a0), tail fit) sorted by |offset|."""
    base = dict(base_params or {})
    if 0.0 not in offsets:
        raise ValueError("offsets must include 0")
    f0 = make_builtin_family(family, {**base, param: a0})
    rho0 = estimate_density(f0, budget)
    rows = []
    for off in sorted(offsets, key=lambda o: (abs(o), o)):
        a = a0 + off
        try:
            f = make_builtin_family(family, {**base, param: a})
            d = map_distance(f, f0, grid_n=grid_n).value
            rho = rho0 if off == 0 else estimate_density(f, budget)
            l1 = l1_distance(rho, rho0)
            g = C = None
            if tail_setup is not None:
                ts = tail_statistics(induce_sampled(prepare(f, tail_setup)), stratify=False)
                g, C = ts.gamma, ts.C
        except DomainError as err:
            raise _annotate(err, param, a)
        rows.append(StabilityRow(a, off, d, l1, g, C, budget.method))
    return rows


def spearman(rows):
    d = np.array([r.d for r in rows])
    l1 = np.array([r.l1 for r in rows])
    return float(spearmanr(d, l1).statistic)


def median_l1_by_scale(rows):
    """{|offset|: median L1} excluding the zero offset."""
    out = {}
    for r in rows:
        if r.offset != 0:
            out.setdefault(abs(r.offset), []).append(r.l1)
    return {k: float(np.median(v)) for k, v in sorted(out.items())}


# ---------------------------------------------------------------------------
# tail uniformity
# ---------------------------------------------------------------------------

@dataclass
class TailScan:
    rows: list  # (a, C, gamma, r2)
    min_gamma: float
    max_C: float
    relative_spread: float  # (max gamma - min gamma) / median gamma

    def to_json(self):
        return {"rows": [list(r) for r in self.rows], "min_gamma": self.min_gamma, "max_C": self.max_C,
                "relative_spread": self.relative_spread}


def tail_uniformity_scan(family, a0, radius, n_points=5, setup: InducingSetup = InducingSetup(), param="a",
                         base_params=None, hyp: HypothesisSet | None = None) -> TailScan:
    if n_points < 3:
        raise ValueError("n_points must be at least 3")
    base = dict(base_params or {})
    rows = []
    for a in np.linspace(a0 - radius, a0 + radius, n_points):
        a = float(a)
        try:
            f = make_builtin_family(family, {**base, param: a})
            ts = tail_statistics(induce_sampled(prepare(f, setup, hyp)), stratify=False)
        except DomainError as err:
            raise _annotate(err, param, a)
        rows.append((a, ts.C, ts.gamma, ts.r2))
    g = np.array([r[2] for r in rows])
    med = float(np.median(g))
    spread = float((g.max() - g.min()) / abs(med)) if med != 0 else math.inf
    return TailScan(rows, float(g.min()), float(max(r[1] for r in rows)), spread)


# ---------------------------------------------------------------------------
# level sets
# ---------------------------------------------------------------------------

@dataclass
class OverlapRow:
    j: int
    sym_diff: float
    mass_f: float
    mass_g: float
    d: float | None = None

    def csv_row(self):
        return (self.j, self.sym_diff, "" if self.d is None else self.d)


def _merge(intervals):
    out = []
    for lo, hi in sorted(intervals):
        if out and lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return out


def _intersection_mass(A, B):
    i = j = 0
    total = []
    while i < len(A) and j < len(B):
        lo = max(A[i][0], B[j][0])
        hi = min(A[i][1], B[j][1])
        if hi > lo:
            total.append(hi - lo)
        if A[i][1] < B[j][1]:
            i += 1
        else:
            j += 1
    return math.fsum(total)


def level_set_overlap(ind_f: InducedMap, ind_g: InducedMap, N, d=None):
    """|{T_f = j} sym-diff {T_g = j}| for j = 1..N after mapping the base of g affinely onto that of f."""
    (af, bf), (ag, bg) = ind_f.domain, ind_g.domain
    Lf, Lg = bf - af, bg - ag
    common = max(0.0, min(bf, bg) - max(af, ag))
    sym = Lf + Lg - 2 * common
    if sym > 0.5 * min(Lf, Lg):
        raise DomainAlignmentFailed(f"bases differ by {sym:.3g}, more than half of either", operation="level_set_overlap")

    def to_f(x):
        return af + (x - ag) * (Lf / Lg)

    rows = []
    for j in range(1, N + 1):
        A = _merge([(b.lo, b.hi) for b in ind_f.branches if b.T == j])
        B = _merge([(to_f(b.lo), to_f(b.hi)) for b in ind_g.branches if b.T == j])
        mA = math.fsum(h - l for l, h in A)
        mB = math.fsum(h - l for l, h in B)
        inter = _intersection_mass(A, B)
        rows.append(OverlapRow(j, max(0.0, mA + mB - 2 * inter), mA, mB, d))
    return rows


def overlap_pair(family, a, b, N, setup: InducingSetup, param="a", base_params=None, grid_n=4096):
    """Level-set overlap rows between f_a and f_b from induced maps run to horizon N."""
    base = dict(base_params or {})
    f = make_builtin_family(family, {**base, param: a})
    g = make_builtin_family(family, {**base, param: b})
    d = map_distance(f, g, grid_n=grid_n).value
    ind_f = induce_exact(prepare(f, setup), N_max=N)
    ind_g = induce_exact(prepare(g, setup), N_max=N)
    return level_set_overlap(ind_f, ind_g, N, d), ind_f, ind_g


# ---------------------------------------------------------------------------
# uniqueness
# ---------------------------------------------------------------------------

@dataclass
class UniquenessReport:
    l1_matrix: list
    max_l1: float
    threshold: float
    entry_fraction: float | None
    clouds: list
    passed: bool

    def to_json(self):
        return {"pairwise_l1": self.l1_matrix, "max_l1": self.max_l1, "threshold": self.threshold,
                "entry_fraction": self.entry_fraction, "clouds": self.clouds, "passed": self.passed}


def entry_fraction(m: IntervalMap, target, samples=10000, horizon=200, seed=0):
    """Share of uniform points of the domain whose orbit meets ``target`` within ``horizon`` steps."""
    rng = np.random.default_rng([seed, 1])
    lo, hi = target
    x = rng.uniform(*m.domain, samples)
    hit = (x > lo) & (x < hi)
    for _ in range(horizon):
        x = m.apply(x)
        hit |= (x > lo) & (x < hi)
    return float(hit.mean())


def uniqueness_check(m: IntervalMap, n_seeds=5, n_iter=10**7, bins=200, seed=0, threshold=0.05,
                     delta_star=math.exp(-3), horizon=200, workers=1) -> UniquenessReport:
    """Birkhoff densities from seed clouds placed in n_seeds disjoint strata of the domain.

    Localized clouds are what can tell two invariant components apart; clouds
    spread over the whole domain would all see the same mixture.
    """
    if n_seeds < 3:
        raise ValueError("n_seeds must be at least 3")
    a, b = m.domain
    edges = np.linspace(a, b, n_seeds + 1)
    clouds, dens = [], []
    for k in range(n_seeds):
        init = (float(edges[k]), float(edges[k + 1]))
        clouds.append(list(init))
        dens.append(birkhoff_density(m, n_iter, bins=bins, seed=seed + k, init=init, workers=workers))
    M = [[l1_distance(p, q) for q in dens] for p in dens]
    mx = float(max(max(r) for r in M))
    frac = None
    if m.star is not None:
        c = m.star.location
        frac = entry_fraction(m, (c - delta_star, c + delta_star), horizon=horizon, seed=seed)
    return UniquenessReport(M, mx, threshold, frac, clouds, mx <= threshold)
