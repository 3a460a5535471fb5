"""Critical partition of the delta-neighbourhood and binding periods.

Cells are stored per one-sided spec as distances from the critical location,
``bounds[i] <= t < bounds[i + 1]``, sorted outward from ``c``. Labels follow
the usual convention: the annulus ``I_r`` holds distances ``[e^-r, e^(-r+1))``
and ``j = 1`` is its innermost cell, ``j = r^2`` the outermost. The undivided
annulus at ``r = r_delta`` is labelled ``j = 0`` ("extreme").
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DeltaNotAdmissible, OverlappingCriticalNeighborhoods
from .hypotheses import HypothesisSet
from .io import write_csv
from .maps import IntervalMap, side_name

EXTREME = 0  # j label of the undivided annulus I_{r_delta}


def r_delta(delta: float) -> int:
    """The integer k with delta = e^-k, validated to relative 1e-12."""
    if not (delta > 0 and math.isfinite(delta)):
        raise DeltaNotAdmissible(f"delta={delta!r} must be positive", operation="r_delta")
    k = -math.log(delta)
    n = round(k)
    if n < 1 or abs(k - n) > 1e-12 * max(1.0, abs(k)):
        raise DeltaNotAdmissible(f"log(1/delta) = {k!r} is not a positive integer",
                                 operation="r_delta", delta=delta)
    return int(n)


def annulus_bounds(r: int, subdivide: bool = True) -> np.ndarray:
    """Distances of the cell boundaries of I_r, innermost first."""
    inner, outer = math.exp(-r), math.exp(-r + 1)
    if not subdivide:
        return np.array([inner, outer])
    n = r * r
    b = inner + (outer - inner) * np.arange(n + 1) / n
    b[-1] = outer
    return b


@dataclass(frozen=True)
class SpecCells:
    """All materialized cells of one one-sided spec."""
    spec_index: int
    location: float
    side: int
    r_delta: int
    r_max: int
    bounds: np.ndarray  # distances, strictly increasing, len = n_cells + 1
    r: np.ndarray  # depth of each cell
    j: np.ndarray  # sub-index (EXTREME for the undivided annulus)

    @property
    def n_cells(self):
        return len(self.r)

    @property
    def truncated_mass(self):
        return float(self.bounds[0])

    @property
    def hat_radius(self):
        return float(self.bounds[-1])

    @property
    def delta_radius(self):
        """Outer distance of the subdivided part (the delta-neighbourhood proper)."""
        return float(self.bounds[-2])

    def to_abs(self, t):
        return self.location + self.side * np.asarray(t, dtype=float)

    def cell_abs(self, i):
        a, b = self.to_abs(self.bounds[i]), self.to_abs(self.bounds[i + 1])
        return (float(min(a, b)), float(max(a, b)))

    def find(self, t):
        """Cell index for distance ``t``; -1 below the truncation, n_cells beyond."""
        return np.searchsorted(self.bounds, t, side="right") - 1

    def index_of(self, r, j):
        hit = np.flatnonzero((self.r == r) & (self.j == j))
        if hit.size == 0:
            raise KeyError((r, j))
        return int(hit[0])

    def annulus(self, r):
        """(inner, outer) distance of I_r."""
        idx = np.flatnonzero(self.r == r)
        return float(self.bounds[idx[0]]), float(self.bounds[idx[-1] + 1])

    def hat_annulus(self, r):
        """Distance range of I_r together with its two neighbouring cells.

        At r = r_delta + 1 the outer neighbour is the whole undivided annulus.
        Below the materialized range the inner neighbour uses the same
        equal-length rule even though it is not stored.
        """
        lo, hi = self.annulus(r)
        idx = np.flatnonzero(self.r == r)
        i0, i1 = idx[0], idx[-1]
        if i0 > 0:
            inner = float(self.bounds[i0 - 1])
        else:
            nxt = annulus_bounds(r + 1)
            inner = float(nxt[-2])
        outer = float(self.bounds[i1 + 2]) if i1 + 1 < self.n_cells else hi
        return inner, outer


@dataclass(frozen=True)
class CriticalPartition:
    delta: float
    r_delta: int
    r_max: int
    specs: tuple[SpecCells, ...]

    def __iter__(self):
        return iter(self.specs)

    def by_spec(self, spec_index):
        for s in self.specs:
            if s.spec_index == spec_index:
                return s
        raise KeyError(spec_index)

    @property
    def truncated_mass(self):
        return sum(s.truncated_mass for s in self.specs)

    def rows(self):
        """(spec_index, r, j, left, right) in (spec, r, j) order."""
        out = []
        for s in self.specs:
            order = np.lexsort((s.j, s.r))
            for i in order:
                lo, hi = s.cell_abs(i)
                out.append((s.spec_index, int(s.r[i]), "extreme" if s.j[i] == EXTREME else int(s.j[i]), lo, hi))
        return out

    def write_csv(self, path):
        return write_csv(path, ["spec_index", "r", "j", "left", "right"], self.rows())

    def to_json(self):
        return {
            "delta": self.delta, "r_delta": self.r_delta, "r_max": self.r_max,
            "specs": [{"spec_index": s.spec_index, "location": s.location, "side": side_name(s.side),
                       "r_max": s.r_max, "n_cells": s.n_cells, "truncated_mass": s.truncated_mass}
                      for s in self.specs],
        }


def resolvable_depth(location: float, r_max: int) -> int:
    """Deepest r whose r^2 cells are still well separated in floating point."""
    ulp = np.spacing(abs(location)) if location != 0 else 0.0
    if ulp == 0.0:
        return r_max
    r = r_max
    while r > 2 and math.exp(-r) * (math.e - 1) / (r * r) < 1024 * ulp:
        r -= 1
    return r


def build_critical_partition(m: IntervalMap, hyp: HypothesisSet, r_max: int | None = None) -> CriticalPartition:
    rd = r_delta(hyp.delta)
    if r_max is None:
        r_max = rd + 40
    if r_max <= rd + 1:
        raise ValueError(f"r_max={r_max} must exceed r_delta + 1 = {rd + 1}")
    hat = math.exp(-rd + 1)
    a, b = m.domain
    # one-sided hat neighbourhoods must be disjoint and inside the domain
    pieces = []
    for i, c in enumerate(m.critical_points):
        lo, hi = (c.location, c.location + hat) if c.side > 0 else (c.location - hat, c.location)
        if lo < a - 1e-15 or hi > b + 1e-15:
            raise OverlappingCriticalNeighborhoods(
                f"neighbourhood of spec {i} leaves the domain", operation="build_critical_partition", spec_index=i)
        pieces.append((lo, hi, i))
    pieces.sort()
    for (lo1, hi1, i1), (lo2, hi2, i2) in zip(pieces, pieces[1:]):
        if hi1 > lo2:
            raise OverlappingCriticalNeighborhoods(
                f"neighbourhoods of specs {i1} and {i2} intersect; delta too large",
                operation="build_critical_partition", specs=(i1, i2))
    specs = []
    for i, c in enumerate(m.critical_points):
        rm = resolvable_depth(c.location, r_max)
        rm = max(rm, rd + 2)
        bounds, rs, js = [], [], []
        for r in range(rm, rd, -1):
            bb = annulus_bounds(r)
            bounds.append(bb[:-1])
            rs.append(np.full(r * r, r))
            js.append(np.arange(1, r * r + 1))
        bounds.append(np.array([math.exp(-rd), hat]))
        rs.append(np.array([rd]))
        js.append(np.array([EXTREME]))
        specs.append(SpecCells(i, c.location, c.side, rd, rm, np.concatenate(bounds),
                               np.concatenate(rs).astype(int), np.concatenate(js).astype(int)))
    return CriticalPartition(hyp.delta, rd, r_max, tuple(specs))


# ---------------------------------------------------------------------------
# binding periods
# ---------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _increment(m: IntervalMap, branch_idx, y, e):
    """f(y + e) - f(y) on branch ``branch_idx`` without cancellation.

    Integrates f' over [y, y + e] with Gauss-Legendre nodes; falls back to a
    plain difference of the right-continuous map where the segment leaves the
    branch.
    """
    out = np.empty_like(e)
    lo = m.edges[branch_idx]
    hi = m.edges[branch_idx + 1]
    z = y + e
    inside = (np.minimum(y, z) >= lo) & (np.maximum(y, z) <= hi)
    if np.any(inside):
        yi, ei, bi = y[inside], e[inside], branch_idx[inside]
        nodes = yi[:, None] + 0.5 * ei[:, None] * (_GL_X[None, :] + 1.0)
        df = np.empty_like(nodes)
        for k, br in enumerate(m.branches):
            sel = bi == k
            if np.any(sel):
                df[sel] = br.derivative(nodes[sel])
        out[inside] = 0.5 * ei * (df @ _GL_W)
    if np.any(~inside):
        out[~inside] = m.apply(z[~inside]) - m.apply(y[~inside])
    return out


def _critical_orbit(m: IntervalMap, spec_index, steps):
    """c_1..c_steps and the branch index used at each c_j (j >= 1)."""
    spec = m.critical_points[spec_index]
    k0 = m.branch_index(spec.location, spec.side)
    ys = np.empty(steps + 1)
    ys[0] = spec.location
    x = float(m.branches[k0].value(spec.location))
    for j in range(1, steps + 1):
        ys[j] = x
        x = float(m.apply(np.array([x]))[0])
    ks = np.empty(steps + 1, dtype=int)
    ks[0] = k0
    ks[1:] = m.locate(ys[1:])
    return ys, ks


def shadowing_depths(m: IntervalMap, spec_index, x, delta, alpha, k_max):
    """For each start point, the first j with |f^{j+1}(x) - f^{j+1}(c)| > delta e^{-2 alpha j}.

    Points that shadow through j = k_max get k_max + 1.
    """
    x = np.asarray(x, dtype=float)
    ys, ks = _critical_orbit(m, spec_index, k_max + 1)
    c = ys[0]
    e = np.zeros_like(x)
    first = np.full(x.shape, k_max + 1)
    alive = np.ones(x.shape, bool)
    # e holds f^j(x) - f^j(c); step 0 starts at the critical location itself
    e = x - c
    for j in range(0, k_max + 1):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        y = np.full(idx.size, ys[j])
        bk = np.full(idx.size, ks[j])
        e_next = _increment(m, bk, y, e[idx])
        e[idx] = e_next
        bad = ~(np.abs(e_next) <= delta * math.exp(-2.0 * alpha * j))
        first[idx[bad]] = j
        alive[idx[bad]] = False
    return first


@dataclass(frozen=True)
class BindingResult:
    p: int
    truncated: bool


@dataclass
class BindingTable:
    k_max: int
    sample_n: int
    delta: float
    alpha: float
    p: dict = field(default_factory=dict)  # (spec_index, r) -> p(r)
    truncated: set = field(default_factory=set)

    @property
    def tolerance(self):
        return f"delta*exp(-2*alpha*j), delta={self.delta!r}, alpha={self.alpha!r}"

    def __getitem__(self, key):
        return self.p[key]

    def get(self, spec_index, r):
        """p(r), extended past the stored range by the deepest stored value."""
        key = (spec_index, r)
        if key in self.p:
            return self.p[key]
        rs = [rr for (s, rr) in self.p if s == spec_index]
        if not rs:
            return 0
        return self.p[(spec_index, max(rs))] if r > max(rs) else self.p[(spec_index, min(rs))]

    def rows(self):
        return [(s, r, p, (s, r) in self.truncated) for (s, r), p in sorted(self.p.items())]

    def write_csv(self, path):
        return write_csv(path, ["spec_index", "r", "p", "truncated"], self.rows())

    def to_json(self):
        return {"k_max": self.k_max, "sample_n": self.sample_n, "tolerance": self.tolerance,
                "rows": [dict(zip(("spec_index", "r", "p", "truncated"), row)) for row in self.rows()]}


def hat_samples(cells: SpecCells, r, sample_n):
    lo, hi = cells.hat_annulus(r)
    return cells.to_abs(np.linspace(lo, hi, sample_n))


def _p_from_first(first, k_max):
    mfail = int(first.min())
    if mfail > k_max:
        return BindingResult(k_max, True)
    return BindingResult(max(mfail - 1, 0), False)


def binding_period(m: IntervalMap, partition: CriticalPartition, spec_index, r, hyp: HypothesisSet,
                   k_max=None, sample_n=64) -> BindingResult:
    if sample_n < 3:
        raise ValueError("sample_n must be >= 3")
    cells = partition.by_spec(spec_index)
    if not (partition.r_delta + 1 <= r <= cells.r_max):
        raise ValueError(f"r={r} outside the stored range [{partition.r_delta + 1}, {cells.r_max}]")
    if k_max is None:
        k_max = 10 * partition.r_max
    if not m.critical_points[spec_index].is_critical:
        return BindingResult(0, False)
    x = hat_samples(cells, r, sample_n)
    first = shadowing_depths(m, spec_index, x, hyp.delta, hyp.alpha, k_max)
    return _p_from_first(first, k_max)


def binding_table(m: IntervalMap, partition: CriticalPartition, hyp: HypothesisSet,
                  k_max=None, sample_n=64) -> BindingTable:
    if k_max is None:
        k_max = 10 * partition.r_max
    table = BindingTable(k_max, sample_n, hyp.delta, hyp.alpha)
    for cells in partition:
        rs = list(range(partition.r_delta + 1, cells.r_max + 1))
        if not m.critical_points[cells.spec_index].is_critical:
            for r in rs:
                table.p[(cells.spec_index, r)] = 0
            continue
        x = np.concatenate([hat_samples(cells, r, sample_n) for r in rs])
        first = shadowing_depths(m, cells.spec_index, x, hyp.delta, hyp.alpha, k_max)
        for i, r in enumerate(rs):
            res = _p_from_first(first[i * sample_n:(i + 1) * sample_n], k_max)
            table.p[(cells.spec_index, r)] = res.p
            if res.truncated:
                table.truncated.add((cells.spec_index, r))
    return table
