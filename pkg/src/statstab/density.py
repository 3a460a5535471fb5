"""Three estimators of the invariant density and the L1 distance between them."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import AllOrbitsDegenerate, DomainMismatch, PowerIterationStalled, ResidualTooLarge
from .inducing import InducedMap
from .maps import FAMILIES, IntervalMap, make_builtin_family

METHODS = ("birkhoff", "ulam", "tower", "reference")


@dataclass
class DensityEstimate:
    bin_edges: np.ndarray
    masses: np.ndarray
    method: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, dtype=float)
        self.masses = np.asarray(self.masses, dtype=float)
        if self.method not in METHODS:
            raise ValueError(f"unknown method tag {self.method!r}")
        if self.bin_edges.ndim != 1 or len(self.bin_edges) < 3:
            raise ValueError("need at least two bins")
        if not np.all(np.diff(self.bin_edges) > 0):
            raise ValueError("bin edges must be strictly increasing")
        if len(self.masses) != len(self.bin_edges) - 1:
            raise ValueError("one mass per bin")
        if np.any(self.masses < 0) or abs(math.fsum(self.masses) - 1.0) > 1e-12:
            raise ValueError("masses must be a probability vector")

    @property
    def domain(self):
        return float(self.bin_edges[0]), float(self.bin_edges[-1])

    @property
    def widths(self):
        return np.diff(self.bin_edges)

    @property
    def density(self):
        return self.masses / self.widths

    @property
    def centers(self):
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    def csv_rows(self):
        size = self.metadata.get("n_iter", self.metadata.get("cells", self.metadata.get("samples", "")))
        seed = self.metadata.get("seed", "")
        return [(a, b, w, self.method, size, seed)
                for a, b, w in zip(self.bin_edges[:-1], self.bin_edges[1:], self.masses)]

    def write_csv(self, path):
        from .io import write_csv
        write_csv(path, ["bin_left", "bin_right", "mass", "method", "n_iter/cells", "seed"], self.csv_rows())

    def to_json(self):
        return {"method": self.method, "bin_edges": self.bin_edges.tolist(), "masses": self.masses.tolist(),
                "metadata": self.metadata}

    @classmethod
    def from_json(cls, d):
        return cls(np.array(d["bin_edges"]), np.array(d["masses"]), d["method"], dict(d.get("metadata", {})))


def _normalized(counts):
    counts = np.asarray(counts, dtype=float)
    total = math.fsum(counts)
    masses = counts / total
    # push the last rounding residue into the largest bin so the sum is 1 to the ulp
    masses[np.argmax(masses)] += 1.0 - math.fsum(masses)
    return np.maximum(masses, 0.0)


def uniform_edges(domain, bins):
    a, b = domain
    edges = np.linspace(a, b, int(bins) + 1)
    edges[0], edges[-1] = a, b
    return edges


# ---------------------------------------------------------------------------
# analytic reference
# ---------------------------------------------------------------------------

def arcsine_density(bins=200) -> DensityEstimate:
    """Exact bin masses of rho(x) = 1 / (pi sqrt(1 - x^2)) on [-1, 1]."""
    edges = uniform_edges((-1.0, 1.0), bins)
    cdf = 0.5 + np.arcsin(np.clip(edges, -1, 1)) / math.pi
    return DensityEstimate(edges, _normalized(np.diff(cdf)), "reference", {"formula": "arcsine"})


# ---------------------------------------------------------------------------
# Birkhoff histograms
# ---------------------------------------------------------------------------

WALKERS_PER_SEED = 1024
MAX_RESTARTS_PER_WALKER = 64


def _seed_histogram(m: IntervalMap, seq: np.random.SeedSequence, steps, burn_in, edges, init=None):
    """Histogram of ``WALKERS_PER_SEED`` orbits after burn-in; returns (counts, restarts, dead).

    Initial points (and restarts) are uniform on ``init``, the whole domain by default.
    """
    rng = np.random.default_rng(seq)
    a, b = m.domain if init is None else init
    W = WALKERS_PER_SEED
    x = rng.uniform(a, b, W)
    locs = m.critical_locations
    tol = 1e-12 * m.length
    restarts = np.zeros(W, dtype=np.int64)
    alive = np.ones(W, bool)
    counts = np.zeros(len(edges) - 1, dtype=np.int64)
    for n in range(burn_in + steps):
        y = m.apply(x)
        bad = ~np.isfinite(y) | (np.abs(y - x) <= tol)
        if locs.size:
            bad |= np.isin(y, locs)
        bad &= alive
        if bad.any():
            k = int(bad.sum())
            restarts[bad] += 1
            y[bad] = rng.uniform(a, b, k)
            alive &= restarts <= MAX_RESTARTS_PER_WALKER
        x = y
        if n >= burn_in:
            c, _ = np.histogram(x[alive], bins=edges)
            counts += c
    return counts, int(restarts.sum()), int((~alive).sum())


def _seed_job(args):
    family, params, seq, steps, burn_in, edges, init = args
    m = make_builtin_family(family, params, validate=False)
    return _seed_histogram(m, seq, steps, burn_in, edges, init)


def birkhoff_density(m: IntervalMap, n_iter=10**7, burn_in=1000, n_seeds=8, bins=200, seed=0,
                     workers=1, init=None) -> DensityEstimate:
    """Averaged histogram of orbit points.

    Each seed runs a fixed batch of walkers from its own SeedSequence child, so
    the integer histograms and their sum do not depend on ``workers``.
    """
    if n_iter < 10**4:
        raise ValueError("n_iter must be at least 1e4")
    if bins < 16:
        raise ValueError("bins must be at least 16")
    if n_seeds < 1:
        raise ValueError("n_seeds must be at least 1")
    edges = uniform_edges(m.domain, bins)
    steps = max(1, math.ceil(n_iter / (n_seeds * WALKERS_PER_SEED)))
    seqs = np.random.SeedSequence(seed).spawn(n_seeds)
    if workers > 1 and m.family in FAMILIES:
        jobs = [(m.family, dict(m.params), s, steps, burn_in, edges, init) for s in seqs]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_seed_job, jobs))
    else:
        results = [_seed_histogram(m, s, steps, burn_in, edges, init) for s in seqs]
    counts = np.zeros(bins, dtype=np.int64)
    for c, _, _ in results:
        counts += c
    restarts = sum(r for _, r, _ in results)
    dead = sum(d for _, _, d in results)
    if counts.sum() == 0 or dead == n_seeds * WALKERS_PER_SEED:
        raise AllOrbitsDegenerate(f"all {n_seeds * WALKERS_PER_SEED} orbits trapped (restarts {restarts})",
                                  operation="birkhoff_density")
    meta = {"n_iter": int(steps * n_seeds * WALKERS_PER_SEED), "burn_in": burn_in, "n_seeds": n_seeds,
            "walkers_per_seed": WALKERS_PER_SEED, "seed": seed, "restarts": restarts, "dead_walkers": dead,
            "bins": bins, "init": list(init) if init is not None else None}
    return DensityEstimate(edges, _normalized(counts), "birkhoff", meta)


# ---------------------------------------------------------------------------
# Ulam oracle
# ---------------------------------------------------------------------------

def ulam_matrix(m: IntervalMap, edges) -> sp.csr_matrix:
    """Row-stochastic P[i, j] = |cell_i ∩ f^{-1} cell_j| / |cell_i|.

    Preimage lengths come from the branch inverses, so the matrix is exact up
    to rounding even where the derivative blows up.
    """
    edges = np.asarray(edges, dtype=float)
    n = len(edges) - 1
    rows, cols, vals = [], [], []
    for br in m.branches:
        i0 = max(int(np.searchsorted(edges, br.lo, side="right")) - 1, 0)
        i1 = min(int(np.searchsorted(edges, br.hi, side="left")), n)
        for i in range(i0, i1):
            u, v = max(edges[i], br.lo), min(edges[i + 1], br.hi)
            if v <= u:
                continue
            fu, fv = float(br.value(u)), float(br.value(v))
            A, B = min(fu, fv), max(fu, fv)
            # an image ending exactly on the last edge still belongs to the last cell
            j0 = min(max(int(np.searchsorted(edges, A, side="right")) - 1, 0), n - 1)
            j1 = min(int(np.searchsorted(edges, B, side="left")), n)
            if j1 <= j0:
                j1 = j0 + 1
            js = np.arange(j0, j1)
            ya = np.clip(edges[js], A, B)
            yb = np.clip(edges[js + 1], A, B)
            if B == A:
                w = np.zeros(len(js))
                w[0] = v - u
            else:
                xa = np.clip(br.inverse(ya), u, v)
                xb = np.clip(br.inverse(yb), u, v)
                w = np.abs(xb - xa)
            keep = w > 0
            rows += [i] * int(keep.sum())
            cols += js[keep].tolist()
            vals += (w[keep] / (edges[i + 1] - edges[i])).tolist()
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    s = np.asarray(P.sum(axis=1)).ravel()
    s[s == 0] = 1.0
    return sp.diags(1.0 / s) @ P


def stationary_vector(P, tol=1e-12, max_iter=200_000, p0=None):
    """Left fixed point of a row-stochastic matrix by power iteration."""
    n = P.shape[0]
    PT = P.T.tocsr()
    p = np.full(n, 1.0 / n) if p0 is None else np.asarray(p0, float) / np.sum(p0)
    best = math.inf
    since = 0
    res = math.inf
    for it in range(1, max_iter + 1):
        q = PT @ p
        q /= q.sum()
        res = float(np.abs(q - p).sum())
        p = q
        if res <= tol:
            return p, res, it
        if res < 0.5 * best:
            best, since = res, 0
        else:
            since += 1
            if since > 5000:
                break
    raise PowerIterationStalled(f"power iteration plateaued at residual {res:.3e}", operation="ulam_density",
                                plateau=res)


def ulam_density(m: IntervalMap, cells=512, tol=1e-12) -> DensityEstimate:
    if cells < 64:
        raise ValueError("cells must be at least 64")
    edges = uniform_edges(m.domain, cells)
    P = ulam_matrix(m, edges)
    p, res, it = stationary_vector(P, tol=tol)
    return DensityEstimate(edges, _normalized(p), "ulam", {"cells": cells, "residual": res, "iterations": it})


def _project(p: DensityEstimate, edges):
    """Masses of ``p`` on another grid, treating its density as piecewise constant."""
    cdf = np.concatenate([[0.0], np.cumsum(p.masses)])
    at = np.interp(edges, p.bin_edges, cdf)
    return np.diff(at)


def project(p: DensityEstimate, edges) -> DensityEstimate:
    """``p`` re-binned onto ``edges`` (same domain)."""
    edges = np.asarray(edges, dtype=float)
    _check_domain(p.domain, (edges[0], edges[-1]))
    meta = dict(p.metadata, projected_from=len(p.masses))
    return DensityEstimate(edges, _normalized(np.maximum(_project(p, edges), 0.0)), p.method, meta)


def invariance_residual(m: IntervalMap, p: DensityEstimate, cells=None) -> float:
    """||p P - p||_1 on the Ulam grid with ``cells`` cells (default: p's own grid if uniform)."""
    if cells is None:
        edges = p.bin_edges
    else:
        edges = uniform_edges(m.domain, cells)
    _check_domain(p.domain, m.domain)
    P = ulam_matrix(m, edges)
    v = _project(p, edges)
    return float(np.abs(P.T @ v - v).sum())


# ---------------------------------------------------------------------------
# tower pushforward
# ---------------------------------------------------------------------------

def _deposit(counts, edges, a, b, mass):
    """Add ``mass`` spread uniformly over [a, b] to the bins (vectorized over intervals)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    mass = np.broadcast_to(np.asarray(mass, float), a.shape)
    point = b <= a
    if point.any():
        idx = np.clip(np.searchsorted(edges, a[point], side="right") - 1, 0, len(counts) - 1)
        np.add.at(counts, idx, mass[point])
    a, b, mass = a[~point], b[~point], mass[~point]
    if a.size == 0:
        return
    # cumulative deposit at every edge: mass * clip((e - a) / (b - a), 0, 1), summed by difference
    i0 = np.clip(np.searchsorted(edges, a, side="right") - 1, 0, len(counts) - 1)
    i1 = np.clip(np.searchsorted(edges, b, side="left") - 1, 0, len(counts) - 1)
    for k in range(int((i1 - i0).max()) + 1):
        j = i0 + k
        sel = j <= i1
        jj = j[sel]
        lo = np.maximum(edges[jj], a[sel])
        hi = np.minimum(edges[jj + 1], b[sel])
        np.add.at(counts, jj, mass[sel] * np.maximum(hi - lo, 0.0) / (b[sel] - a[sel]))


def tower_density(m: IntervalMap, induced, bins=200, approx_threshold=0.05, hard_threshold=0.20) -> DensityEstimate:
    """Spread the Lebesgue mass of every induced branch along its first T iterates.

    ``induced`` is either an enumerated :class:`InducedMap` or a sampled
    :class:`~statstab.tracer.TraceResult`. Unresolved mass is discarded and
    reported.
    """
    from .tracer import TraceResult

    edges = uniform_edges(m.domain, bins)
    counts = np.zeros(bins)
    if isinstance(induced, InducedMap):
        dom = induced.domain_length
        residual = induced.residual_mass / dom
        br = induced.branches
        expected = math.fsum(b.T * b.mass for b in br)
        if br:
            lo = np.array([b.lo for b in br])
            hi = np.array([b.hi for b in br])
            Ts = np.array([b.T for b in br])
            w = hi - lo
            for j in range(int(Ts.max())):
                act = Ts > j
                _deposit(counts, edges, lo[act], hi[act], w[act])
                ks = np.array([b.path[j] for b, a_ in zip(br, act) if a_], dtype=np.int64)
                nlo, nhi = lo[act].copy(), hi[act].copy()
                for k, brk in enumerate(m.branches):
                    s = ks == k
                    if s.any():
                        u, v = brk.value(nlo[s]), brk.value(nhi[s])
                        nlo[s], nhi[s] = np.minimum(u, v), np.maximum(u, v)
                lo[act], hi[act] = nlo, nhi
        n_branches = len(br)
        kind = "enumerated"
    elif isinstance(induced, TraceResult):
        lo_d, hi_d = induced.domain
        dom = hi_d - lo_d
        ret = induced.returned
        residual = 1.0 - float(ret.mean())
        weight = dom / induced.n
        Ts = induced.T[ret]
        y = induced.x[ret].copy()
        paths = induced.paths[ret]
        expected = math.fsum(Ts * weight)
        for j in range(int(Ts.max()) if Ts.size else 0):
            act = Ts > j
            idx = np.clip(np.searchsorted(edges, y[act], side="right") - 1, 0, bins - 1)
            counts += np.bincount(idx, minlength=bins) * weight
            ks = paths[act, j]
            ya = y[act]
            for k, brk in enumerate(m.branches):
                s = ks == k
                if s.any():
                    ya[s] = brk.value(ya[s])
            y[act] = ya
        n_branches = int(ret.sum())
        kind = "sampled"
    else:
        raise TypeError("induced must be an InducedMap or a TraceResult")
    if residual > hard_threshold:
        raise ResidualTooLarge(f"unresolved mass {residual:.3f} of the base exceeds {hard_threshold}",
                               operation="tower_density")
    total = math.fsum(counts)
    if total <= 0:
        raise ResidualTooLarge("no resolved branches", operation="tower_density")
    meta = {"kind": kind, "branches": n_branches, "residual_fraction": residual,
            "approximate": residual > approx_threshold, "raw_mass": total, "expected_raw_mass": expected,
            "bins": bins}
    if kind == "sampled":
        meta["samples"] = induced.n
    return DensityEstimate(edges, _normalized(counts), "tower", meta)


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------

def _check_domain(d1, d2):
    if abs(d1[0] - d2[0]) > 1e-12 or abs(d1[1] - d2[1]) > 1e-12:
        raise DomainMismatch(f"domains differ: {d1} vs {d2}", operation="l1_distance")


def l1_distance(p: DensityEstimate, q: DensityEstimate, grid="refinement") -> float:
    """L1 distance of two piecewise-constant densities.

    ``grid="refinement"`` integrates over the common refinement of both bin
    grids. ``grid="coarser"`` first re-bins both onto the grid with fewer
    bins; near an integrable singularity, two exact binnings of the same
    density at different resolutions already differ by a few percent, and
    this option compares estimates at the resolution both actually carry.
    """
    _check_domain(p.domain, q.domain)
    if grid == "coarser":
        edges = p.bin_edges if len(p.masses) <= len(q.masses) else q.bin_edges
        p, q = project(p, edges), project(q, edges)
    elif grid != "refinement":
        raise ValueError("grid must be 'refinement' or 'coarser'")
    edges = np.union1d(p.bin_edges, q.bin_edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    w = np.diff(edges)
    ip = np.clip(np.searchsorted(p.bin_edges, mid, side="right") - 1, 0, len(p.masses) - 1)
    iq = np.clip(np.searchsorted(q.bin_edges, mid, side="right") - 1, 0, len(q.masses) - 1)
    return math.fsum(np.abs(p.density[ip] - q.density[iq]) * w)
