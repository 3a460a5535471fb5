"""Inducing times of sampled points.

Enumerating the induced partition is exponential in time: branches returning
at time T have width of order e^{-lambda T} and there are of order e^{hT} of
them. For statistics (tails, level sets, tower measures) it is enough to know
which element of the partition a given point lands in. :func:`trace_points`
applies exactly the rules of :class:`~statstab.inducing.InducingEngine` but
only keeps, at every cut, the sub-piece that contains the tracked point.
Image intervals are the same floats the enumerating engine produces, so a
point inside a resolved branch gets that branch's return time.

All points advance through time together; every rule is vectorized.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .inducing import InducedBranch, PreimageTree, ReturnFinderParams, image_resolution, preimage_tree
from .maps import RIGHT, IntervalMap
from .partition import BindingTable, CriticalPartition

# outcome codes
RETURNED, HORIZON, TRUNCATED = 0, 1, 2
OUTCOME_NAMES = {RETURNED: "returned", HORIZON: "horizon", TRUNCATED: "truncated"}


@dataclass
class TraceResult:
    """Per-point inducing data for points x_i sampled in the base interval."""
    x: np.ndarray
    T: np.ndarray  # return time, -1 if unresolved
    E: np.ndarray
    t0: np.ndarray
    outcome: np.ndarray
    stop_time: np.ndarray  # time at which tracking ended (T for returned points)
    escape_times: list  # per point, tuple of escape times
    image: np.ndarray  # (n, 2) image of the point's piece at time E (pullback of the base)
    image_ulps: np.ndarray  # min over the itinerary of image width in ulps of its position
    paths: np.ndarray  # (n, horizon + t_star + 1) branch indices, -1 padded
    domain: tuple
    horizon: int
    params: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.x)

    @property
    def returned(self):
        return self.outcome == RETURNED

    def fraction(self, outcome):
        return float(np.mean(self.outcome == outcome))


class _SortedTree:
    """Preimage-tree nodes ordered by their marked point, for range queries.

    An admissible node lies inside the central third of the query interval,
    so its marked point does too; only that slice needs to be examined.
    """

    def __init__(self, tree: PreimageTree):
        self.order = np.argsort(tree.point, kind="stable")
        self.point = tree.point[self.order]
        self.lo = tree.lo[self.order]
        self.hi = tree.hi[self.order]
        self.depth = tree.depth[self.order]

    def select(self, lo, hi, rule, allow_zero):
        L = hi - lo
        a, b = lo + L / 3, hi - L / 3
        i0 = np.searchsorted(self.point, a, side="left")
        i1 = np.searchsorted(self.point, b, side="right")
        if i1 <= i0:
            return -1
        plo, phi, dep, pt = self.lo[i0:i1], self.hi[i0:i1], self.depth[i0:i1], self.point[i0:i1]
        ok = (plo >= a) & (phi <= b)
        if not allow_zero:
            ok &= dep >= 1
        idx = np.flatnonzero(ok)
        if idx.size == 0:
            return -1
        if rule == "largest":
            primary = -(phi[idx] - plo[idx])
        else:
            primary = np.abs(pt[idx] - 0.5 * (lo + hi))
        key = np.lexsort((pt[idx], dep[idx], primary))
        return int(self.order[i0 + idx[key[0]]])


def _binding_lookup(partition: CriticalPartition, binding: BindingTable):
    """Per spec, an array p[r] for r = 0..r_max + 1 (deeper r use the deepest stored value)."""
    out = {}
    for cells in partition:
        top = cells.r_max + 2
        arr = np.array([binding.get(cells.spec_index, max(r, partition.r_delta + 1)) for r in range(top)])
        out[cells.spec_index] = arr
    return out


def trace_points(m: IntervalMap, partition: CriticalPartition, binding: BindingTable,
                 params: ReturnFinderParams, x, N_max=200, depth_rule="min",
                 tree: PreimageTree | None = None) -> TraceResult:
    x = np.asarray(x, dtype=float)
    lo0, hi0 = params.validate(m)
    tree = tree or preimage_tree(m, params)
    stree = _SortedTree(tree)
    delta = partition.delta
    locs = m.critical_locations
    pb = _binding_lookup(partition, binding)
    S = len(x)
    width = N_max + params.t_star + 1
    paths = np.full((S, width), -1, dtype=np.int8)

    y = x.copy()
    ulo = np.full(S, lo0)
    uhi = np.full(S, hi0)
    free_at = np.zeros(S, dtype=np.int64)
    active = np.ones(S, bool)
    T = np.full(S, -1, dtype=np.int64)
    E = np.full(S, -1, dtype=np.int64)
    t0 = np.full(S, -1, dtype=np.int64)
    outcome = np.full(S, HORIZON, dtype=np.int8)
    stop = np.full(S, N_max, dtype=np.int64)
    image = np.full((S, 2), np.nan)
    escapes = [[] for _ in range(S)]
    image_ulps = np.full(S, np.inf)

    for n in range(N_max + 1):
        pending = active.copy()
        rounds = 0
        while pending.any():
            rounds += 1
            if rounds > 64:
                raise RuntimeError("classification did not settle")
            idx = np.flatnonzero(pending)
            # cut at critical locations strictly inside, keeping the side of y
            for c in locs:
                a, b, yy = ulo[idx], uhi[idx], y[idx]
                cut = (a < c) & (c < b)
                if cut.any():
                    right = cut & (yy >= c)
                    left = cut & (yy < c)
                    ulo[idx[right]] = c
                    uhi[idx[left]] = c
            free = idx[free_at[idx] <= n]
            settled = idx[free_at[idx] > n]
            pending[settled] = False
            if free.size == 0:
                break
            length = uhi[free] - ulo[free]
            esc = free[length >= delta]
            small = free[length < delta]
            # escapes: return to the base or keep the remainder holding y
            if esc.size:
                j = np.array([stree.select(ulo[i], uhi[i], params.rule, n > 0) for i in esc], dtype=np.int64)
                none = esc[j < 0]
                pending[none] = False  # retry after the next step
                got, jj = esc[j >= 0], j[j >= 0]
                zl, zr = tree.lo[jj], tree.hi[jj]
                for i in got:
                    escapes[i].append(n)
                inside = (y[got] >= zl) & (y[got] <= zr)
                done = got[inside]
                dj = jj[inside]
                T[done] = n + tree.depth[dj]
                E[done] = n
                t0[done] = tree.depth[dj]
                outcome[done] = RETURNED
                stop[done] = T[done]
                image[done, 0] = zl[inside]
                image[done, 1] = zr[inside]
                for i, node in zip(done, dj):
                    p = tree.paths[node]
                    if p:
                        paths[i, n:n + len(p)] = p
                active[done] = False
                pending[done] = False
                rest = got[~inside]
                below = y[rest] < zl[~inside]
                uhi[rest[below]] = zl[~inside][below]
                ulo[rest[~below]] = zr[~inside][~below]
                # remainders are fresh intervals at time n: classified again
            if small.size:
                _classify_small(small, n, y, ulo, uhi, free_at, active, outcome, stop, partition, pb,
                                depth_rule, pending)
        # step every active point
        idx = np.flatnonzero(active)
        if n == N_max or idx.size == 0:
            break
        mid = 0.5 * (ulo[idx] + uhi[idx])
        ks = m.locate(mid)
        for k, br in enumerate(m.branches):
            sel = idx[ks == k]
            if sel.size == 0:
                continue
            a = br.value(ulo[sel])
            b = br.value(uhi[sel])
            ulo[sel] = np.minimum(a, b)
            uhi[sel] = np.maximum(a, b)
            y[sel] = np.clip(br.value(y[sel]), ulo[sel], uhi[sel])
        paths[idx, n] = ks
        scale = np.maximum(np.abs(ulo[idx]), np.abs(uhi[idx]))
        image_ulps[idx] = np.minimum(image_ulps[idx], (uhi[idx] - ulo[idx]) / np.spacing(scale))
    return TraceResult(x, T, E, t0, outcome, stop, [tuple(e) for e in escapes], image, image_ulps, paths,
                       (lo0, hi0), N_max,
                       params={"delta": delta, "delta_star": params.delta_star, "t_star": params.t_star,
                               "rule": params.rule, "sidedness": params.sidedness, "N_max": N_max,
                               "depth_rule": depth_rule})


def _classify_small(small, n, y, ulo, uhi, free_at, active, outcome, stop, partition, pb, depth_rule,
                    pending):
    rd = partition.r_delta
    hit_count = np.zeros(small.size, dtype=np.int64)
    masks = []
    for cells in partition:
        c = cells.location
        a, b = ulo[small], uhi[small]
        if cells.side == RIGHT:
            hit = (a >= c) & (a - c < cells.delta_radius) & (b > c)
        else:
            hit = (b <= c) & (c - b < cells.delta_radius) & (a < c)
        masks.append(hit)
        hit_count += hit
    multi = hit_count > 1
    if multi.any():
        # two components: keep the half of the gap split that holds y
        for q in np.flatnonzero(multi):
            i = small[q]
            ends = sorted(cells.location + cells.side * cells.delta_radius
                          for cells, mk in zip(partition, masks) if mk[q])
            z = 0.5 * (ends[0] + ends[1])
            if y[i] >= z:
                ulo[i] = z
            else:
                uhi[i] = z
        # re-examined in the next round at the same time
    settle = small[~multi]
    pending[settle] = False
    for cells, hit in zip(partition, masks):
        sel = small[hit & ~multi]
        if sel.size == 0:
            continue
        c, side, b = cells.location, cells.side, cells.bounds
        if side == RIGHT:
            t1, t2, ty = ulo[sel] - c, uhi[sel] - c, y[sel] - c
        else:
            t1, t2, ty = c - uhi[sel], c - ulo[sel], c - y[sel]
        i1 = np.searchsorted(b, t1, side="right") - 1
        i2 = np.minimum(np.searchsorted(b, t2, side="left") - 1, cells.n_cells - 1)
        iness = (i1 >= 0) & (i2 - i1 + 1 <= 3)
        parr = pb[cells.spec_index]
        if iness.any():
            s_in = sel[iness]
            if depth_rule == "min":
                r = cells.r[np.minimum(i2[iness], cells.n_cells - 2)]
            else:
                r = cells.r[i1[iness]]
            free_at[s_in] = n + 1 + parr[np.minimum(r, len(parr) - 1)]
        ess = ~iness
        if not ess.any():
            continue
        s_es = sel[ess]
        t1e, t2e, tye = t1[ess], t2[ess], ty[ess]
        trunc = (t2e <= b[0]) | (tye < b[0])
        if trunc.any():
            gone = s_es[trunc]
            active[gone] = False
            outcome[gone] = TRUNCATED
            stop[gone] = n
        keep = ~trunc
        s_es, t1e, t2e, tye = s_es[keep], t1e[keep], t2e[keep], tye[keep]
        if s_es.size == 0:
            continue
        kf = np.searchsorted(b, t1e, side="left")
        kl = np.maximum(np.searchsorted(b, t2e, side="right") - 2, kf)
        k = np.clip(np.searchsorted(b, tye, side="right") - 1, kf, kl)
        # same floats as the enumerating engine: c + side * bound
        zlo = np.where(k == kf, np.nan, c + side * b[k])
        zhi = np.where(k == kl, np.nan, c + side * b[np.minimum(k + 1, len(b) - 1)])
        if side == RIGHT:
            new_lo = np.where(np.isnan(zlo), ulo[s_es], zlo)
            new_hi = np.where(np.isnan(zhi), uhi[s_es], zhi)
            tr = (k == kf) & (t1e < b[0])
            new_lo = np.where(tr, c + side * b[0], new_lo)
        else:
            new_hi = np.where(np.isnan(zlo), uhi[s_es], zlo)
            new_lo = np.where(np.isnan(zhi), ulo[s_es], zhi)
            tr = (k == kf) & (t1e < b[0])
            new_hi = np.where(tr, c + side * b[0], new_hi)
        ulo[s_es], uhi[s_es] = new_lo, new_hi
        r = cells.r[k]
        free_at[s_es] = n + 1 + parr[np.minimum(r, len(parr) - 1)]


def branch_endpoints(m: IntervalMap, tr: TraceResult):
    """Original-coordinate endpoints of each returned point's branch (NaN otherwise)."""
    S = tr.n
    lo = np.full(S, np.nan)
    hi = np.full(S, np.nan)
    ret = np.flatnonzero(tr.returned)
    if ret.size == 0:
        return lo, hi
    z = tr.image[ret].copy()
    Es = tr.E[ret]
    for step in range(int(Es.max()) - 1, -1, -1):
        act = Es > step
        ks = tr.paths[ret, step]
        for k, br in enumerate(m.branches):
            sel = act & (ks == k)
            if not sel.any():
                continue
            a, b = br.image
            z[sel] = br.inverse(np.clip(z[sel], a, b))
    lo[ret] = np.minimum(z[:, 0], z[:, 1])
    hi[ret] = np.maximum(z[:, 0], z[:, 1])
    return lo, hi


def sampled_branches(m: IntervalMap, tr: TraceResult, resolution_ulps=2.0**28):
    """Distinct branches met by the sample that are resolvable in double precision.

    Both the branch itself and each of its images along the itinerary must
    span ``resolution_ulps`` ulps; the exact engine applies the same floor.
    """
    lo, hi = branch_endpoints(m, tr)
    ok = tr.returned & np.isfinite(lo)
    scale = np.maximum(np.abs(lo), np.abs(hi))
    ok &= (hi - lo) >= resolution_ulps * np.spacing(np.where(np.isfinite(scale), scale, 1.0))
    ok &= tr.image_ulps >= resolution_ulps
    seen = {}
    for i in np.flatnonzero(ok):
        key = (lo[i], hi[i], int(tr.T[i]))
        if key in seen:
            continue
        path = tr.paths[i, :tr.T[i]].astype(np.int16)
        ev = tuple((int(e), "escape", None, None) for e in tr.escape_times[i])
        ev = ev + ((int(tr.E[i]), "return_to_star", None, int(tr.t0[i])),)
        seen[key] = InducedBranch(float(lo[i]), float(hi[i]), int(tr.T[i]), int(tr.E[i]), int(tr.t0[i]),
                                  path, ev, tuple(tr.escape_times[i]))
    out = sorted(seen.values(), key=lambda b: (b.lo, b.T))
    res = image_resolution(m, out)
    return [b for b, r in zip(out, res) if r >= resolution_ulps]


def uniform_points(domain, count, seed):
    """Stratified uniform sample of ``domain``: one point per equal cell."""
    rng = np.random.default_rng(seed)
    lo, hi = domain
    u = (np.arange(count) + rng.random(count)) / count
    return lo + (hi - lo) * u
