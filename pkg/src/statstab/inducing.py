"""Escape partitions, returns to the base interval, and the induced Markov map.

The construction is run layer by layer in time. Every piece alive at time n
is an interval ``[lo, hi]`` of the starting domain whose n-th image
``[ulo, uhi]`` lies inside a single branch domain. Image endpoints are the
exact split points chosen at earlier times, iterated forward; original
endpoints are recovered by pulling split points back along the branch path,
which is contracting and therefore well conditioned. Children of a split
share their parent's endpoint floats, so the pieces always tile the input
exactly.

Branch paths are stored in a shared trie (``_PathTrie``) so that splitting a
piece never copies its history.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidReturnParams, NoReturnWithinHorizon
from .maps import LEFT, RIGHT, IntervalMap
from .partition import BindingTable, CriticalPartition


@dataclass(frozen=True)
class ItineraryEvent:
    time: int
    kind: str  # free, bound, inessential_return, essential_return, escape, return_to_star
    depth: int | None = None
    t0: int | None = None

    def to_json(self):
        out = {"time": self.time, "kind": self.kind}
        if self.depth is not None:
            out["depth"] = self.depth
        if self.t0 is not None:
            out["t0"] = self.t0
        return out


@dataclass(frozen=True)
class ReturnFinderParams:
    delta_star: float
    t_star: int = 12
    sidedness: str = "two"  # "two", "left" or "right" half of (c* - d*, c* + d*)
    xi: float = 0.1
    rule: str = "central"  # preimage closest to the centre; "largest" maximizes |w*|

    def interval(self, m: IntervalMap):
        if m.star is None:
            raise InvalidReturnParams("map has no designated critical point", operation="find_return")
        c = m.star.location
        d = self.delta_star
        if self.sidedness == "two":
            lo, hi = c - d, c + d
        elif self.sidedness == "right":
            lo, hi = c, c + d
        elif self.sidedness == "left":
            lo, hi = c - d, c
        else:
            raise InvalidReturnParams(f"unknown sidedness {self.sidedness!r}", operation="find_return")
        return lo, hi

    def validate(self, m: IntervalMap):
        if not (self.delta_star > 0 and self.t_star >= 0 and 0 < self.xi < 1):
            raise InvalidReturnParams("need delta_star > 0, t_star >= 0, 0 < xi < 1", operation="find_return")
        if self.rule not in ("central", "largest"):
            raise InvalidReturnParams(f"unknown rule {self.rule!r}", operation="find_return")
        lo, hi = self.interval(m)
        a, b = m.domain
        if lo < a or hi > b:
            raise InvalidReturnParams("base interval leaves the domain", operation="find_return")
        c = m.star.location
        inside = [x for x in m.critical_locations if lo < x < hi and x != c]
        if inside:
            raise InvalidReturnParams(f"base interval contains other critical points {inside}",
                                      operation="find_return")
        return lo, hi


# ---------------------------------------------------------------------------
# preimage tree of the base interval
# ---------------------------------------------------------------------------

@dataclass
class PreimageTree:
    """Pullbacks of the base interval along every admissible inverse path."""
    depth: np.ndarray
    point: np.ndarray  # preimage of c*
    lo: np.ndarray  # pullback of the base interval
    hi: np.ndarray
    paths: list  # forward branch sequence from the node back to the base

    @property
    def size(self):
        return len(self.depth)


def _image_bounds(m: IntervalMap):
    return np.array([br.image for br in m.branches])


def _inverse(m: IntervalMap, k, y):
    br = m.branches[k]
    lo, hi = br.image
    return br.inverse(np.clip(y, lo, hi))


def preimage_tree(m: IntervalMap, params: ReturnFinderParams) -> PreimageTree:
    lo, hi = params.validate(m)
    imgs = _image_bounds(m)
    depth, point, los, his, paths = [0], [m.star.location], [lo], [hi], [()]
    frontier = [0]
    for t in range(1, params.t_star + 1):
        nxt = []
        for i in frontier:
            for k in range(len(m.branches)):
                if imgs[k, 0] <= los[i] and his[i] <= imgs[k, 1]:
                    x = _inverse(m, k, np.array([los[i], his[i], point[i]]))
                    if not np.all(np.isfinite(x)):
                        continue
                    depth.append(t)
                    point.append(float(x[2]))
                    los.append(float(min(x[0], x[1])))
                    his.append(float(max(x[0], x[1])))
                    paths.append((k,) + paths[i])
                    nxt.append(len(depth) - 1)
        frontier = nxt
    return PreimageTree(np.array(depth), np.array(point), np.array(los), np.array(his), paths)


def select_return(tree: PreimageTree, lo, hi, rule="central", allow_zero=True):
    """Index of the admissible node for the image interval [lo, hi], or None."""
    L = hi - lo
    ok = (tree.lo >= lo + L / 3) & (tree.hi <= hi - L / 3)
    if not allow_zero:
        ok &= tree.depth >= 1
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return None
    if rule == "largest":
        key = np.lexsort((tree.point[idx], tree.depth[idx], -(tree.hi[idx] - tree.lo[idx])))
    else:
        centre = 0.5 * (lo + hi)
        key = np.lexsort((tree.point[idx], tree.depth[idx], np.abs(tree.point[idx] - centre)))
    return int(idx[key[0]])


def find_return(m: IntervalMap, params: ReturnFinderParams, omega, tree: PreimageTree | None = None,
                delta=None, allow_zero=True):
    """Sub-interval of ``omega`` mapped onto the base interval, and the time it takes.

    Returns ``((lo, hi), t0, path)``. ``omega`` is an image interval of length at
    least delta; the chosen pullback sits in its central third so both
    remainders have length at least |omega|/3.
    """
    lo, hi = float(omega[0]), float(omega[1])
    if delta is not None and hi - lo < delta * (1 - 1e-12):
        raise ValueError("find_return needs |omega| >= delta")
    tree = tree or preimage_tree(m, params)
    i = select_return(tree, lo, hi, params.rule, allow_zero)
    if i is None:
        raise NoReturnWithinHorizon(
            f"no pullback of the base interval within depth {params.t_star} fits the central third "
            f"of [{lo}, {hi}]", operation="find_return", omega=(lo, hi))
    return (float(tree.lo[i]), float(tree.hi[i])), int(tree.depth[i]), tree.paths[i]


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class InducedBranch:
    lo: float
    hi: float
    T: int
    E: int
    t0: int
    path: np.ndarray  # branch index applied at each of the T steps
    events: tuple  # compact (time, kind, depth, aux) records; see expand_events
    escape_times: tuple = ()

    @property
    def mass(self):
        return self.hi - self.lo

    @property
    def escapes(self):
        return len(self.escape_times)


@dataclass
class EscapeElement:
    lo: float
    hi: float
    E: int
    image: tuple  # (lo, hi) of f^E(omega)
    path: np.ndarray
    events: tuple

    @property
    def mass(self):
        return self.hi - self.lo


@dataclass
class ResidualPiece:
    lo: float
    hi: float
    time: int  # last time the piece was tracked
    reason: str  # horizon, resolution, truncated, budget, no_return
    escape_times: tuple = ()

    @property
    def mass(self):
        return self.hi - self.lo


@dataclass
class InducedMap:
    domain: tuple
    branches: list
    residual: list
    horizon: int
    params: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    budget_exhausted: bool = False

    @property
    def domain_length(self):
        return self.domain[1] - self.domain[0]

    @property
    def covered_mass(self):
        return math.fsum(b.mass for b in self.branches)

    @property
    def residual_mass(self):
        return math.fsum(r.mass for r in self.residual)

    def residual_by_reason(self):
        out = {}
        for r in self.residual:
            out[r.reason] = out.get(r.reason, 0.0) + r.mass
        return out

    def conservation_error(self):
        total = math.fsum([b.mass for b in self.branches] + [r.mass for r in self.residual])
        return abs(total - self.domain_length) / self.domain_length


def expand_events(events, binding_p=None, T=None):
    """Per-time itinerary: fills the free and bound steps between recorded events.

    ``events`` holds (time, kind, depth, aux) tuples where aux is t0 for a
    return to the star and the spec index for a critical return. Bound windows
    follow each return of depth r for ``binding_p(spec_index, r)`` steps.
    """
    out = []
    recorded = {}
    for ev in events:
        recorded.setdefault(ev[0], []).append(ev)
    last = max([ev[0] for ev in events], default=-1) if T is None else T - 1
    bound_until = -1
    for n in range(0, last + 1):
        evs = recorded.get(n, [])
        if n <= bound_until and not any(e[1] in ("inessential_return", "essential_return") for e in evs):
            out.append(ItineraryEvent(n, "bound"))
        elif not evs:
            out.append(ItineraryEvent(n, "free"))
        for time, kind, depth, aux in evs:
            if kind in ("inessential_return", "essential_return"):
                out.append(ItineraryEvent(time, kind, depth))
                bound_until = n + (binding_p(aux, depth) if binding_p else 0)
            else:
                out.append(ItineraryEvent(time, kind, depth, aux))
    return out


@dataclass(frozen=True)
class FreeStepDecision:
    kind: str  # escape, no_action, inessential, essential, split
    depth: int | None = None
    spec_index: int | None = None
    cells: tuple = ()  # (r, j) labels of the subdivision cells, innermost first
    truncated: bool = False  # part of the image lies beyond the deepest resolved annulus
    split_at: float | None = None  # gap midpoint when two components are met


def classify_free_step(m: IntervalMap, partition: CriticalPartition, lo, hi, depth_rule="min") -> FreeStepDecision:
    """What the construction does with a free image interval [lo, hi].

    Mirrors the per-piece rules of :class:`InducingEngine`, one interval at a time.
    """
    if hi - lo >= partition.delta:
        return FreeStepDecision("escape")
    hits = []
    for cells in partition:
        c = cells.location
        if cells.side == RIGHT and lo >= c and lo - c < cells.delta_radius and hi > c:
            hits.append((cells, lo - c, hi - c))
        elif cells.side == LEFT and hi <= c and c - hi < cells.delta_radius and lo < c:
            hits.append((cells, c - hi, c - lo))
    if not hits:
        return FreeStepDecision("no_action")
    if len(hits) > 1:
        ends = sorted(h[0].location + h[0].side * h[0].delta_radius for h in hits)
        return FreeStepDecision("split", split_at=0.5 * (ends[0] + ends[1]))
    cells, t1, t2 = hits[0]
    b = cells.bounds
    i1 = int(np.searchsorted(b, t1, side="right")) - 1
    i2 = min(int(np.searchsorted(b, t2, side="left")) - 1, cells.n_cells - 1)
    if i1 >= 0 and i2 - i1 + 1 <= 3:
        rs = cells.r[i1:i2 + 1]
        rs = rs[rs >= partition.r_delta + 1]
        r = int(rs.min() if depth_rule == "min" else rs.max())
        return FreeStepDecision("inessential", depth=r, spec_index=cells.spec_index)
    if t2 <= b[0]:
        return FreeStepDecision("essential", spec_index=cells.spec_index, truncated=True)
    kf = int(np.searchsorted(b, t1, side="left"))
    kl = max(int(np.searchsorted(b, t2, side="right")) - 2, kf)
    labels = tuple((int(cells.r[k]), int(cells.j[k])) for k in range(kf, kl + 1))
    return FreeStepDecision("essential", spec_index=cells.spec_index, cells=labels, truncated=bool(t1 < b[0]))


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------

class _PathTrie:
    """Append-only trie of branch paths; node 0 is the empty path."""

    def __init__(self, capacity=1 << 16):
        self.parent = np.zeros(capacity, dtype=np.int64)
        self.branch = np.full(capacity, -1, dtype=np.int16)
        self.size = 1

    def extend(self, nodes, ks):
        n = len(nodes)
        while self.size + n > len(self.parent):
            self.parent = np.concatenate([self.parent, np.zeros_like(self.parent)])
            self.branch = np.concatenate([self.branch, np.full_like(self.branch, -1)])
        ids = np.arange(self.size, self.size + n)
        self.parent[ids] = nodes
        self.branch[ids] = ks
        self.size += n
        return ids

    def path(self, node):
        out = []
        while node != 0:
            out.append(int(self.branch[node]))
            node = int(self.parent[node])
        return out[::-1]

    def pullback(self, m: IntervalMap, nodes, z, depth):
        """Pull image points ``z`` (one per node) back ``depth`` steps."""
        z = np.asarray(z, dtype=float).copy()
        cur = np.asarray(nodes, dtype=np.int64).copy()
        for _ in range(depth):
            ks = self.branch[cur]
            for k in np.unique(ks):
                sel = ks == k
                z[sel] = _inverse(m, int(k), z[sel])
            cur = self.parent[cur]
        return z


@dataclass
class EngineConfig:
    horizon: int = 200
    w_min: float = 0.0
    resolution_ulps: float = 2.0**28
    branch_cap: int = 10**6
    piece_cap: int = 200_000  # live pieces; the partition grows exponentially in time
    depth_rule: str = "min"


class _Layer:
    """Struct-of-arrays for the pieces alive at one time."""
    fields = ("lo", "hi", "ulo", "uhi", "sgn", "free_at", "node", "flag")

    def __init__(self, **arrays):
        self.lo = arrays["lo"]
        self.hi = arrays["hi"]
        self.ulo = arrays["ulo"]
        self.uhi = arrays["uhi"]
        self.sgn = arrays["sgn"]
        self.free_at = arrays["free_at"]
        self.node = arrays["node"]
        self.flag = arrays.get("flag", np.zeros(len(self.lo), bool))
        self.events = arrays["events"]

    def __len__(self):
        return len(self.lo)

    @classmethod
    def from_rows(cls, rows):
        if not rows:
            return cls.empty()
        cols = list(zip(*rows))
        return cls(lo=np.array(cols[0], float), hi=np.array(cols[1], float), ulo=np.array(cols[2], float),
                   uhi=np.array(cols[3], float), sgn=np.array(cols[4], np.int8),
                   free_at=np.array(cols[5], np.int64), node=np.array(cols[6], np.int64),
                   flag=np.array(cols[7], bool), events=list(cols[8]))

    @classmethod
    def empty(cls):
        return cls(lo=np.zeros(0), hi=np.zeros(0), ulo=np.zeros(0), uhi=np.zeros(0),
                   sgn=np.zeros(0, np.int8), free_at=np.zeros(0, np.int64), node=np.zeros(0, np.int64),
                   flag=np.zeros(0, bool), events=[])

    def row(self, i):
        return (self.lo[i], self.hi[i], self.ulo[i], self.uhi[i], self.sgn[i], self.free_at[i],
                self.node[i], self.flag[i], self.events[i])

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return _Layer(lo=self.lo[idx], hi=self.hi[idx], ulo=self.ulo[idx], uhi=self.uhi[idx],
                      sgn=self.sgn[idx], free_at=self.free_at[idx], node=self.node[idx],
                      flag=self.flag[idx], events=[self.events[i] for i in idx])

    @staticmethod
    def concat(layers):
        layers = [l for l in layers if len(l)]
        if not layers:
            return _Layer.empty()
        kw = {f: np.concatenate([getattr(l, f) for l in layers]) for f in _Layer.fields}
        kw["events"] = [e for l in layers for e in l.events]
        return _Layer(**kw)


def _escape_times(events):
    return tuple(ev[0] for ev in events if ev[1] == "escape")


class InducingEngine:
    """Runs the escape / return construction from a set of starting intervals."""

    def __init__(self, m: IntervalMap, partition: CriticalPartition, binding: BindingTable,
                 config: EngineConfig, params: ReturnFinderParams | None = None, stop_at_escape=False):
        self.m = m
        self.partition = partition
        self.binding = binding
        self.cfg = config
        self.params = params
        self.stop_at_escape = stop_at_escape
        self.delta = partition.delta
        self.trie = _PathTrie()
        self.locs = m.critical_locations
        self.tree = preimage_tree(m, params) if params is not None else None
        self.target = params.interval(m) if params is not None else None
        self.branches: list = []
        self.elements: list = []
        self.residual: list = []
        self.xi_ratios: list = []
        self.no_return_events = 0
        self.budget_exhausted = False
        self.effective_horizon = config.horizon
        if config.depth_rule not in ("min", "max"):
            raise ValueError("depth_rule must be 'min' or 'max'")

    # -- helpers ------------------------------------------------------------
    def _floor(self, lo, hi):
        scale = np.maximum(np.abs(lo), np.abs(hi))
        return np.maximum(self.cfg.w_min, self.cfg.resolution_ulps * np.spacing(scale))

    def _pull(self, layer, rows, z, n):
        return self.trie.pullback(self.m, layer.node[rows], z, n)

    def _split(self, layer, i, zs, n, xs=None):
        """Cut piece ``i`` at increasing image points ``zs``.

        Returns a list of row tuples whose original endpoints are shared floats.
        """
        if xs is None:
            xs = self._pull(layer, np.full(len(zs), i), np.asarray(zs, float), n)
        lo, hi, ulo, uhi, sgn = layer.lo[i], layer.hi[i], layer.ulo[i], layer.uhi[i], layer.sgn[i]
        xs = np.clip(xs, lo, hi)
        ims = [ulo] + list(zs) + [uhi]
        if sgn > 0:
            xs = np.maximum.accumulate(xs)
            cuts = [lo] + list(xs) + [hi]
        else:
            xs = np.minimum.accumulate(xs)
            cuts = [hi] + list(xs) + [lo]
        rows = []
        for q in range(len(ims) - 1):
            a, b = cuts[q], cuts[q + 1]
            olo, ohi = (a, b) if sgn > 0 else (b, a)
            rows.append([olo, ohi, ims[q], ims[q + 1], sgn, layer.free_at[i], layer.node[i], False,
                         layer.events[i]])
        return rows

    def _residual(self, lo, hi, n, reason, events):
        if hi > lo:
            self.residual.append(ResidualPiece(float(lo), float(hi), int(n), reason, _escape_times(events)))

    # -- classification --------------------------------------------------------
    def _component(self, ulo, uhi):
        """(cells, t1, t2) for the unique Delta component met by [ulo, uhi], or a gap split."""
        hits = []
        for cells in self.partition:
            c = cells.location
            if cells.side == RIGHT:
                if ulo >= c and ulo - c < cells.delta_radius and uhi > c:
                    hits.append((cells, ulo - c, uhi - c))
            else:
                if uhi <= c and c - uhi < cells.delta_radius and ulo < c:
                    hits.append((cells, c - uhi, c - ulo))
        return hits

    def _depth(self, cells, i1, i2):
        rs = cells.r[max(i1, 0):i2 + 1]
        rs = rs[rs >= self.partition.r_delta + 1]
        return int(rs.min() if self.cfg.depth_rule == "min" else rs.max())

    def _classify_returns(self, layer, idx, n):
        """Handle free pieces below delta that may meet Delta. Returns new rows and rows kept."""
        new_rows, keep = [], []
        for i in idx:
            hits = self._component(layer.ulo[i], layer.uhi[i])
            if not hits:
                keep.append(i)
                continue
            if len(hits) > 1:
                # two components: cut at the middle of the gap between them
                ends = sorted(h[0].location + h[0].side * h[0].delta_radius for h in hits)
                z = 0.5 * (ends[0] + ends[1])
                new_rows += self._split(layer, i, [z], n)
                continue
            cells, t1, t2 = hits[0]
            b = cells.bounds
            i1 = int(np.searchsorted(b, t1, side="right")) - 1
            i2 = min(int(np.searchsorted(b, t2, side="left")) - 1, cells.n_cells - 1)
            if i1 >= 0 and i2 - i1 + 1 <= 3:
                r = self._depth(cells, i1, i2)
                p = self.binding.get(cells.spec_index, r)
                layer.free_at[i] = n + 1 + p
                layer.events[i] = layer.events[i] + ((n, "inessential_return", r, cells.spec_index),)
                keep.append(i)
                continue
            # essential return: one piece per fully covered cell
            truncated = t1 < b[0]
            if t2 <= b[0]:
                self._residual(layer.lo[i], layer.hi[i], n, "truncated", layer.events[i])
                continue
            kf = int(np.searchsorted(b, t1, side="left"))
            kl = max(int(np.searchsorted(b, t2, side="right")) - 2, kf)
            dists = list(b[kf + 1:kl + 1])
            if truncated:
                dists = [b[0]] + dists
            zs = np.asarray(dists, float)
            zs = cells.location + cells.side * zs
            zs = np.sort(zs)
            rows = self._split(layer, i, zs, n)
            # rows are ordered by image; map each back to its cell by its mid distance
            for row in rows:
                mid = 0.5 * (row[2] + row[3])
                t = abs(mid - cells.location)
                k = int(np.searchsorted(b, t, side="right")) - 1
                if k < 0:
                    self._residual(row[0], row[1], n, "truncated", row[8])
                    continue
                k = min(max(k, kf), kl)
                r = int(cells.r[k])
                p = self.binding.get(cells.spec_index, r)
                row[5] = n + 1 + p
                row[7] = True
                row[8] = row[8] + ((n, "essential_return", r, cells.spec_index),)
                new_rows.append(row)
        return new_rows, keep

    def _escape(self, layer, idx, n):
        new_rows, keep = [], []
        for i in idx:
            ulo, uhi = layer.ulo[i], layer.uhi[i]
            events = layer.events[i] + ((n, "escape", None, None),)
            if self.stop_at_escape:
                path = np.array(self.trie.path(int(layer.node[i])), dtype=np.int16)
                self.elements.append(EscapeElement(float(layer.lo[i]), float(layer.hi[i]), n,
                                                   (float(ulo), float(uhi)), path, events))
                continue
            j = select_return(self.tree, ulo, uhi, self.params.rule, allow_zero=n > 0)
            if j is None:
                self.no_return_events += 1
                layer.flag[i] = True
                keep.append(i)
                continue
            zl, zr = float(self.tree.lo[j]), float(self.tree.hi[j])
            t0 = int(self.tree.depth[j])
            self.xi_ratios.append((zr - zl) / (uhi - ulo))
            layer.events[i] = events
            rows = self._split(layer, i, [zl, zr], n)
            left, mid, right = rows
            olo, ohi = mid[0], mid[1]
            T = n + t0
            if ohi - olo < self._floor(olo, ohi):
                self._residual(olo, ohi, n, "resolution", events)
            else:
                path = np.array(self.trie.path(int(layer.node[i])) + list(self.tree.paths[j]), dtype=np.int16)
                ev = events + ((n, "return_to_star", None, t0),)
                self.branches.append(InducedBranch(float(olo), float(ohi), T, n, t0, path, ev,
                                                   _escape_times(ev)))
            for row in (left, right):
                row[5] = n  # free again at once: a fresh interval starting at time n
                row[7] = False
                new_rows.append(row)
        return new_rows, keep

    # -- main loop ---------------------------------------------------------------
    def run(self, starts, start_time=0):
        layer = _Layer.from_rows([[lo, hi, lo, hi, 1, start_time, 0, False, ()] for lo, hi in starts])
        n = start_time
        while len(layer) and n <= self.cfg.horizon:
            layer = self._process_time(layer, n)
            if not len(layer):
                break
            if n == self.cfg.horizon:
                break
            if len(self.branches) >= self.cfg.branch_cap or len(layer) > self.cfg.piece_cap:
                self.budget_exhausted = True
                self.effective_horizon = n
                break
            layer = self._step(layer)
            n += 1
        for i in range(len(layer)):
            reason = "budget" if self.budget_exhausted else "horizon"
            self._residual(layer.lo[i], layer.hi[i], n, reason, layer.events[i])
        return self

    def _process_time(self, layer, n):
        done = []
        pending = layer
        guard = 0
        while len(pending):
            guard += 1
            if guard > 10000:
                raise RuntimeError("classification did not settle")
            # 1. cut at critical locations strictly inside the image
            out_rows = []
            k = np.searchsorted(self.locs, pending.ulo, side="right")
            inside = np.zeros(len(pending), bool)
            if self.locs.size:
                kk = np.minimum(k, self.locs.size - 1)
                inside = (k < self.locs.size) & (self.locs[kk] < pending.uhi)
            cut_idx = np.flatnonzero(inside)
            for i in cut_idx:
                zs = self.locs[(self.locs > pending.ulo[i]) & (self.locs < pending.uhi[i])]
                for row in self._split(pending, i, zs, n):
                    out_rows.append(row)
            rest = np.flatnonzero(~inside)
            # 2. resolution floor
            w = pending.hi[rest] - pending.lo[rest]
            tiny = w < self._floor(pending.lo[rest], pending.hi[rest])
            # the image must be resolvable where it sits too: a narrow image far from 0
            # carries only a few significant bits of its own position
            wi = pending.uhi[rest] - pending.ulo[rest]
            scale = np.maximum(np.abs(pending.ulo[rest]), np.abs(pending.uhi[rest]))
            tiny |= wi < self.cfg.resolution_ulps * np.spacing(scale)
            for i in rest[tiny]:
                self._residual(pending.lo[i], pending.hi[i], n, "resolution", pending.events[i])
            rest = rest[~tiny]
            free = rest[(pending.free_at[rest] <= n) & ~pending.flag[rest]]
            settled = list(rest[(pending.free_at[rest] > n) | pending.flag[rest]])
            length = pending.uhi[free] - pending.ulo[free]
            esc = free[length >= self.delta]
            small = free[length < self.delta]
            rows_e, keep_e = self._escape(pending, esc, n)
            rows_r, keep_r = self._classify_returns(pending, small, n)
            keep = settled + keep_e + keep_r
            for i in keep:
                pending.flag[i] = True
            done.append(pending.take(np.array(sorted(keep), dtype=np.int64)))
            pending = _Layer.from_rows(out_rows + rows_e + rows_r)
            # essential-return pieces are already classified for this time
            if len(pending):
                classified = pending.flag.copy()
                done.append(pending.take(np.flatnonzero(classified)))
                pending = pending.take(np.flatnonzero(~classified))
        out = _Layer.concat(done)
        out.flag[:] = False
        return out

    def _step(self, layer):
        mid = 0.5 * (layer.ulo + layer.uhi)
        ks = self.m.locate(mid)
        a = np.empty_like(layer.ulo)
        b = np.empty_like(layer.uhi)
        sg = layer.sgn.copy()
        for k, br in enumerate(self.m.branches):
            sel = ks == k
            if np.any(sel):
                a[sel] = br.value(layer.ulo[sel])
                b[sel] = br.value(layer.uhi[sel])
                sg[sel] *= br.sign
        layer.ulo, layer.uhi = np.minimum(a, b), np.maximum(a, b)
        layer.sgn = sg
        layer.node = self.trie.extend(layer.node, ks)
        return layer


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def escape_partition(m: IntervalMap, partition: CriticalPartition, binding: BindingTable, J,
                     horizon=200, w_min=0.0, resolution_ulps=2.0**28, depth_rule="min"):
    """Escaped elements of J and the unresolved residual."""
    cfg = EngineConfig(horizon=horizon, w_min=w_min, resolution_ulps=resolution_ulps, depth_rule=depth_rule)
    eng = InducingEngine(m, partition, binding, cfg, stop_at_escape=True).run([tuple(J)])
    elements = sorted(eng.elements, key=lambda e: (e.lo, e.E))
    residual = sorted(eng.residual, key=lambda r: (r.lo, r.time))
    return elements, residual


def image_resolution(m: IntervalMap, branches):
    """Min over j < T of |f^j(omega)| in ulps of its position, per branch.

    Pullbacks round every intermediate image to the float grid at its
    position, so a branch is only as precise as its narrowest image.
    """
    if not branches:
        return np.zeros(0)
    lo = np.array([b.lo for b in branches])
    hi = np.array([b.hi for b in branches])
    Ts = np.array([b.T for b in branches])
    width = max(int(Ts.max()), 1)
    paths = np.full((len(branches), width), -1, dtype=np.int64)
    for i, b in enumerate(branches):
        paths[i, :b.T] = b.path[:b.T]
    out = np.full(len(branches), np.inf)
    for j in range(width):
        act = Ts > j
        scale = np.maximum(np.abs(lo[act]), np.abs(hi[act]))
        out[act] = np.minimum(out[act], (hi[act] - lo[act]) / np.spacing(scale))
        ks = paths[act, j]
        a, b = lo[act], hi[act]
        for k, br in enumerate(m.branches):
            s_ = ks == k
            if s_.any():
                u, v = br.value(a[s_]), br.value(b[s_])
                a[s_], b[s_] = np.minimum(u, v), np.maximum(u, v)
        lo[act], hi[act] = a, b
    return out


def initial_tiling(m: IntervalMap, delta):
    """Cover the domain by pieces of length in [delta/3, delta], cut at critical points."""
    a, b = m.domain
    edges = [a] + [float(c) for c in m.critical_locations if a < c < b] + [b]
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        k = max(1, math.ceil((hi - lo) / delta))
        xs = np.linspace(lo, hi, k + 1)
        xs[0], xs[-1] = lo, hi
        out += list(zip(xs[:-1], xs[1:]))
    return out


def build_induced_map(m: IntervalMap, partition: CriticalPartition, binding: BindingTable,
                      params: ReturnFinderParams, N_max=200, w_min=None, domain_mode="delta_star",
                      branch_cap=10**6, depth_rule="min", resolution_ulps=2.0**28,
                      piece_cap=200_000) -> InducedMap:
    if w_min is None:
        w_min = 1e-14 * m.length
    lo, hi = params.validate(m)
    cfg = EngineConfig(horizon=N_max, w_min=w_min, resolution_ulps=resolution_ulps,
                       branch_cap=branch_cap, depth_rule=depth_rule, piece_cap=piece_cap)
    eng = InducingEngine(m, partition, binding, cfg, params)
    if domain_mode == "delta_star":
        starts = [(lo, hi)]
        domain = (lo, hi)
    elif domain_mode == "full_interval":
        starts = initial_tiling(m, partition.delta)
        domain = tuple(m.domain)
    else:
        raise ValueError(f"unknown domain_mode {domain_mode!r}")
    eng.run(starts)
    branches = sorted(eng.branches, key=lambda br: (br.lo, br.T))
    res = image_resolution(m, branches)
    coarse = res < resolution_ulps
    residual = eng.residual + [ResidualPiece(b.lo, b.hi, b.E, "resolution", b.escape_times)
                               for b, c in zip(branches, coarse) if c]
    branches = [b for b, c in zip(branches, coarse) if not c]
    residual = sorted(residual, key=lambda r: (r.lo, r.time))
    xi = np.array(eng.xi_ratios)
    stats = {
        "branches": len(branches),
        "escapes_with_return": int(xi.size),
        "xi_est": float(xi.min()) if xi.size else None,
        "xi_configured": params.xi,
        "no_return_events": eng.no_return_events,
        "tree_size": eng.tree.size,
        "effective_horizon": eng.effective_horizon,
    }
    ind = InducedMap(domain, branches, residual, N_max,
                     params={"delta": partition.delta, "delta_star": params.delta_star,
                             "t_star": params.t_star, "sidedness": params.sidedness,
                             "rule": params.rule, "N_max": N_max, "w_min": w_min,
                             "depth_rule": depth_rule, "domain_mode": domain_mode,
                             "resolution_ulps": resolution_ulps, "branch_cap": branch_cap,
                             "piece_cap": piece_cap},
                     stats=stats, budget_exhausted=eng.budget_exhausted)
    ind.stats["covered_fraction"] = ind.covered_mass / ind.domain_length
    ind.stats["residual_by_reason"] = ind.residual_by_reason()
    return ind
