import math
from collections import defaultdict

import mpmath
import numpy as np
import pytest

from statstab.errors import InvalidReturnParams, NoReturnWithinHorizon
from statstab.hypotheses import default_hypotheses
from statstab.inducing import (ReturnFinderParams, classify_free_step, escape_partition, expand_events, find_return,
                               image_resolution, preimage_tree)
from statstab.maps import make_builtin_family
from statstab.partition import binding_table, build_critical_partition
from statstab.pipeline import InducingSetup, induce_exact, induce_sampled, prepare
from statstab.tracer import RETURNED, branch_endpoints, sampled_branches

E3 = math.exp(-3)
E5 = math.exp(-5)


@pytest.fixture(scope="module")
def lz8(lorenz, lorenz_hyp):
    part = build_critical_partition(lorenz, lorenz_hyp, r_max=8)
    return lorenz, part, binding_table(lorenz, part, lorenz_hyp)


# ---------------------------------------------------------------------------
# free-step rules
# ---------------------------------------------------------------------------

def test_long_image_escapes(lz8):
    m, part, _ = lz8
    assert classify_free_step(m, part, 0.3, 0.3 + E3).kind == "escape"


def test_image_away_from_critical_set_does_nothing(lz8):
    m, part, _ = lz8
    assert classify_free_step(m, part, 0.3, 0.31).kind == "no_action"


def test_one_sided_image_touching_critical_point(lz8):
    m, part, _ = lz8
    d = classify_free_step(m, part, 0.0, 0.01)
    assert d.kind == "essential" and d.truncated and d.spec_index == 1


def test_inessential_return_depth(lz8):
    m, part, _ = lz8
    s = part.by_spec(1)
    i = s.index_of(6, 10)
    lo, hi = s.cell_abs(i)
    d = classify_free_step(m, part, lo + 0.1 * (hi - lo), hi + 0.5 * (hi - lo))
    assert d.kind == "inessential" and d.depth == 6


def test_essential_return_sandwich(lz8):
    m, part, _ = lz8
    s = part.by_spec(1)
    lo = s.cell_abs(s.index_of(6, 5))[0]
    hi = s.cell_abs(s.index_of(6, 9))[1]
    d = classify_free_step(m, part, lo, hi)
    assert d.kind == "essential"
    assert d.cells == tuple((6, j) for j in range(5, 10))
    # pull the image back one step so the construction meets it at time 1
    inv = m.branches[1].inverse
    J = (float(inv(np.array([lo]))[0]), float(inv(np.array([hi]))[0]))
    _, residual = escape_partition(m, part, lz8[2], J, horizon=1)
    assert len(residual) == 5
    for piece, j in zip(sorted(residual, key=lambda r: r.lo), range(5, 10)):
        a, b = s.cell_abs(s.index_of(6, j))
        img = m.branches[1].value(np.array([piece.lo, piece.hi]))
        assert img[0] == pytest.approx(a, abs=1e-12) and img[1] == pytest.approx(b, abs=1e-12)


# ---------------------------------------------------------------------------
# escape partition against a straight-line high-precision oracle
# ---------------------------------------------------------------------------

def _f(x):
    return 2 * x ** mpmath.mpf(0.75) - 1 if x > 0 else 1 - 2 * (-x) ** mpmath.mpf(0.75)


def _finv(k, y):
    p = mpmath.mpf(4) / 3
    return ((y + 1) / 2) ** p if k == 1 else -((1 - y) / 2) ** p


def _oracle_escape_masses(J, delta, bounds, horizon, ulps=2.0**28):
    """Mass of {E = n} by explicit interval iteration; binding periods are 0 on this map."""
    mpmath.mp.dps = 30
    b = [mpmath.mpf(float(v)) for v in bounds]
    masses, resid = defaultdict(float), 0.0

    def pull(z, path):
        for k in reversed(path):
            z = _finv(k, z)
        return z

    x0, x1 = mpmath.mpf(J[0]), mpmath.mpf(J[1])
    stack = [(x0, x1, (), 0, x0, x1)]
    while stack:
        x0, x1, path, n, u0, u1 = stack.pop()
        if u0 < 0 < u1:
            z = pull(mpmath.mpf(0), path)
            stack += [(x0, z, path, n, u0, mpmath.mpf(0)), (z, x1, path, n, mpmath.mpf(0), u1)]
            continue
        fx = (float(x0), float(x1))
        fu = (float(u0), float(u1))
        if (fx[1] - fx[0] < ulps * np.spacing(max(map(abs, fx)))
                or fu[1] - fu[0] < ulps * np.spacing(max(map(abs, fu)))):
            resid += fx[1] - fx[0]
            continue
        if u1 - u0 >= delta:
            masses[n] += float(x1 - x0)
            continue
        if n >= horizon:
            resid += float(x1 - x0)
            continue
        t1, t2 = (u0, u1) if u0 >= 0 else (-u1, -u0)
        if t1 < b[-2]:
            if t2 <= b[0]:
                # inside the undivided innermost annulus: truncated, never essential
                resid += float(x1 - x0)
                continue
            i1 = max(i for i in range(len(b)) if b[i] <= t1) if t1 >= b[0] else -1
            i2 = min(max(i for i in range(len(b)) if b[i] < t2), len(b) - 2)
            if not (i1 >= 0 and i2 - i1 + 1 <= 3):
                # cut at interior cell ends; partial end cells join their neighbours
                first = min(v for v in b if v >= t1)
                last = max(v for v in b if v <= t2)
                cuts = [v for v in b if first < v < last]
                if t1 < b[0]:
                    cuts = [b[0]] + cuts
                zs = sorted(c if u0 >= 0 else -c for c in cuts)
                pts = [u0] + zs + [u1]
                xs = [x0] + [pull(z, path) for z in zs] + [x1]
                for q in range(len(pts) - 1):
                    lo, hi = pts[q], pts[q + 1]
                    if abs((lo + hi) / 2) < b[0]:
                        resid += float(xs[q + 1] - xs[q])
                        continue
                    k = 1 if lo + hi > 0 else 0
                    stack.append((xs[q], xs[q + 1], path + (k,), n + 1, _f(lo), _f(hi)))
                continue
        k = 1 if u0 + u1 > 0 else 0
        stack.append((x0, x1, path + (k,), n + 1, _f(u0), _f(u1)))
    return dict(masses), resid


@pytest.mark.parametrize("J", [(0.30, 0.30 + E3 / 3), (0.02, 0.03), (0.6, 0.601)])
def test_escape_times_match_oracle(lz8, J):
    m, part, bind = lz8
    elements, residual = escape_partition(m, part, bind, J, horizon=60)
    got = defaultdict(float)
    for e in elements:
        got[e.E] += e.mass
    want, want_resid = _oracle_escape_masses(J, E3, part.by_spec(1).bounds, 60)
    assert set(got) == set(want)
    for n in want:
        assert got[n] == pytest.approx(want[n], abs=1e-12)
    assert math.fsum(r.mass for r in residual) == pytest.approx(want_resid, abs=1e-12)


def test_long_interval_escapes_at_time_zero(lz8):
    m, part, bind = lz8
    elements, residual = escape_partition(m, part, bind, (0.3, 0.3 + 1.5 * E3))
    assert len(elements) == 1 and elements[0].E == 0 and not residual


def test_escape_partition_conserves_mass(lz8):
    m, part, bind = lz8
    J = (0.1, 0.11)
    elements, residual = escape_partition(m, part, bind, J, horizon=60)
    total = math.fsum([e.mass for e in elements] + [r.mass for r in residual])
    assert total == pytest.approx(J[1] - J[0], abs=1e-15)
    for e in elements:
        assert e.image[1] - e.image[0] >= E3 * (1 - 1e-9)


# ---------------------------------------------------------------------------
# return to the base interval
# ---------------------------------------------------------------------------

def test_centred_omega_returns_at_once(lorenz):
    p = ReturnFinderParams(E5)
    (lo, hi), t0, path = find_return(lorenz, p, (-7 * E5, 7 * E5))
    assert t0 == 0 and (lo, hi) == (-E5, E5) and path == ()


def _bfs_centermost_depth(J, depth=12):
    """Depth of the preimage of c* = 0+ nearest the centre of J among those whose pullback sits in its middle third."""
    mpmath.mp.dps = 30
    d = mpmath.e ** -5
    L = J[1] - J[0]
    mid_lo, mid_hi = J[0] + L / 3, J[1] - L / 3
    centre = (J[0] + J[1]) / 2
    best = None
    level = [(mpmath.mpf(0), -d, d)]
    for t in range(0, depth + 1):
        for pt, lo, hi in level:
            if mid_lo <= lo and hi <= mid_hi:
                key = (abs(float(pt) - centre), t)
                if best is None or key < best[0]:
                    best = (key, t)
        nxt = []
        for pt, lo, hi in level:
            for k in (0, 1):
                if k == 1 and lo >= -1:
                    nxt.append((_finv(1, pt), _finv(1, lo), _finv(1, hi)))
                if k == 0 and hi <= 1:
                    nxt.append((_finv(0, pt), _finv(0, lo), _finv(0, hi)))
        level = nxt
    return best[1]


def test_return_depth_matches_bfs(lorenz):
    J = (0.2, 0.2 + E3)
    _, t0, _ = find_return(lorenz, ReturnFinderParams(E5), J)
    assert t0 == _bfs_centermost_depth(J)


def test_no_return_raises(lorenz):
    with pytest.raises(NoReturnWithinHorizon):
        find_return(lorenz, ReturnFinderParams(E5, t_star=0), (0.5, 0.5 + E3))


def test_bad_return_params(lorenz):
    with pytest.raises(InvalidReturnParams):
        find_return(lorenz, ReturnFinderParams(E5, rule="nearest"), (0.2, 0.3))
    with pytest.raises(InvalidReturnParams):
        find_return(make_builtin_family("contraction"), ReturnFinderParams(E5), (0.2, 0.3))


# ---------------------------------------------------------------------------
# induced map
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_induced():
    m = make_builtin_family("lorenz_singular", {"a": 1.9})
    setup = InducingSetup(rule="central", r_max=12, N_max=40, samples=1500)
    prep = prepare(m, setup)
    return m, prep, induce_exact(prep)


def test_exact_map_is_sound(small_induced):
    m, prep, ind = small_induced
    assert ind.branches
    assert ind.conservation_error() <= 1e-9
    lo, hi = ind.domain
    for b in ind.branches[:200]:
        y = np.array([b.lo, b.hi])
        for k in b.path[:b.T]:
            y = m.branches[int(k)].value(y)
        assert abs(y[0] - lo) <= 1e-8 * (hi - lo) and abs(y[1] - hi) <= 1e-8 * (hi - lo)
        assert b.T == b.E + b.t0
    assert np.all(image_resolution(m, ind.branches) >= 2.0**28)


def test_branches_are_disjoint(small_induced):
    _, _, ind = small_induced
    los = np.array([b.lo for b in ind.branches])
    his = np.array([b.hi for b in ind.branches])
    assert np.all(his[:-1] <= los[1:])


def test_point_follower_agrees_with_enumeration(small_induced):
    m, prep, ind = small_induced
    tr = induce_sampled(prep)
    los = np.array([b.lo for b in ind.branches])
    idx = np.searchsorted(los, tr.x, side="right") - 1
    inside = (idx >= 0) & (tr.x < np.array([b.hi for b in ind.branches])[np.maximum(idx, 0)])
    assert inside.sum() > 0
    Ts = np.array([b.T for b in ind.branches])[idx[inside]]
    assert np.array_equal(tr.T[inside], Ts)
    assert np.all(tr.outcome[inside] == RETURNED)
    lo, hi = branch_endpoints(m, tr)
    blo = los[idx[inside]]
    bhi = np.array([b.hi for b in ind.branches])[idx[inside]]
    assert np.array_equal(lo[inside], blo) and np.array_equal(hi[inside], bhi)


def test_sampled_branches_are_resolvable(small_induced):
    m, prep, _ = small_induced
    brs = sampled_branches(m, induce_sampled(prep))
    assert brs
    assert np.all(image_resolution(m, brs) >= 2.0**28)


def test_itinerary_expansion_covers_every_time(small_induced):
    _, prep, ind = small_induced
    b = max(ind.branches, key=lambda b: b.T)
    ev = expand_events(b.events, prep.binding.get, b.T)
    assert {e.time for e in ev} == set(range(b.T))
    assert any(e.kind == "return_to_star" and e.t0 == b.t0 for e in ev)


def test_binding_windows_in_itinerary():
    events = ((0, "escape", None, None), (2, "inessential_return", 5, 0), (6, "return_to_star", None, 1))
    ev = expand_events(events, lambda spec, r: 2, T=7)
    kinds = [(e.time, e.kind) for e in ev]
    assert (3, "bound") in kinds and (4, "bound") in kinds and (5, "free") in kinds
