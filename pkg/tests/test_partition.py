import math
from dataclasses import replace

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from statstab.errors import DeltaNotAdmissible
from statstab.partition import (EXTREME, annulus_bounds, binding_period, binding_table, build_critical_partition,
                                r_delta)

E3 = math.exp(-3)


@pytest.mark.parametrize("k", [1, 3, 10, 25])
def test_r_delta(k):
    assert r_delta(math.exp(-k)) == k


def test_r_delta_rejects_non_integer():
    with pytest.raises(DeltaNotAdmissible):
        r_delta(0.05)


def test_annulus_four_has_sixteen_equal_cells(cheb, cheb_hyp):
    part = build_critical_partition(cheb, cheb_hyp)
    right = next(s for s in part if s.side > 0)
    idx = np.flatnonzero(right.r == 4)
    assert idx.size == 16
    assert list(right.j[idx]) == list(range(1, 17))
    lo, hi = right.annulus(4)
    assert lo == pytest.approx(math.exp(-4)) and hi == pytest.approx(E3)
    widths = np.diff(right.bounds[idx[0]:idx[-1] + 2])
    assert np.allclose(widths, (E3 - math.exp(-4)) / 16, rtol=1e-12, atol=0)


def test_extreme_annulus_is_undivided(cheb, cheb_hyp):
    part = build_critical_partition(cheb, cheb_hyp)
    for s in part:
        idx = np.flatnonzero(s.r == 3)
        assert idx.size == 1 and s.j[idx[0]] == EXTREME
        assert s.bounds[idx[0]] == pytest.approx(E3)
        assert s.bounds[idx[0] + 1] == pytest.approx(math.exp(-2))


def test_lorenz_binding_is_zero(lorenz, lorenz_hyp):
    part = build_critical_partition(lorenz, lorenz_hyp)
    table = binding_table(lorenz, part, lorenz_hyp)
    assert table.p and all(p == 0 for p in table.p.values())


def _oracle_p(side, r, delta, alpha, samples=64, k_max=60):
    """Direct high-precision iteration of hat points against the orbit of 0."""
    mpmath.mp.dps = 80
    f = lambda x: 1 - 2 * x * x
    # hat annulus: I_r plus the outermost cell of I_{r+1} and the innermost cell of I_{r-1};
    # next to r_delta that neighbour is the whole undivided annulus
    rd = round(-math.log(delta))
    inner = annulus_bounds(r + 1)[-2]
    outer = annulus_bounds(r - 1)[1] if r - 1 > rd else math.exp(-(r - 2))
    first = k_max + 1
    for t in np.linspace(inner, outer, samples):
        x = mpmath.mpf(float(side * t))
        c = mpmath.mpf(0)
        for j in range(k_max + 1):
            x, c = f(x), f(c)
            if abs(x - c) > delta * mpmath.e ** (-2 * alpha * j):
                first = min(first, j)
                break
    return max(first - 1, 0)


@pytest.mark.parametrize("alpha", [0.05, 0.01])
def test_chebyshev_binding_golden(cheb, cheb_hyp, alpha):
    hyp = replace(cheb_hyp, alpha=alpha)
    part = build_critical_partition(cheb, hyp)
    for s in part:
        res = binding_period(cheb, part, s.spec_index, 6, hyp)
        assert res.p == 4 and not res.truncated
        assert res.p == _oracle_p(s.side, 6, hyp.delta, alpha)


@pytest.mark.parametrize("r", [4, 8, 12])
def test_chebyshev_binding_matches_oracle(cheb, cheb_hyp, r):
    part = build_critical_partition(cheb, cheb_hyp)
    s = next(s for s in part if s.side > 0)
    assert binding_period(cheb, part, s.spec_index, r, cheb_hyp).p == _oracle_p(1, r, cheb_hyp.delta,
                                                                                 cheb_hyp.alpha)


def test_binding_table_monotone_in_depth(cheb, cheb_hyp):
    part = build_critical_partition(cheb, cheb_hyp)
    table = binding_table(cheb, part, cheb_hyp)
    for s in part:
        ps = [table.get(s.spec_index, r) for r in range(4, 30)]
        assert ps == sorted(ps)
        # the bound p <= 2 ell_hat r / Lambda holds with room on this map
        assert all(p <= 2 * cheb_hyp.ell_hat * r / cheb_hyp.Lambda for p, r in zip(ps, range(4, 30)))


def test_partition_csv_columns(tmp_path, cheb, cheb_hyp):
    part = build_critical_partition(cheb, cheb_hyp, r_max=6)
    path = part.write_csv(tmp_path / "partition.csv")
    head = path.read_text().splitlines()[0]
    assert head == "spec_index,r,j,left,right"


@given(st.integers(2, 8), st.integers(1, 5))
def test_cells_tile_each_annulus(rd, extra):
    r = rd + extra
    b = annulus_bounds(r)
    assert len(b) == r * r + 1
    assert b[0] == math.exp(-r) and b[-1] == math.exp(-r + 1)
    assert np.all(np.diff(b) > 0)


@given(st.sampled_from(["chebyshev", "lorenz_singular"]), st.integers(6, 30))
def test_cells_contiguous_and_cover_hat(family, r_max):
    from statstab.hypotheses import default_hypotheses
    from statstab.maps import make_builtin_family

    m = make_builtin_family(family)
    hyp = default_hypotheses(family)
    part = build_critical_partition(m, hyp, r_max=r_max)
    for s in part:
        assert np.all(np.diff(s.bounds) > 0)
        assert s.bounds[-1] == pytest.approx(math.exp(-part.r_delta + 1))
        counts = {r: int(np.sum(s.r == r)) for r in np.unique(s.r)}
        for r, n in counts.items():
            assert n == (1 if r == part.r_delta else r * r)
