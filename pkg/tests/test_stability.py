import math

import numpy as np
import pytest

from statstab.diagnostics import geometric_induced_map
from statstab.errors import DomainAlignmentFailed
from statstab.inducing import InducedMap
from statstab.maps import make_builtin_family
from statstab.pipeline import InducingSetup
from statstab.stability import (DensityBudget, dyadic_offsets, entry_fraction, level_set_overlap,
                                median_l1_by_scale, spearman, stability_curve, tail_uniformity_scan,
                                uniqueness_check)

BUDGET = DensityBudget(method="ulam", cells=256)


def test_dyadic_offsets():
    off = dyadic_offsets(0.02, 3)
    assert off == [0.0, -0.02, 0.02, -0.01, 0.01, -0.005, 0.005]


def test_zero_offset_row():
    rows = stability_curve("lorenz_singular", 1.9, [0.0, 0.01], BUDGET)
    zero = rows[0]
    assert zero.offset == 0 and zero.d == 0.0 and zero.l1 == 0.0
    assert rows[1].d > 0


def test_stability_trend_small():
    rows = stability_curve("lorenz_singular", 1.9, dyadic_offsets(0.02, 4), BUDGET)
    med = median_l1_by_scale(rows)
    scales = sorted(med)
    assert all(med[a] <= med[b] * 1.1 for a, b in zip(scales, scales[1:]))
    ds = {abs(r.offset): r.d for r in rows if r.offset > 0}
    assert all(ds[a] < ds[b] for a, b in zip(scales, scales[1:]))
    assert spearman(rows) >= 0.8


def test_csv_row_layout():
    rows = stability_curve("lorenz_singular", 1.9, [0.0], BUDGET)
    assert rows[0].csv_row() == (1.9, 0.0, 0.0, "", "", "ulam")


def test_radius_zero_scan_is_constant():
    setup = InducingSetup(rule="largest", samples=600, N_max=120)
    scan = tail_uniformity_scan("lorenz_singular", 2.0, 0.0, 3, setup)
    assert len({r[1:] for r in scan.rows}) == 1
    assert scan.relative_spread == 0.0


def test_identical_maps_have_no_overlap_mass():
    ind = geometric_induced_map(15, 0.5)
    rows = level_set_overlap(ind, ind, 10)
    assert [r.sym_diff for r in rows] == [0.0] * 10


def test_overlap_detects_shifted_levels():
    f = geometric_induced_map(15, 0.5)
    g = geometric_induced_map(15, 0.6)
    rows = level_set_overlap(f, g, 5)
    assert rows[0].sym_diff == pytest.approx(0.1)


def test_overlap_needs_aligned_bases():
    f = geometric_induced_map(10, 0.5, (0.0, 1.0))
    g = geometric_induced_map(10, 0.5, (5.0, 7.0))
    with pytest.raises(DomainAlignmentFailed):
        level_set_overlap(f, g, 3)


def test_two_component_control_fails_uniqueness():
    m = make_builtin_family("two_component")
    rep = uniqueness_check(m, n_seeds=4, n_iter=10**5, bins=50)
    assert not rep.passed
    assert rep.max_l1 > 1.0


def test_entry_fraction_full_for_mixing_map(lorenz):
    assert entry_fraction(lorenz, (-math.exp(-3), math.exp(-3)), samples=2000, horizon=200) == 1.0
