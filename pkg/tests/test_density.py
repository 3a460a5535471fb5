import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from statstab.density import (DensityEstimate, arcsine_density, birkhoff_density, invariance_residual, l1_distance,
                              project, stationary_vector, tower_density, ulam_density, ulam_matrix, uniform_edges)
from statstab.diagnostics import geometric_induced_map
from statstab.errors import DomainMismatch, PowerIterationStalled
from statstab.maps import make_builtin_family


def _uniform(domain, bins, method="reference"):
    return DensityEstimate(uniform_edges(domain, bins), np.full(bins, 1.0 / bins), method)


def test_l1_hand_example():
    # densities 2 and 0 on the halves of [0, 1] against the uniform density
    p = _uniform((0.0, 1.0), 2)
    q = DensityEstimate(np.array([0.0, 0.5, 1.0]), np.array([1.0, 0.0]), "reference")
    assert l1_distance(p, q) == 1.0
    assert l1_distance(p, p) == 0.0


def test_l1_domain_mismatch():
    with pytest.raises(DomainMismatch):
        l1_distance(_uniform((0.0, 1.0), 4), _uniform((-1.0, 1.0), 4))


def test_estimate_validation():
    with pytest.raises(ValueError):
        DensityEstimate(np.array([0.0, 1.0]), np.array([1.0]), "ulam")
    with pytest.raises(ValueError):
        DensityEstimate(np.array([0.0, 0.5, 1.0]), np.array([0.6, 0.6]), "ulam")


@pytest.mark.parametrize("k", [2, 3, 5])
def test_ulam_on_affine_full_branch_map_is_uniform(k):
    m = make_builtin_family("affine_full", {"k": k})
    rho = ulam_density(m, 90)
    assert np.max(np.abs(rho.masses - 1 / 90)) <= 1e-12


def test_ulam_matrix_rows_stochastic(cheb):
    P = ulam_matrix(cheb, uniform_edges(cheb.domain, 128))
    assert np.allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0, atol=1e-13)


def test_ulam_vector_is_a_fixed_point(cheb):
    rho = ulam_density(cheb, 256)
    assert invariance_residual(cheb, rho) <= 1e-10


def test_uniform_is_not_invariant_for_chebyshev(cheb):
    assert invariance_residual(cheb, _uniform(cheb.domain, 200)) >= 0.1


def test_arcsine_reference_against_ulam(cheb):
    ref = arcsine_density(200)
    assert math.fsum(ref.masses) == pytest.approx(1.0, abs=1e-12)
    assert l1_distance(ref, ulam_density(cheb, 512), grid="coarser") <= 0.05


def test_coarser_grid_projection():
    ref = arcsine_density(512)
    coarse = project(ref, uniform_edges((-1, 1), 200))
    # only bins split by the fine grid pick up an error; it is well below the binning gap itself
    assert l1_distance(coarse, arcsine_density(200)) <= 2e-3
    assert l1_distance(ref, arcsine_density(200)) > 0.05


def test_birkhoff_is_deterministic_and_worker_independent(lorenz):
    a = birkhoff_density(lorenz, 2 * 10**5, bins=64, n_seeds=4, seed=3)
    b = birkhoff_density(lorenz, 2 * 10**5, bins=64, n_seeds=4, seed=3, workers=2)
    assert np.array_equal(a.masses, b.masses)
    c = birkhoff_density(lorenz, 2 * 10**5, bins=64, n_seeds=4, seed=4)
    assert not np.array_equal(a.masses, c.masses)


def test_birkhoff_close_to_ulam_small_budget(lorenz):
    a = birkhoff_density(lorenz, 10**6, bins=100, seed=1)
    assert l1_distance(a, ulam_density(lorenz, 500), grid="coarser") <= 0.05


def test_stationary_vector_stalls_on_periodic_matrix():
    import scipy.sparse as sp

    P = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(PowerIterationStalled):
        stationary_vector(P, p0=np.array([1.0, 0.0]), max_iter=20_000)


def test_tower_density_of_synthetic_map_on_identity_path():
    # branches of the geometric oracle carry path 0s on affine_full(2): x -> 2x
    m = make_builtin_family("affine_full", {"k": 2})
    ind = geometric_induced_map(10, 0.5)
    rho = tower_density(m, ind, bins=32, hard_threshold=0.5)
    assert math.fsum(rho.masses) == pytest.approx(1.0, abs=1e-12)
    assert rho.metadata["residual_fraction"] == pytest.approx(0.5**10)


def test_csv_and_json_round_trip(tmp_path, cheb):
    rho = ulam_density(cheb, 64)
    rho.write_csv(tmp_path / "density.csv")
    head = (tmp_path / "density.csv").read_text().splitlines()[0]
    assert head == "bin_left,bin_right,mass,method,n_iter/cells,seed"
    back = DensityEstimate.from_json(rho.to_json())
    assert np.array_equal(back.masses, rho.masses) and np.array_equal(back.bin_edges, rho.bin_edges)


@given(st.sampled_from(["chebyshev", "lorenz_singular", "quadratic"]), st.integers(64, 300))
def test_ulam_masses_sum_to_one(family, cells):
    rho = ulam_density(make_builtin_family(family), cells)
    assert abs(math.fsum(rho.masses) - 1.0) <= 1e-12
    assert np.all(rho.masses >= 0)


@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=30), st.lists(st.floats(0.0, 1.0), min_size=2, max_size=30))
def test_l1_is_a_metric_on_probability_vectors(u, v):
    if sum(u) <= 0 or sum(v) <= 0:
        return
    p = DensityEstimate(uniform_edges((0, 1), len(u)), _norm(u), "reference")
    q = DensityEstimate(uniform_edges((0, 1), len(v)), _norm(v), "reference")
    d = l1_distance(p, q)
    assert 0 <= d <= 2 + 1e-12
    assert d == pytest.approx(l1_distance(q, p), abs=1e-12)


def _norm(u):
    from statstab.density import _normalized

    return _normalized(np.asarray(u, float) / math.fsum(u))
