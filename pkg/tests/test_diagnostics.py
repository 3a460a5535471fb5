import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from statstab.diagnostics import (branch_orbit, derived_constants, distortion_diagnostic, endpoint_mismatch,
                                  expansion_diagnostic, fit_exponential, geometric_induced_map, tail_statistics)
from statstab.errors import InsufficientData, ThetaHatOutOfRange, ThetaNonpositive
from statstab.hypotheses import HypothesisSet
from statstab.inducing import InducedBranch, InducedMap
from statstab.maps import make_builtin_family


def _hyp(**kw):
    base = dict(lam=0.5, Lambda=1.0, kappa=0.05, alpha=0.01, delta=math.exp(-3), ell_hat=2.5, ell_lo=0.5)
    base.update(kw)
    return HypothesisSet(**base)


# ---------------------------------------------------------------------------
# tails
# ---------------------------------------------------------------------------

def test_synthetic_geometric_tail():
    ts = tail_statistics(geometric_induced_map(60, 0.5))
    assert abs(ts.gamma - math.log(2)) <= 0.05
    assert ts.r2 >= 0.999
    assert ts.counts[0] == 1.0 and ts.counts[3] == pytest.approx(0.125)


@given(st.floats(0.2, 0.9))
def test_synthetic_tail_recovers_any_ratio(ratio):
    ts = tail_statistics(geometric_induced_map(40, ratio), stratify=False)
    assert ts.gamma == pytest.approx(-math.log(ratio), rel=1e-4)


def test_tail_counts_are_nonincreasing():
    ts = tail_statistics(geometric_induced_map(30, 0.7))
    assert np.all(np.diff(ts.counts) <= 0)


def test_tail_needs_data():
    empty = InducedMap((0.0, 1.0), [], [], 10)
    with pytest.raises(InsufficientData):
        tail_statistics(empty)


def test_tail_strata_sum_to_tail():
    ts = tail_statistics(geometric_induced_map(20, 0.5))
    for n, row in ts.strata.items():
        assert math.fsum(row.values()) == pytest.approx(ts.counts[n], abs=1e-15)


def test_fit_exponential_exact():
    n = np.arange(10)
    C, g, r2 = fit_exponential(n, 3.0 * np.exp(-0.7 * n))
    assert C == pytest.approx(3.0) and g == pytest.approx(0.7) and r2 == pytest.approx(1.0)


def test_tail_csv(tmp_path):
    ts = tail_statistics(geometric_induced_map(30, 0.5))
    ts.write_csv(tmp_path / "tail.csv")
    assert (tmp_path / "tail.csv").read_text().splitlines()[0] == "n,mass_T_gt_n,stratum_s,stratum_mass"


# ---------------------------------------------------------------------------
# derived constants
# ---------------------------------------------------------------------------

def test_theta_c(cheb):
    dc = derived_constants(_hyp(alpha=0.01, Lambda=1.0), cheb)
    assert all(v == pytest.approx(0.9, abs=1e-15) for v in dc.theta_c.values())
    assert dc.theta == pytest.approx(0.9)


def test_sigma(cheb):
    dc = derived_constants(_hyp(lam=0.5, Lambda=2.0), cheb, theta_hat=0.3)
    assert dc.sigma == pytest.approx(1.349859, abs=1e-6)
    assert dc.sigma == math.exp(0.3)


def test_alpha_at_bound_rejected(cheb):
    # ell_c = ell_hat = 2 and Lambda = lam puts theta_c exactly at 0
    hyp = _hyp(lam=0.5, ell_hat=2.0, alpha=0.5 / (5 * 2.0))
    with pytest.raises(ThetaNonpositive):
        derived_constants(hyp, cheb, Lambda_est=hyp.lam)


def test_theta_hat_window(cheb):
    with pytest.raises(ThetaHatOutOfRange):
        derived_constants(_hyp(), cheb, theta_hat=10.0)


def test_singular_only_map_has_theta_one(lorenz):
    dc = derived_constants(_hyp(), lorenz)
    assert dc.theta_c == {} and dc.theta == 1.0


# ---------------------------------------------------------------------------
# expansion and distortion
# ---------------------------------------------------------------------------

def _affine_branch(T=1):
    return InducedBranch(0.0, 1.0 / 3.0 ** T, T, T, 0, np.zeros(T, np.int16), ())


def test_affine_expansion_is_slope():
    m = make_builtin_family("affine_full", {"k": 3})
    for T in (1, 2):
        rep = expansion_diagnostic(m, [_affine_branch(T)])
        assert rep.sigma_est == pytest.approx(3.0 ** T, rel=1e-12)
        assert rep.min_derivative == pytest.approx(3.0 ** T, rel=1e-12)


def test_affine_distortion_is_zero():
    m = make_builtin_family("affine_full", {"k": 3})
    rep = distortion_diagnostic(m, [_affine_branch(2)])
    assert rep.D_hat == 0.0


def test_two_step_chebyshev_derivative(cheb):
    # right branch twice near 0.9: (f^2)'(x) = f'(f(x)) f'(x) = 16 x (1 - 2x^2)
    x = np.linspace(0.1, 0.3, 7)
    path = np.array([1, 1])
    y, logd = branch_orbit(cheb, path, x)
    fx = 1 - 2 * x**2
    assert np.allclose(y, 1 - 2 * fx**2, rtol=0, atol=1e-15)
    assert np.allclose(np.exp(logd), np.abs(16 * x * (1 - 2 * x**2)), rtol=1e-9)


def test_distortion_ratio_matches_closed_form(cheb):
    x, y = 0.2, 0.25
    d = lambda t: 16 * t * (1 - 2 * t * t)
    _, lx = branch_orbit(cheb, [1, 1], np.array([x]))
    _, ly = branch_orbit(cheb, [1, 1], np.array([y]))
    assert math.exp(lx[0] - ly[0]) == pytest.approx(d(x) / d(y), rel=1e-9)


def test_distortion_doubling_stable(lorenz):
    from statstab.pipeline import InducingSetup, induce_sampled, prepare
    from statstab.tracer import sampled_branches

    setup = InducingSetup(rule="largest", samples=800, N_max=80)
    m = make_builtin_family("lorenz_singular")
    brs = sampled_branches(m, induce_sampled(prepare(m, setup)))
    d8 = distortion_diagnostic(m, brs, pair_samples=8).D_hat
    d16 = distortion_diagnostic(m, brs, pair_samples=16).D_hat
    assert math.isfinite(d8) and d16 <= 2 * d8 and d8 <= 2 * d16


def test_endpoint_mismatch_on_affine():
    m = make_builtin_family("affine_full", {"k": 3})
    b = InducedBranch(1 / 3, 2 / 3, 1, 1, 0, np.array([1], np.int16), ())
    assert endpoint_mismatch(m, [b], (0.0, 1.0)) <= 1e-15
