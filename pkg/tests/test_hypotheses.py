import math
from dataclasses import replace

import numpy as np
import pytest

from statstab.errors import HypothesisConstantsInvalid
from statstab.hypotheses import HypothesisSet, check_H1, check_H2, check_H3, preimage_levels
from statstab.maps import make_builtin_family


def test_H2_chebyshev_ground_truth(cheb, cheb_hyp):
    rep = check_H2(cheb, cheb_hyp, 10_000)
    assert rep.verdict
    # c_1 = 1 and c_k = -1 afterwards, where |f'| = 4
    assert abs(rep.Lambda_est - math.log(4)) <= 1e-9
    D = rep.witnesses["critical_distance"]
    assert D.shape == (10_000,)
    assert np.all(D == 1.0)


def test_H2_vacuous_for_singular_only(lorenz, lorenz_hyp):
    rep = check_H2(lorenz, lorenz_hyp, 100)
    assert rep.verdict and rep.witnesses["vacuous"]


def test_H2_fails_when_critical_orbit_hits_critical_set():
    # 1 - x^2: 0 -> 1 -> 0
    m = make_builtin_family("quadratic", {"a": 1.0}, validate=False)
    hyp = HypothesisSet(lam=0.3, Lambda=0.1, kappa=0.05, alpha=0.01, delta=math.exp(-3), ell_hat=2.5, ell_lo=0.5)
    rep = check_H2(m, hyp, 50)
    assert not rep.verdict
    assert rep.witness_k == 2
    assert rep.witnesses["min_critical_distance"] == 0.0


def test_H1_lorenz_rate(lorenz, lorenz_hyp):
    rep = check_H1(lorenz, lorenz_hyp, 2000, 30, seed=1)
    assert rep.lambda_est >= math.log(1.5) - 0.01


def test_H1_chebyshev_positive(cheb, cheb_hyp):
    rep = check_H1(cheb, replace(cheb_hyp, delta=math.exp(-2)), 2000, 20, seed=2)
    assert rep.lambda_est > 0


def test_H1_contraction_fails():
    m = make_builtin_family("contraction")
    hyp = HypothesisSet(lam=0.3, Lambda=1.0, kappa=0.05, alpha=0.01, delta=math.exp(-3), ell_hat=2.5, ell_lo=0.5)
    rep = check_H1(m, hyp, 500, 20)
    assert not rep.verdict
    assert rep.lambda_est <= 0


def test_H3_depth_zero(lorenz):
    rep = check_H3(lorenz, 0, 0.5)
    assert rep.max_gap == 1.0  # c* = 0 on [-1, 1]


def test_H3_lorenz_depth_12(lorenz):
    levels = preimage_levels(lorenz, 0.0, 12)
    assert sum(len(l) for l in levels) <= 2**13 - 1
    rep = check_H3(lorenz, 12, 0.01)
    assert rep.max_gap < 0.01
    assert rep.verdict


def test_H3_fails_when_critical_point_is_a_preimage():
    m = make_builtin_family("quadratic", {"a": 1.0}, validate=False)
    rep = check_H3(m, 3, 1.0)
    assert not rep.verdict
    assert rep.min_critical_distance == 0.0


def test_report_json_fields(cheb, cheb_hyp):
    out = check_H2(cheb, cheb_hyp, 20).to_json()
    for key in ("verdict", "witness_k", "lambda_est", "Lambda_est"):
        assert key in out
    assert out["verdict"] == "pass"


def test_invalid_constants():
    with pytest.raises(HypothesisConstantsInvalid):
        HypothesisSet(lam=-1, Lambda=1, kappa=1, alpha=0.01, delta=0.05, ell_hat=2.5, ell_lo=0.5)
    with pytest.raises(HypothesisConstantsInvalid):
        HypothesisSet(lam=1, Lambda=1, kappa=1, alpha=0.01, delta=0.05, ell_hat=0.4, ell_lo=0.5)


def test_alpha_bound():
    h = HypothesisSet(lam=0.5, Lambda=1, kappa=1, alpha=0.01, delta=0.05, ell_hat=2.5, ell_lo=0.5)
    assert h.alpha_bound == pytest.approx(0.04)
    assert h.alpha_ok
    assert not replace(h, alpha=0.04).alpha_ok
