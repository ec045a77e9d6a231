import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parisi_lab.errors import DegenerateDenominatorError, DomainError, ZeroMixtureError
from parisi_lab.mixtures import (CouplingSpec, MixtureSpec, check_convexity, check_dominance,
                                 check_monotone_ratio, eval_mixture, sk, theta_eval)

coeff_maps = st.dictionaries(st.integers(1, 6), st.floats(0.01, 2.0), min_size=1, max_size=4)


def test_sk_values():
    xi = sk(0.8)
    assert xi(1.0) == pytest.approx(0.32)
    assert xi(0.5, 1) == pytest.approx(0.32)
    assert xi(0.3, 2) == pytest.approx(0.64)


def test_domain_and_zero():
    with pytest.raises(DomainError):
        eval_mixture(sk(1.0), 1.5)
    with pytest.raises(ZeroMixtureError):
        MixtureSpec({2: 0.0})
    assert MixtureSpec({}, allow_zero=True).is_zero


def test_roundtrip_dict():
    xi = MixtureSpec({3: 0.2, 2: 0.5})
    assert MixtureSpec.from_dict(xi.to_dict()) == xi
    assert hash(MixtureSpec.from_dict(xi.to_dict())) == hash(xi)


@given(coeff_maps, st.floats(-1, 1))
def test_derivatives_match_finite_differences(coeffs, s):
    xi = MixtureSpec(coeffs)
    e = 1e-6
    lo, hi = max(s - e, -1.0), min(s + e, 1.0)
    fd = (xi(hi) - xi(lo)) / (hi - lo)
    assert xi(s, 1) == pytest.approx(fd, rel=1e-5, abs=1e-6)


@given(coeff_maps, st.floats(0, 1))
def test_theta_derivative(coeffs, s):
    # theta' = s xi''
    xi = MixtureSpec(coeffs)
    e = 1e-6
    lo, hi = max(s - e, 0.0), min(s + e, 1.0)
    fd = (theta_eval(xi, hi) - theta_eval(xi, lo)) / (hi - lo)
    assert fd == pytest.approx(0.5 * (lo + hi) * xi(0.5 * (lo + hi), 2), rel=1e-4, abs=1e-6)


def test_convexity():
    assert check_convexity(sk(2.0)).convex
    rep = check_convexity(MixtureSpec({3: 1.0, 2: 0.1}))
    assert not rep.convex and rep.witness == pytest.approx(-1.0)
    # xi''(-1) = 2 - 3 < 0
    assert not check_convexity(MixtureSpec({2: 1.0, 3: 0.5})).convex


@given(st.floats(0.0, 0.99))
def test_example1_ratio_is_linear(c):
    # xi = g2 s^2 + g3 s^3, c = 3 g3/g2: ratio xi''(s)/(xi''(s)+xi''(-s)) = (1+cs)/2
    xi = MixtureSpec({2: 1.0, 3: c / 3.0}, allow_zero=False)
    rep = check_monotone_ratio(xi, xi, reflect_den=True, grid_n=201)
    assert rep.monotone
    np.testing.assert_allclose(rep.ratio, (1 + c * rep.s_grid) / 2, rtol=1e-12)


def test_ratio_decreasing_and_degenerate():
    xi = MixtureSpec({2: 1.0})
    xi0 = MixtureSpec({2: 0.5, 4: 2.0})
    assert not check_monotone_ratio(xi, xi0, reflect_den=False).monotone
    with pytest.raises(DegenerateDenominatorError):
        check_monotone_ratio(MixtureSpec({3: 1.0}), MixtureSpec({3: 1.0}), reflect_den=True)


def test_dominance(ex2_coupling):
    rep = check_dominance(ex2_coupling)
    assert rep.strict and rep.weak
    same = CouplingSpec(sk(1.0), sk(1.0))
    rep = check_dominance(same)
    assert rep.weak and not rep.strict
    bad = CouplingSpec(sk(1.0), sk(1.5))
    rep = check_dominance(bad)
    assert not rep.weak and rep.witness is not None


def test_coupling_iota():
    c = CouplingSpec(sk(1.0), sk(1.0), 0.1, -0.3)
    assert c.iota == -1 and c.with_q(0.2).iota == 1
    with pytest.raises(DomainError):
        CouplingSpec(sk(1.0), sk(1.0), 0.0, 1.5)
