import math

import numpy as np
import pytest

from parisi_lab.errors import ConfigurationError, ZeroMixtureError
from parisi_lab.flows import (at_line_check, check_parisi_criterion, check_support_conditions,
                              directional_derivative, rs_fixed_point_map, second_moment_curve)
from parisi_lab.measures import AtomicMeasure
from parisi_lab.mixtures import MixtureSpec, sk
from parisi_lab.parisi1d import GridParams, parisi_value, solve_phi


def test_at_line_sk():
    assert at_line_check(sk(0.9)).rs_consistent
    rep = at_line_check(sk(1.5))
    assert not rep.rs_consistent
    assert rep.lhs_ineq == pytest.approx(2.25, abs=1e-9)


def test_at_root_is_fixed_point():
    xi = MixtureSpec({2: 0.5, 3: 0.2})
    rep = at_line_check(xi, 0.5)
    assert rep.q_root > 0
    assert float(rs_fixed_point_map(xi, 0.5, rep.q_root)) == pytest.approx(rep.q_root, abs=1e-12)


def test_at_line_order_guard():
    with pytest.raises(ConfigurationError):
        at_line_check(sk(1.0), 0.0, quad_order=20)


def test_curve_start_and_rs_support():
    xi, h = sk(0.7), 0.4
    q = at_line_check(xi, h).q_root
    mu = AtomicMeasure.dirac(q)
    phi = solve_phi(mu, xi, h, GridParams(pad=xi(1.0, 1)))
    curve = second_moment_curve(phi, n_r=51, extra_r=[q])
    # the control process starts at h
    assert curve.eu2[0] == pytest.approx(float(phi.evaluate(0.0, [h])[1][0]) ** 2, abs=1e-10)
    rep = check_support_conditions(mu, xi, h, q, curve=curve)
    assert abs(rep.eq_gap) < 1e-6
    assert rep.ineq_slack >= 0
    assert np.all(np.diff(curve.eu2) >= -1e-10)


def test_monte_carlo_agrees():
    xi, h = sk(1.2), 0.3
    phi = solve_phi(AtomicMeasure.create([0.2, 0.6], [0.4, 0.6]), xi, h, GridParams(pad=xi(1.0, 1)))
    det = second_moment_curve(phi, n_r=11)
    mc = second_moment_curve(phi, mode="monte-carlo", n_r=11, n_paths=20_000, n_steps=400, seed=3)
    err = np.abs(det.eu2 - mc.eu2)
    assert np.all(err <= 4 * mc.mc_std_err + 5e-3)


def test_monte_carlo_seeded():
    phi = solve_phi(AtomicMeasure.dirac(0.3), sk(1.0), 0.2)
    a = second_moment_curve(phi, mode="mc", n_r=11, n_paths=2000, n_steps=50, seed=7)
    b = second_moment_curve(phi, mode="mc", n_r=11, n_paths=2000, n_steps=50, seed=7)
    np.testing.assert_array_equal(a.eu2, b.eu2)


def test_directional_derivative_matches_fd():
    xi, h = MixtureSpec({2: 0.8, 3: 0.2}), 0.2
    mu0 = AtomicMeasure.create([0.1, 0.5], [0.5, 0.5])
    mu = AtomicMeasure.create([0.3, 0.8], [0.7, 0.3])
    g = GridParams(pad=xi(1.0, 1))
    curve = second_moment_curve(solve_phi(mu0, xi, h, g), n_r=401, extra_r=list(mu.atoms))
    d = directional_derivative(mu0, mu, xi, h, curve=curve)
    t = 1e-4
    fd = (parisi_value(mu0.mix(mu, t), xi, h, g) - parisi_value(mu0, xi, h, g)) / t
    assert d == pytest.approx(fd, abs=2e-4)


def test_criterion_sk():
    assert check_parisi_criterion(AtomicMeasure.dirac(0.0), sk(0.8)).passed
    rep = check_parisi_criterion(AtomicMeasure.dirac(0.0), sk(1.5))
    assert not rep.passed and rep.min_value < -1e-3


def test_criterion_guards():
    with pytest.raises(ZeroMixtureError):
        check_parisi_criterion(AtomicMeasure.dirac(0.0), MixtureSpec({}, allow_zero=True), 0.0)
    with pytest.raises(ConfigurationError):
        check_parisi_criterion(AtomicMeasure.dirac(0.0), sk(1.0), q_grid_n=5)


def test_at_line_with_field_rs():
    rep = at_line_check(sk(0.5), 0.3)
    assert rep.rs_consistent and 0 < rep.q_root < 1
