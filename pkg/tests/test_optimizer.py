import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parisi_lab.measures import AtomicMeasure
from parisi_lab.mixtures import MixtureSpec, sk
from parisi_lab.optimizer import decode, encode, find_parisi_measure, minimize_krsb


@given(st.integers(1, 3), st.data())
@settings(max_examples=40, deadline=None)
def test_decode_is_valid_measure(k, data):
    theta = np.array(data.draw(st.lists(st.floats(-10, 10), min_size=2 * k + 1,
                                        max_size=2 * k + 1)))
    mu = decode(theta, k)
    assert mu.k <= k
    assert np.all((mu.atoms >= 0) & (mu.atoms <= 1))
    assert mu.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_encode_roundtrip():
    mu = AtomicMeasure.create([0.1, 0.45, 0.8], [0.2, 0.5, 0.3])
    back = decode(encode(mu, 2), 2)
    np.testing.assert_allclose(back.atoms, mu.atoms, atol=1e-12)
    np.testing.assert_allclose(back.weights, mu.weights, atol=1e-12)


def test_encode_pads_atoms():
    mu = AtomicMeasure.dirac(0.4)
    back = decode(encode(mu, 2), 2)
    np.testing.assert_allclose(back.atoms, [0.4], atol=1e-9)


def test_sk_high_temperature_is_rs():
    est = find_parisi_measure(sk(0.8), 0.0, seed=0)
    assert est.status == "converged"
    assert est.measure.k == 0 and est.measure.atoms[0] == pytest.approx(0.0, abs=1e-6)
    assert est.value == pytest.approx(math.log(2) + 0.16, abs=1e-6)


def test_rsb_improves_low_temperature():
    xi = sk(1.5)
    rs = minimize_krsb(xi, 0.0, k=0)
    one = minimize_krsb(xi, 0.0, k=1, restarts=3, seed=1)
    assert one.value < rs.value - 1e-4
    assert rs.value < math.log(2) + 1.5 ** 2 / 4 - 1e-2


def test_deterministic():
    xi = MixtureSpec({2: 0.9, 4: 0.3})
    a = minimize_krsb(xi, 0.2, k=1, restarts=2, seed=5)
    b = minimize_krsb(xi, 0.2, k=1, restarts=2, seed=5)
    assert a.value == b.value
    np.testing.assert_array_equal(a.measure.atoms, b.measure.atoms)
