import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parisi_lab.errors import InvalidCDFError, InvalidMeasureError
from parisi_lab.measures import AtomicMeasure, discretize, distance


@st.composite
def measures(draw, max_atoms=4):
    k = draw(st.integers(1, max_atoms))
    atoms = draw(st.lists(st.floats(0, 1), min_size=k, max_size=k))
    w = draw(st.lists(st.floats(0.05, 1), min_size=k, max_size=k))
    return AtomicMeasure.create(atoms, w)


def test_create_merges_and_sorts():
    mu = AtomicMeasure.create([0.5, 0.2, 0.5 + 1e-12], [1, 1, 1])
    assert mu.atoms.tolist() == pytest.approx([0.2, 0.5])
    assert mu.weights.tolist() == pytest.approx([1 / 3, 2 / 3])


def test_validation():
    with pytest.raises(InvalidMeasureError):
        AtomicMeasure(np.array([0.3, 0.2]), np.array([0.5, 0.5]))
    with pytest.raises(InvalidMeasureError):
        AtomicMeasure.create([1.5], [1.0])


def test_cdf_right_continuous():
    mu = AtomicMeasure.create([0.2, 0.6], [0.4, 0.6])
    assert mu.cdf(0.2) == pytest.approx(0.4)
    assert mu.cdf(0.1999) == 0.0
    assert mu.cdf(0.6) == 1.0
    nodes, alphas = mu.partition()
    assert nodes.tolist() == [0.0, 0.2, 0.6, 1.0]
    assert alphas.tolist() == pytest.approx([0.0, 0.4, 1.0])


def test_distance_diracs():
    assert distance(AtomicMeasure.dirac(0.2), AtomicMeasure.dirac(0.7)) == pytest.approx(0.5)


@given(measures(), measures(), measures())
def test_distance_is_metric(a, b, c):
    assert distance(a, a) == 0
    assert distance(a, b) == pytest.approx(distance(b, a))
    assert distance(a, c) <= distance(a, b) + distance(b, c) + 1e-12


@given(measures(), measures(), st.floats(0, 1))
def test_mix_distance_linear(a, b, t):
    # cdf of the mixture is the convex combination, so d(a, mix) = t d(a, b)
    assert distance(a, a.mix(b, t)) == pytest.approx(t * distance(a, b), abs=1e-9)


@given(measures(), st.floats(0.005, 0.2))
@settings(max_examples=30, deadline=None)
def test_discretize_reproduces_atomic(mu, eps):
    nu = discretize(mu.cdf, eps)
    assert distance(mu, nu) < 1e-9


@pytest.mark.parametrize("eps", [0.1, 0.02, 0.005])
def test_discretize_continuous(eps):
    f = lambda s: float(s) ** 2
    nu = discretize(f, eps)
    # exact L1 between the step cdf and s^2
    s = np.linspace(0, 1, 200001)
    err = np.trapezoid(np.abs(nu.cdf(s) - s ** 2), s) if hasattr(np, "trapezoid") else \
        np.trapz(np.abs(nu.cdf(s) - s ** 2), s)
    assert err <= eps


def test_discretize_rejects_bad_cdf():
    with pytest.raises(InvalidCDFError):
        discretize(lambda s: 1 - s, 0.1)
    with pytest.raises(InvalidCDFError):
        discretize(lambda s: 0.5 * s, 0.1)
