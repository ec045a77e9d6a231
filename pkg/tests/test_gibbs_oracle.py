import math

import numpy as np
import pytest
from scipy.special import logsumexp

from conftest import EX1, EX2_CROSS
from parisi_lab.errors import DomainError, HypothesisRefusal, NotPSDError
from parisi_lab.gibbs_oracle import (_coupled_factors, _single_factor, binomial_overlap,
                                     configurations, constrained_coupled_free_energy,
                                     constrained_log_sums, constrained_profile,
                                     coupled_overlap_distribution, factor_psd,
                                     free_energy_exact, guerra_gap, overlap_levels, overlap_matrix,
                                     pair_count, replica_overlap_distribution,
                                     sample_coupled, sample_single)
from parisi_lab.measures import AtomicMeasure
from parisi_lab.mixtures import CouplingSpec, MixtureSpec, sk


def test_configurations():
    S = configurations(3)
    assert S.shape == (8, 3)
    assert len({tuple(r) for r in S}) == 8
    np.testing.assert_allclose(np.diag(overlap_matrix(3)), 1.0)
    np.testing.assert_allclose(overlap_levels(4), [-1, -0.5, 0, 0.5, 1])


def test_factor_reproduces_covariance():
    xi = MixtureSpec({2: 0.5, 3: 0.3})
    N = 5
    F = _single_factor(xi, N)
    np.testing.assert_allclose(F @ F.T, N * xi(overlap_matrix(N)), atol=1e-8)
    Fp, Fm = _coupled_factors(EX1, EX2_CROSS, N)
    R = overlap_matrix(N)
    np.testing.assert_allclose(Fp @ Fp.T, N * (EX1(R) + EX2_CROSS(R)), atol=1e-8)
    np.testing.assert_allclose(Fm @ Fm.T, N * (EX1(R) - EX2_CROSS(R)), atol=1e-8)


def test_empirical_covariance():
    N, xi = 3, sk(1.0)
    H = np.array([sample_single(xi, 0.0, N, 11, r).H for r in range(6000)])
    C = np.cov(H.T)
    np.testing.assert_allclose(C, N * xi(overlap_matrix(N)), atol=0.2)


def test_coupled_cross_covariance():
    N = 3
    c = CouplingSpec(EX1, EX2_CROSS, 0.0)
    H = np.array([sample_coupled(c, N, 5, r).H for r in range(6000)])
    C12 = (H[:, 0, :] - H[:, 0, :].mean(0)).T @ (H[:, 1, :] - H[:, 1, :].mean(0)) / H.shape[0]
    np.testing.assert_allclose(C12, N * EX2_CROSS(overlap_matrix(N)), atol=0.15)


def test_factor_psd_rejects():
    with pytest.raises(NotPSDError) as exc:
        factor_psd(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert exc.value.witness == pytest.approx(-1.0)
    F = factor_psd(np.ones((3, 3)))
    np.testing.assert_allclose(F @ F.T, np.ones((3, 3)), atol=1e-8)


def test_coupled_gram_refusal():
    with pytest.raises(HypothesisRefusal) as exc:
        _coupled_factors(sk(0.5), sk(1.0), 3)
    assert exc.value.hypothesis == "gram_psd"


def test_replica_streams_stable():
    a = sample_single(sk(1.0), 0.1, 4, 9, 3).H
    b = sample_single(sk(1.0), 0.1, 4, 9, 3).H
    c = sample_single(sk(1.0), 0.1, 4, 9, 4).H
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def _explicit_sk_free_energy(beta, h, N, n, seed):
    # direct two-body couplings: beta/sqrt(2N) sum_{ij} g_ij s_i s_j has covariance N beta^2 R^2 / 2
    rng = np.random.default_rng(seed)
    S = configurations(N)
    out = []
    for _ in range(n):
        g = rng.standard_normal((N, N))
        H = beta / math.sqrt(2 * N) * np.einsum("ki,ij,kj->k", S, g, S) + h * S.sum(1)
        out.append(logsumexp(H) / N)
    out = np.array(out)
    return out.mean(), out.std(ddof=1) / math.sqrt(n)


def test_free_energy_against_explicit_couplings():
    beta, h, N = 1.1, 0.2, 6
    est = free_energy_exact(sk(beta), h, N, n_disorder=400, seed=2)
    m, se = _explicit_sk_free_energy(beta, h, N, 400, 99)
    assert abs(est.mean - m) <= 4 * math.hypot(est.std_err, se)


def test_single_spin():
    h = 0.3
    est = free_energy_exact(sk(1.0), h, 1, n_disorder=400, seed=1)
    # with N = 1 the Hamiltonian is a common shift g/sqrt2 plus the field
    assert abs(est.mean - math.log(2 * math.cosh(h))) <= 3 * est.std_err


def test_zero_temperature_free_energy():
    est = free_energy_exact(MixtureSpec({2: 1e-12}), 0.4, 5, n_disorder=3)
    assert est.mean == pytest.approx(math.log(2 * math.cosh(0.4)), abs=1e-5)


def test_guerra_gap():
    rep = guerra_gap(AtomicMeasure.dirac(0.0), sk(0.8), 0.0, 8, n_disorder=100, seed=0)
    assert rep.ok and rep.gap > -3 * rep.std_err


def test_pair_count_and_levels():
    assert pair_count(2, 0.0) == 8
    N = 5
    assert sum(pair_count(N, q) for q in overlap_levels(N)) == 4 ** N
    with pytest.raises(DomainError):
        pair_count(4, 0.1)


def test_constrained_sums_add_up():
    s = sample_coupled(CouplingSpec(EX1, EX2_CROSS, 0.3), 5, 0, 0)
    parts = constrained_log_sums(s)
    total = logsumexp(s.H[0]) + logsumexp(s.H[1])
    assert logsumexp(parts) == pytest.approx(total, abs=1e-10)


def test_constrained_estimate_matches_profile():
    c = CouplingSpec(EX1, EX2_CROSS, 0.3)
    est = constrained_coupled_free_energy(c, 4, 0.5, n_disorder=10, seed=3)
    qs, means, _ = constrained_profile(c, 4, n_disorder=10, seed=3)
    assert est.mean == pytest.approx(means[3], abs=1e-12)
    assert est.pair_count == pair_count(4, 0.5)


def test_histogram_symmetry_and_binomial():
    hist = coupled_overlap_distribution(CouplingSpec(sk(1.0), sk(1.0), 0.0), 6, n_disorder=20)
    np.testing.assert_allclose(hist.probability, hist.probability[::-1], atol=1e-12)
    assert hist.probability.sum() == pytest.approx(1.0)
    flat = coupled_overlap_distribution(CouplingSpec(MixtureSpec({2: 1e-14}), MixtureSpec({2: 1e-14}),
                                                     0.0), 6, n_disorder=2)
    np.testing.assert_allclose(flat.probability, binomial_overlap(6), atol=1e-10)


def test_chaos_reduces_cross_overlap_spread():
    N, n = 8, 40
    xi = MixtureSpec({2: 2.0, 3: 0.4})
    same = coupled_overlap_distribution(CouplingSpec(xi, xi, 0.0), N, n, seed=1)
    part = coupled_overlap_distribution(CouplingSpec(xi, MixtureSpec({2: 0.4}), 0.0), N, n, seed=1)
    assert part.variance() < same.variance()


def test_overlap_variance_decreases_with_N():
    # partially shared disorder: the cross overlap concentrates as N grows
    c = CouplingSpec(EX1, EX2_CROSS, 0.0)
    v = [coupled_overlap_distribution(c, N, 30, seed=0).variance() for N in (4, 6, 8)]
    assert v[0] > v[1] > v[2]


def test_size_caps():
    with pytest.raises(DomainError):
        sample_single(sk(1.0), 0.0, 15, 0, 0)
    with pytest.raises(DomainError):
        sample_coupled(CouplingSpec(sk(1.0), sk(1.0)), 13, 0, 0)


def test_example_two_variance_below_identical():
    # same disorder streams for both couplings, so the per-replica difference is paired
    N, n = 10, 120
    q2 = overlap_levels(N) ** 2
    same = CouplingSpec(EX1, EX1, 0.0)
    part = CouplingSpec(EX1, EX2_CROSS, 0.0)
    d = np.array([replica_overlap_distribution(sample_coupled(same, N, 0, r)) @ q2
                  - replica_overlap_distribution(sample_coupled(part, N, 0, r)) @ q2
                  for r in range(n)])
    assert d.mean() > 3 * d.std(ddof=1) / math.sqrt(n)
