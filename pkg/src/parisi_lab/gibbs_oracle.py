"""Exact enumeration of small spin systems.

Gaussian Hamiltonians on ``{-1, 1}^N`` with covariance ``N xi(R(s, t))`` are
sampled from a factor of the ``2^N x 2^N`` Gram matrix, so every expectation
below is exact up to disorder averaging.  For two coupled systems the cross
covariance is ``N xi0(R)``; the pair ``(X1 +- X2)/sqrt 2`` then has
independent blocks with covariances ``N (xi +- xi0)(R)``.

Disorder replica ``r`` uses a Philox generator keyed by ``seed`` with counter
``r``, so replica streams do not depend on how many replicas are drawn.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import DomainError, HypothesisRefusal, NotPSDError
from .measures import AtomicMeasure
from .mixtures import CouplingSpec, MixtureSpec
from .parisi1d import GridParams, parisi_functional

N_MAX_SINGLE = 14
N_MAX_COUPLED = 12
JITTER = 1e-10


@dataclass(frozen=True)
class Estimate:
    mean: float
    std_err: float
    n: int
    values: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std_err": self.std_err, "n": self.n}


@lru_cache(maxsize=16)
def configurations(N: int) -> np.ndarray:
    """All ``2^N`` spin configurations as rows of a ``(2^N, N)`` array."""
    idx = np.arange(2 ** N)[:, None]
    bits = (idx >> np.arange(N)[None, :]) & 1
    out = (1 - 2 * bits).astype(float)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=16)
def overlap_matrix(N: int) -> np.ndarray:
    """``R(s, t)`` for all pairs."""
    S = configurations(N)
    R = S @ S.T / N
    R.setflags(write=False)
    return R


def overlap_levels(N: int) -> np.ndarray:
    """The overlap values ``S_N = {-1, -1 + 2/N, ..., 1}``."""
    return -1.0 + 2.0 * np.arange(N + 1) / N


def _overlap_index(N: int) -> np.ndarray:
    return np.rint((overlap_matrix(N) + 1.0) * N / 2).astype(np.int64)


def _rng(seed: int, replica: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) % 2 ** 64, counter=int(replica)))


def factor_psd(M: np.ndarray) -> np.ndarray:
    """A matrix ``F`` with ``F F^T = M`` (up to a ``1e-10 N`` jitter).

    Cholesky is tried as is, then with the diagonal jitter; singular but
    numerically PSD matrices fall back to an eigendecomposition.

    Raises
    ------
    NotPSDError
        If ``M`` has an eigenvalue below ``-1e-9 * max|eig|``; the witness is
        the smallest eigenvalue.
    """
    if not np.any(M):
        return np.zeros_like(M)
    n = M.shape[0]
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        pass
    scale = max(float(np.max(np.abs(np.diag(M)))), 1.0)
    try:
        return np.linalg.cholesky(M + JITTER * scale * np.eye(n))
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(M)
    top = float(np.max(np.abs(vals)))
    if vals[0] < -1e-9 * top:
        raise NotPSDError(f"Gram matrix has eigenvalue {vals[0]:.3g}", witness=float(vals[0]))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@lru_cache(maxsize=8)
def _single_factor(mixture: MixtureSpec, N: int) -> np.ndarray:
    R = overlap_matrix(N)
    return factor_psd(N * np.asarray(mixture(R), dtype=float))


@lru_cache(maxsize=8)
def _coupled_factors(xi: MixtureSpec, xi0: MixtureSpec, N: int):
    R = overlap_matrix(N)
    K = N * np.asarray(xi(R), dtype=float)
    K0 = N * np.asarray(xi0(R), dtype=float) if not xi0.is_zero else np.zeros_like(K)
    out = []
    for M in (K + K0, K - K0):
        try:
            out.append(factor_psd(M))
        except NotPSDError as exc:
            raise HypothesisRefusal("gram_psd", "coupled Gram matrix is not positive "
                                    "semidefinite", {"min_eigenvalue": exc.witness}) from exc
    return tuple(out)


@dataclass(frozen=True, eq=False)
class DisorderSample:
    """One disorder replica: Hamiltonian values (field included) per configuration.

    ``H`` has shape ``(2^N,)`` in single mode and ``(2, 2^N)`` in coupled mode.
    """

    N: int
    mode: str
    seed: int
    replica: int
    H: np.ndarray


def _check_N(N, cap):
    if int(N) != N or N < 1:
        raise DomainError("N must be a positive integer")
    if N > cap:
        raise DomainError(f"N={N} exceeds the enumeration cap {cap}")


def sample_single(mixture: MixtureSpec, h: float, N: int, seed: int, replica: int) -> DisorderSample:
    _check_N(N, N_MAX_SINGLE)
    F = _single_factor(mixture, N)
    g = _rng(seed, replica).standard_normal(F.shape[1])
    field = h * configurations(N).sum(axis=1)
    return DisorderSample(N, "single", seed, replica, F @ g + field)


def sample_coupled(coupling: CouplingSpec, N: int, seed: int, replica: int) -> DisorderSample:
    _check_N(N, N_MAX_COUPLED)
    Fp, Fm = _coupled_factors(coupling.xi, coupling.xi0, N)
    rng = _rng(seed, replica)
    yp = Fp @ rng.standard_normal(Fp.shape[1])
    ym = Fm @ rng.standard_normal(Fm.shape[1])
    field = coupling.h * configurations(N).sum(axis=1)
    H = np.stack([(yp + ym) / math.sqrt(2.0) + field, (yp - ym) / math.sqrt(2.0) + field])
    return DisorderSample(N, "coupled", seed, replica, H)


def _estimate(vals) -> Estimate:
    vals = np.asarray(vals, dtype=float)
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else float("nan")
    return Estimate(float(vals.mean()), se, int(vals.size), vals)


def free_energy_exact(mixture: MixtureSpec, h: float, N: int, n_disorder: int = 100,
                      seed: int = 0) -> Estimate:
    """Mean over replicas of ``(1/N) log sum_s exp H_N(s)``."""
    if n_disorder < 2:
        raise DomainError("n_disorder must be at least 2")
    vals = [float(logsumexp(sample_single(mixture, h, N, seed, r).H)) / N
            for r in range(n_disorder)]
    return _estimate(vals)


@dataclass(frozen=True)
class GuerraReport:
    gap: float
    std_err: float
    ok: bool
    parisi_value: float
    free_energy: float

    def to_dict(self) -> dict:
        return {"gap": self.gap, "std_err": self.std_err, "ok": self.ok,
                "parisi_value": self.parisi_value, "free_energy": self.free_energy}


def guerra_gap(measure: AtomicMeasure, mixture: MixtureSpec, h: float, N: int,
               n_disorder: int = 100, seed: int = 0,
               grid: GridParams | None = None) -> GuerraReport:
    """``P(mu) - E F_N``; ``ok`` when the gap is above ``-3`` standard errors."""
    fe = free_energy_exact(mixture, h, N, n_disorder, seed)
    P = parisi_functional(measure, mixture, h, grid)
    gap = P - fe.mean
    return GuerraReport(float(gap), fe.std_err, bool(gap >= -3 * fe.std_err), float(P), fe.mean)


@dataclass(frozen=True, eq=False)
class OverlapHistogram:
    q: np.ndarray
    probability: np.ndarray
    std_err: np.ndarray
    n: int

    def mean(self) -> float:
        return float(np.sum(self.q * self.probability))

    def variance(self) -> float:
        m = self.mean()
        return float(np.sum((self.q - m) ** 2 * self.probability))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["q", "probability", "std_err"])
            for a, b, c in zip(self.q, self.probability, self.std_err):
                wr.writerow([repr(float(a)), repr(float(b)), repr(float(c))])


def _gibbs(H):
    p = np.exp(H - H.max())
    return p / p.sum()


def replica_overlap_distribution(sample: DisorderSample) -> np.ndarray:
    """Distribution of ``R(s1, s2)`` under the product Gibbs measure of one replica."""
    N = sample.N
    idx = _overlap_index(N)
    g1, g2 = _gibbs(sample.H[0]), _gibbs(sample.H[1])
    return np.bincount(idx.ravel(), weights=np.outer(g1, g2).ravel(), minlength=N + 1)


def coupled_overlap_distribution(coupling: CouplingSpec, N: int, n_disorder: int = 50,
                                 seed: int = 0) -> OverlapHistogram:
    """Disorder-averaged distribution of the cross overlap on ``S_N``."""
    if n_disorder < 2:
        raise DomainError("n_disorder must be at least 2")
    hists = np.array([replica_overlap_distribution(sample_coupled(coupling, N, seed, r))
                      for r in range(n_disorder)])
    se = hists.std(axis=0, ddof=1) / math.sqrt(n_disorder)
    return OverlapHistogram(overlap_levels(N), hists.mean(axis=0), se, n_disorder)


def binomial_overlap(N: int) -> np.ndarray:
    """Overlap law of two independent uniform configurations: ``C(N, k) 2^-N``."""
    k = np.arange(N + 1)
    return np.exp(gammaln(N + 1) - gammaln(k + 1) - gammaln(N - k + 1) - N * math.log(2.0))


def constrained_log_sums(sample: DisorderSample) -> np.ndarray:
    """``log sum_{R(s1,s2) = q} exp(H1(s1) + H2(s2))`` for every ``q`` in ``S_N``."""
    N = sample.N
    idx = _overlap_index(N)
    tot = sample.H[0][:, None] + sample.H[1][None, :]
    out = np.empty(N + 1)
    for k in range(N + 1):
        out[k] = logsumexp(tot[idx == k])
    return out


def _level_index(N: int, q: float) -> int:
    k = (q + 1.0) * N / 2.0
    kr = int(round(k))
    if abs(k - kr) > 1e-9 or not 0 <= kr <= N:
        raise DomainError(f"q={q} is not in S_{N}")
    return kr


def pair_count(N: int, q: float) -> int:
    """Number of pairs with overlap exactly ``q``: ``2^N C(N, k)``."""
    k = _level_index(N, q)
    return int(2 ** N * math.comb(N, k))


@dataclass(frozen=True)
class ConstrainedEstimate:
    mean: float
    std_err: float
    pair_count: int
    n: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std_err": self.std_err, "pair_count": self.pair_count,
                "n": self.n}


def constrained_coupled_free_energy(coupling: CouplingSpec, N: int, q: float,
                                    n_disorder: int = 50, seed: int = 0) -> ConstrainedEstimate:
    """``(1/N) E log sum_{R = q} exp(H1 + H2)`` for ``q`` in ``S_N``."""
    k = _level_index(N, q)
    if n_disorder < 2:
        raise DomainError("n_disorder must be at least 2")
    vals = [constrained_log_sums(sample_coupled(coupling, N, seed, r))[k] / N
            for r in range(n_disorder)]
    est = _estimate(vals)
    return ConstrainedEstimate(est.mean, est.std_err, pair_count(N, q), est.n)


def constrained_profile(coupling: CouplingSpec, N: int, n_disorder: int = 50,
                        seed: int = 0):
    """Means and standard errors of the constrained free energy on all of ``S_N``."""
    vals = np.array([constrained_log_sums(sample_coupled(coupling, N, seed, r)) / N
                     for r in range(n_disorder)])
    return (overlap_levels(N), vals.mean(axis=0),
            vals.std(axis=0, ddof=1) / math.sqrt(n_disorder))
