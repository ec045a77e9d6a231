"""Minimization of the Parisi functional over measures with few atoms.

A measure with ``k + 1`` atoms is encoded by ``2k + 1`` unconstrained reals:
atoms by a descending stick ``q_k = sin^2 t_k``, ``q_i = q_{i+1} sin^2 t_i``
(sorted, endpoints reachable) and weights by stick breaking with
``sin^2`` fractions.  The search itself is scipy's Nelder-Mead; single-atom
measures are handled exactly through the stationarity equation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .flows import CriterionReport, at_line_check, check_parisi_criterion
from .measures import AtomicMeasure
from .mixtures import MixtureSpec
from .parisi1d import GridParams, parisi_value

IMPROVE_TOL = 1e-5
ETA_WEIGHT = 1e-6


def search_grid(mixture: MixtureSpec) -> GridParams:
    """Coarser grid used inside the search (Hermite interpolation keeps the
    functional accurate to ~1e-9 there)."""
    v1 = float(mixture(1.0, 1))
    return GridParams(dx=0.05 * math.sqrt(max(v1, 1.0)), gh_order=40)


def decode(theta: np.ndarray, k: int) -> AtomicMeasure:
    """Map ``2k + 1`` reals to a measure with at most ``k + 1`` atoms."""
    theta = np.asarray(theta, dtype=float)
    f = np.sin(theta[: k + 1]) ** 2
    q = np.empty(k + 1)
    q[k] = f[k]
    for i in range(k - 1, -1, -1):
        q[i] = q[i + 1] * f[i]
    s = np.sin(theta[k + 1:]) ** 2
    w = np.empty(k + 1)
    rest = 1.0
    for i in range(k):
        w[i] = rest * s[i]
        rest *= 1.0 - s[i]
    w[k] = rest
    keep = w > 0
    if not np.any(keep):
        keep[:] = True
        w[:] = 1.0
    return AtomicMeasure.create(q[keep], w[keep])


def encode(measure: AtomicMeasure, k: int) -> np.ndarray:
    """Inverse of :func:`decode` for a measure with at most ``k + 1`` atoms;
    missing atoms are padded by splitting the top atom."""
    q = list(measure.atoms)
    w = list(measure.weights)
    while len(q) < k + 1:
        j = int(np.argmax(w))
        w[j] *= 0.5
        q.insert(j + 1, q[j])
        w.insert(j + 1, w[j])
    q = np.clip(np.array(q[: k + 1]), 1e-9, 1 - 1e-9)
    w = np.array(w[: k + 1])
    w = w / w.sum()
    theta = np.empty(2 * k + 1)
    theta[k] = math.asin(math.sqrt(q[k]))
    for i in range(k - 1, -1, -1):
        theta[i] = math.asin(math.sqrt(min(q[i] / q[i + 1], 1.0)))
    rest = 1.0
    for i in range(k):
        frac = min(max(w[i] / rest, 0.0), 1.0) if rest > 0 else 0.0
        theta[k + 1 + i] = math.asin(math.sqrt(frac))
        rest -= w[i]
    return theta


@dataclass(frozen=True, eq=False)
class KRSBResult:
    measure: AtomicMeasure
    value: float
    k: int
    n_evals: int


def _single_atom(mixture: MixtureSpec, h: float, grid: GridParams) -> KRSBResult:
    cands = {0.0, 1.0}
    cands.update(at_line_check(mixture, h).roots)
    best = None
    for q in sorted(cands):
        mu = AtomicMeasure.dirac(q)
        v = parisi_value(mu, mixture, h, grid)
        if best is None or v < best.value - 1e-15:
            best = KRSBResult(mu, v, 0, len(cands))
    return best


def minimize_krsb(mixture: MixtureSpec, h: float = 0.0, k: int = 1, restarts: int = 8,
                  seed: int = 0, warm_start: AtomicMeasure | None = None,
                  grid: GridParams | None = None, maxiter: int | None = None) -> KRSBResult:
    """Minimize the Parisi functional over measures with at most ``k + 1`` atoms.

    Deterministic for a fixed ``seed``.  The value returned is recomputed on
    the default grid (``grid`` overrides it).
    """
    final_grid = grid or GridParams()
    if k == 0:
        return _single_atom(mixture, h, final_grid)
    sgrid = search_grid(mixture)
    rng = np.random.default_rng(seed)
    dim = 2 * k + 1
    evals = 0

    def obj(t):
        nonlocal evals
        evals += 1
        return parisi_value(decode(t, k), mixture, h, sgrid)

    starts = []
    if warm_start is not None:
        starts.append(encode(warm_start, k))
    # evenly spread atoms below the replica-symmetric root, equal weights
    q_rs = max(at_line_check(mixture, h).roots)
    spread = AtomicMeasure.create(np.linspace(0.0, max(q_rs, 0.2), k + 1),
                                  np.full(k + 1, 1.0 / (k + 1)))
    starts.append(encode(spread, k))
    while len(starts) < max(restarts, 1):
        starts.append(rng.uniform(0.05, math.pi / 2 - 0.05, dim))
    maxiter = maxiter or 120 * dim
    best_t, best_v = None, np.inf
    # short exploratory runs, then a long polish of the best one
    for t0 in starts[: max(restarts, 1)]:
        res = minimize(obj, t0, method="Nelder-Mead",
                       options={"xatol": 1e-5, "fatol": 1e-9, "maxiter": maxiter,
                                "adaptive": dim > 4})
        if res.fun < best_v:
            best_t, best_v = res.x, res.fun
    # polish from the best point with a fresh simplex
    res = minimize(obj, best_t, method="Nelder-Mead",
                   options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 10 * maxiter,
                            "adaptive": dim > 4})
    if res.fun < best_v:
        best_t, best_v = res.x, res.fun
    mu = decode(best_t, k)
    return KRSBResult(mu, parisi_value(mu, mixture, h, final_grid), k, evals)


@dataclass(frozen=True, eq=False)
class ParisiEstimate:
    measure: AtomicMeasure
    value: float
    k_used: int
    criterion: CriterionReport | None
    eta: float
    status: str
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"k_used": self.k_used, "value": self.value,
                "atoms": [float(a) for a in self.measure.atoms],
                "weights": [float(w) for w in self.measure.weights],
                "eta": self.eta,
                "criterion": None if self.criterion is None else self.criterion.verdict,
                "status": self.status,
                "history": [{"k": k, "value": v} for k, v in self.history]}


def find_parisi_measure(mixture: MixtureSpec, h: float = 0.0, k_max: int = 3,
                        improve_tol: float = IMPROVE_TOL, seed: int = 0,
                        restarts: int = 8, q_grid_n: int = 21,
                        criterion_tol: float = 1e-5) -> ParisiEstimate:
    """Increase the number of atoms until one more atom improves the value by
    less than ``improve_tol`` and the first-order criterion holds.

    The status is ``"converged"`` in that case and ``"inconclusive"`` when
    ``k_max`` is reached first.
    """
    flow_grid = GridParams(pad=float(mixture(1.0, 1)))
    cur = minimize_krsb(mixture, h, 0, restarts, seed)
    history = [(0, cur.value)]
    crit = None
    for k in range(k_max + 1):
        crit = check_parisi_criterion(cur.measure, mixture, h, q_grid_n, flow_grid,
                                      tol=criterion_tol)
        if k == k_max:
            break
        nxt = minimize_krsb(mixture, h, k + 1, restarts, seed + k + 1, warm_start=cur.measure)
        history.append((k + 1, nxt.value))
        if crit.passed and cur.value - nxt.value < improve_tol:
            return ParisiEstimate(cur.measure, cur.value, k, crit,
                                  cur.measure.smallest_atom(ETA_WEIGHT), "converged", history)
        if nxt.value < cur.value:
            cur = nxt
    return ParisiEstimate(cur.measure, cur.value, k_max, crit,
                          cur.measure.smallest_atom(ETA_WEIGHT), "inconclusive", history)
