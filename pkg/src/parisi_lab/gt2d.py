"""Two-system Parisi PDE and the constrained-overlap upper bound.

Two copies share self-mixture ``xi`` and cross mixture ``xi0`` and have
their overlap pinned to ``q``.  With ``iota = sign(q)`` and ``Q = |q|`` the
diffusion matrix is

    T(s) = [[zeta(s), iota zeta0(s)], [iota zeta0(s), zeta(s)]]   (s < Q)
    T(s) = diag(zeta(s), zeta(s))                                  (s >= Q)

with ``zeta = xi''`` and ``zeta0(s) = xi0''(iota s)``.  In the rotated
coordinates ``u = (x1 + x2)/sqrt 2``, ``w = (x1 - x2)/sqrt 2`` the matrix is
diagonal with entries ``zeta +- iota zeta0``, so every Gaussian increment
splits into two independent one-dimensional ones and each Hopf-Cole step is
done as two successive one-dimensional passes along the grid axes.

The terminal condition is

    Psi(lam, 1, x) = log(cosh x1 cosh x2 cosh lam + sinh x1 sinh x2 sinh lam)
                   = log((e^lam cosh(sqrt2 u) + e^-lam cosh(sqrt2 w)) / 2),

and where the distribution function equals one the solution stays in this
closed family with shifted exponents.  Every slice carries the value, the
gradient and the Hessian in ``(u, w)``; derivatives come from tilted
quadrature averages.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import expit, ndtr

from ._kernels import LOG2, M_FLOOR, gh_rule, hermite_interp, hermite_interp_cols, log_cosh, sech2
from .errors import (ConfigurationError, DegenerateDenominatorError, GridOverflowError,
                     HypothesisRefusal, InvalidCDFError, InvalidModifiedMeasureError,
                     NotPSDError)
from .measures import AtomicMeasure, discretize
from .mixtures import (CouplingSpec, check_convexity, check_dominance, check_monotone_ratio,
                       theta_eval)
from .parisi1d import ESCAPE_TOL, PhiSolution, _top_index, solve_phi

SQRT2 = math.sqrt(2.0)
PSD_TOL = 1e-12
CERT_MARGIN = 1e-4
MODES = ("positivity", "nonnegativity", "chaos")


# ---------------------------------------------------------------------------
# diffusion matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TMatrixPath:
    """Piecewise matrix path ``s -> T(s)`` for a fixed coupling.

    ``K`` bounds the operator norm ``zeta + |zeta0|`` over the probe grid.
    """

    coupling: CouplingSpec
    K: float
    probe: np.ndarray = field(repr=False)

    @property
    def breakpoint(self) -> float:
        return abs(self.coupling.q)

    def entries(self, s):
        """Diagonal entry ``zeta(s)`` and off-diagonal entry (zero for ``s >= |q|``)."""
        s = np.asarray(s, dtype=float)
        c = self.coupling
        d = np.asarray(c.xi(s, 2), dtype=float)
        off = c.iota * np.asarray(c.xi0(c.iota * s, 2), dtype=float)
        off = np.where(s < self.breakpoint, off, 0.0)
        return d, off

    def __call__(self, s):
        d, off = self.entries(s)
        return np.stack([np.stack([d, off], -1), np.stack([off, d], -1)], -2)

    def rotated(self, s):
        """Eigenvalues ``zeta +- offdiag`` (the ``u`` and ``w`` rates)."""
        d, off = self.entries(s)
        return d + off, d - off


def build_T(coupling: CouplingSpec, grid_n: int = 2001) -> TMatrixPath:
    """Build the diffusion path and check it is positive semidefinite.

    Raises
    ------
    NotPSDError
        If ``zeta(s) < |zeta0(s)|`` at some probed ``s < |q|``; the error
        carries the worst ``s`` as ``witness``.
    """
    return _build_T_cached(coupling, int(grid_n))


@lru_cache(maxsize=512)
def _build_T_cached(coupling: CouplingSpec, grid_n: int) -> TMatrixPath:
    s = np.linspace(0.0, 1.0, grid_n)
    Q = abs(coupling.q)
    if 0 < Q < 1:
        s = np.unique(np.concatenate([s, [Q, np.nextafter(Q, 0.0)]]))
    d = np.asarray(coupling.xi(s, 2), dtype=float)
    z0 = np.asarray(coupling.xi0(coupling.iota * s, 2), dtype=float)
    below = s < Q
    gap = np.where(below, d - np.abs(z0), np.inf)
    if np.any(gap < -PSD_TOL * np.maximum(1.0, d)):
        i = int(np.argmin(gap))
        raise NotPSDError(f"T(s) is not positive semidefinite at s={s[i]:.6g} "
                          f"(zeta={d[i]:.6g}, zeta0={z0[i]:.6g})", witness=float(s[i]))
    K = float(np.max(d + np.where(below, np.abs(z0), 0.0)))
    return TMatrixPath(coupling, K, s)


def _cross_increment(coupling: CouplingSpec, a: float, b: float) -> float:
    """``int_a^b iota zeta0`` restricted to ``[0, |q|)``."""
    Q = abs(coupling.q)
    lo, hi = min(a, Q), min(b, Q)
    if hi <= lo:
        return 0.0
    i = coupling.iota
    return float(coupling.xi0(i * hi, 1) - coupling.xi0(i * lo, 1))


def increment(coupling: CouplingSpec, a: float, b: float):
    """Variances of the ``u`` and ``w`` increments accumulated over ``[a, b]``."""
    D = float(coupling.xi(b, 1) - coupling.xi(a, 1))
    B = _cross_increment(coupling, a, b)
    vu, vw = D + B, D - B
    tol = 1e-12 * max(1.0, abs(D))
    if vu < -tol or vw < -tol:
        raise AssertionError(f"increment covariance not PSD on [{a}, {b}]: D={D}, B={B}")
    return max(vu, 0.0), max(vw, 0.0)


# ---------------------------------------------------------------------------
# grids and sources
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid2DParams:
    """Square grid in ``(u, w)``.

    The half-width is ``sqrt2 |h| + width * sqrt(2 xi'(1)) + pad`` (at least
    ``sqrt2 |h| + 2``); the default spacing is ``0.08 sqrt(max(xi'(1), 1))``.
    """

    dx: float | None = None
    gh_order: int = 40
    width: float = 6.0
    pad: float = 0.0

    def resolve(self, coupling: CouplingSpec):
        v1 = float(coupling.xi(1.0, 1))
        c = SQRT2 * abs(coupling.h)
        L = max(c + self.width * math.sqrt(2.0 * v1), c + 2.0) + self.pad
        dx = self.dx if self.dx is not None else 0.08 * math.sqrt(max(v1, 1.0))
        if dx <= 0:
            raise ConfigurationError("grid spacing must be positive")
        n = int(round(2 * L / dx)) + 1
        if n < 5:
            raise ConfigurationError("grid has fewer than 5 points per axis")
        return np.linspace(-L, L, n)


class TopSource2D:
    """Closed-form slices where the distribution function equals one.

    With ``P = lam + Vu + log cosh(sqrt2 u)`` and
    ``Q = -lam + Vw + log cosh(sqrt2 w)`` the slice is
    ``logaddexp(P, Q) - log 2``.
    """

    def __init__(self, lam: float, Vu: float, Vw: float):
        self.lam, self.Vu, self.Vw = float(lam), float(Vu), float(Vw)

    def __call__(self, U, W):
        au, aw = SQRT2 * U, SQRT2 * W
        P = self.lam + self.Vu + log_cosh(au)
        Q = -self.lam + self.Vw + log_cosh(aw)
        A = np.logaddexp(P, Q) - LOG2
        p = expit(P - Q)
        Pu = SQRT2 * np.tanh(au)
        Qw = SQRT2 * np.tanh(aw)
        pq = p * (1.0 - p)
        return (A, p * Pu, (1.0 - p) * Qw,
                2.0 * p * sech2(au) + pq * Pu * Pu,
                2.0 * (1.0 - p) * sech2(aw) + pq * Qw * Qw,
                -pq * Pu * Qw)

    def d_lambda(self, U, W):
        P = self.lam + self.Vu + log_cosh(SQRT2 * U)
        Q = -self.lam + self.Vw + log_cosh(SQRT2 * W)
        return np.tanh(0.5 * (P - Q))


def terminal_raw(lam, x1, x2):
    """Unstabilized terminal value (for checks at moderate arguments)."""
    return np.log(np.cosh(x1) * np.cosh(x2) * np.cosh(lam)
                  + np.sinh(x1) * np.sinh(x2) * np.sinh(lam))


def _combine(chans, w, m, axis=-1):
    """Hopf-Cole value, gradient and Hessian from channels sampled at the
    quadrature nodes along ``axis``."""
    A, Au, Aw, Auu, Aww, Auw = chans
    shape = [1] * A.ndim
    shape[axis] = w.size
    wb = w.reshape(shape)
    if m < M_FLOOR:
        return tuple(np.sum(wb * c, axis=axis) for c in chans)
    e = m * A
    emax = e.max(axis=axis, keepdims=True)
    p = wb * np.exp(e - emax)
    Z = p.sum(axis=axis, keepdims=True)
    L = (np.squeeze(emax, axis) + np.log(np.squeeze(Z, axis))) / m
    p = p / Z
    Lu = np.sum(p * Au, axis)
    Lw = np.sum(p * Aw, axis)
    Luu = np.sum(p * (Auu + m * Au * Au), axis) - m * Lu * Lu
    Lww = np.sum(p * (Aww + m * Aw * Aw), axis) - m * Lw * Lw
    Luw = np.sum(p * (Auw + m * Au * Aw), axis) - m * Lu * Lw
    return (L, Lu, Lw, Luu, Lww, Luw)


def _slopes(state, axis, dx):
    """Derivatives of each channel along ``axis`` (exact where available)."""
    A, Au, Aw, Auu, Aww, Auw = state
    g = [np.gradient(c, dx, axis=axis, edge_order=2) for c in (Auu, Aww, Auw)]
    if axis == 0:
        return (Au, Auu, Auw, *g)
    return (Aw, Auw, Aww, *g)


def _rule(var, order):
    if var <= 0:
        return np.zeros(1), np.ones(1)
    z, w = gh_rule(order)
    return math.sqrt(var) * z, w


def _shift_hermite(f, df, dx, shifts):
    """Cubic Hermite values of ``f`` (axis 0) at every grid point plus each
    shift; shape ``(len(shifts),) + f.shape``.

    The grid is padded with the linear continuation, which cubic Hermite
    reproduces exactly, so every shift is a contiguous slice.
    """
    n = f.shape[0]
    t = shifts / dx
    o = np.floor(t).astype(np.int64)
    frac = t - o
    pad = int(np.max(np.abs(o))) + 2
    k = np.arange(1, pad + 1, dtype=float).reshape((-1,) + (1,) * (f.ndim - 1)) * dx
    fe = np.concatenate([f[0] - k[::-1] * df[0], f, f[-1] + k * df[-1]])
    dfe = np.concatenate([np.broadcast_to(df[0], (pad,) + f.shape[1:]), df,
                          np.broadcast_to(df[-1], (pad,) + f.shape[1:])])
    out = np.empty((shifts.size,) + f.shape)
    for j, (oj, s) in enumerate(zip(o, frac)):
        a = pad + oj
        s2, s3 = s * s, s * s * s
        out[j] = ((2 * s3 - 3 * s2 + 1) * fe[a:a + n] + (s3 - 2 * s2 + s) * dx * dfe[a:a + n]
                  + (-2 * s3 + 3 * s2) * fe[a + 1:a + 1 + n] + (s3 - s2) * dx * dfe[a + 1:a + 1 + n])
    return out


def _sweep_grid(state, x, axis, var, m, order):
    """One-dimensional Hopf-Cole pass of a grid slice along ``axis``."""
    if var <= 0:
        return state
    dz, w = _rule(var, order)
    dx = x[1] - x[0]
    sl = _slopes(state, axis, dx)
    if axis == 0:
        chans = [_shift_hermite(c, dc, dx, dz) for c, dc in zip(state, sl)]
        return _combine(chans, w, m, axis=0)
    chans = [_shift_hermite(np.ascontiguousarray(c.T), np.ascontiguousarray(dc.T), dx, dz)
             for c, dc in zip(state, sl)]
    return tuple(np.ascontiguousarray(r.T) for r in _combine(chans, w, m, axis=0))


def _sweep_top_w(src: TopSource2D, x, var, m, order):
    """First pass from a closed-form source, evaluated exactly."""
    dz, w = _rule(var, order)
    U = np.broadcast_to(x[None, :, None], (dz.size, x.size, x.size))
    W = x[None, None, :] + dz[:, None, None]
    return _combine(src(U, W), w, m, axis=0)


# ---------------------------------------------------------------------------
# solution object
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PsiSolution:
    """Solution of the two-system PDE for one ``(measure, coupling, lam)``.

    Slices are kept on the ``(u, w)`` grid at the lower end of each run of
    constant ``alpha`` (consecutive segments with equal ``alpha`` are fused
    into a single Gaussian step); the run touching ``s = 1`` with
    ``alpha = 1`` is closed form.  :meth:`evaluate` gives values at any
    ``(s, x1, x2)`` via the exact step from the run end above.
    """

    lam: float
    coupling: CouplingSpec
    measure: AtomicMeasure
    grid: np.ndarray
    nodes: np.ndarray
    alphas: np.ndarray
    top_index: int
    runs: tuple
    slices: dict
    gh_order: int
    T: TMatrixPath

    @property
    def x_grid(self) -> np.ndarray:
        """Common axis of the ``u`` and ``w`` grids."""
        return self.grid

    def alpha_at(self, s: float) -> float:
        return float(self.measure.cdf(s))

    def _top(self, s):
        Vu, Vw = increment(self.coupling, s, 1.0)
        return TopSource2D(self.lam, Vu, Vw)

    def _locate(self, s):
        """Run end index ``b`` and tilt ``m`` for a time ``s`` below the top run."""
        for lo, hi, m in self.runs:
            if self.nodes[lo] <= s < self.nodes[hi]:
                return hi, m
        raise ValueError(f"time {s} outside [0, 1]")

    def evaluate_uw(self, s: float, u, w):
        """Value, gradient and Hessian ``(A, Au, Aw, Auu, Aww, Auw)`` at points."""
        s = float(s)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        w_ = np.atleast_1d(np.asarray(w, dtype=float))
        u, w_ = np.broadcast_arrays(u, w_)
        shape = u.shape
        u, w_ = u.ravel(), w_.ravel()
        if s >= self.nodes[self.top_index]:
            res = self._top(min(s, 1.0))(u, w_)
            return tuple(r.reshape(shape) for r in res)
        b, m = self._locate(s)
        vu, vw = increment(self.coupling, s, float(self.nodes[b]))
        if b == self.top_index:
            res = _point_from_top(self._top(float(self.nodes[b])), u, w_, vu, vw, m,
                                  self.gh_order)
        else:
            res = _point_from_grid(self.slices[b], self.grid, u, w_, vu, vw, m, self.gh_order)
        return tuple(r.reshape(shape) for r in res)

    def evaluate(self, s: float, x1, x2):
        """``(Psi, d_x1 Psi, d_x2 Psi)`` at time ``s``."""
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        A, Au, Aw, *_ = self.evaluate_uw(s, (x1 + x2) / SQRT2, (x1 - x2) / SQRT2)
        return A, (Au + Aw) / SQRT2, (Au - Aw) / SQRT2

    def value_at_start(self) -> float:
        """``Psi(lam, 0, h, h)``."""
        h = self.coupling.h
        return float(self.evaluate_uw(0.0, SQRT2 * h, 0.0)[0].ravel()[0])

    def slice_nodes(self):
        return sorted(self.slices)

    def slice_x(self, j: int):
        """Stored slice ``j`` as ``(Psi, d_x1 Psi, d_x2 Psi)`` on the ``(u, w)`` grid."""
        A, Au, Aw, *_ = self.slices[j]
        return A, (Au + Aw) / SQRT2, (Au - Aw) / SQRT2

    def max_gradient(self) -> float:
        """Largest ``|d_xi Psi|`` over the stored slices."""
        out = 0.0
        for j in self.slices:
            _, g1, g2 = self.slice_x(j)
            out = max(out, float(np.max(np.abs(g1))), float(np.max(np.abs(g2))))
        return out


def _point_from_top(src, u, w, vu, vw, m, order):
    zu, wu = _rule(vu, order)
    zw, ww = _rule(vw, order)
    U = u[:, None, None] + zu[None, :, None]
    W = w[:, None, None] + zw[None, None, :]
    U, W = np.broadcast_arrays(U, W)
    chans = [c.reshape(u.size, -1) for c in src(U, W)]
    return _combine(chans, np.outer(wu, ww).ravel(), m)


def _point_from_grid(state, x, u, w, vu, vw, m, order):
    dx = x[1] - x[0]
    # pass along w on every u-row, at the requested w's
    zw, ww = _rule(vw, order)
    y = (w[:, None] + zw).ravel()
    sl = _slopes(state, 1, dx)
    chans = []
    for c, dc in zip(state, sl):
        v = hermite_interp(x[0], dx, c.T, dc.T, y).reshape(w.size, zw.size, x.size)
        chans.append(np.transpose(v, (2, 0, 1)))          # (n_u, P, nq)
    mid = _combine(chans, ww, m)                           # each (n_u, P)
    # pass along u, column by column
    zu, wu = _rule(vu, order)
    yu = u[:, None] + zu                                   # (P, nq)
    sl = _slopes(mid, 0, dx)
    chans = [hermite_interp_cols(x[0], dx, c, dc, yu) for c, dc in zip(mid, sl)]
    return _combine(chans, wu, m)


def _partition(measure: AtomicMeasure, Q: float):
    nodes, _ = measure.partition()
    nodes = np.unique(np.concatenate([nodes, [Q]]))
    alphas = np.asarray(measure.cdf(nodes[:-1]), dtype=float)
    return nodes, alphas


def _runs(alphas, top):
    runs = []
    j = 0
    while j < top:
        k = j + 1
        while k < top and alphas[k] == alphas[j]:
            k += 1
        runs.append((j, k, float(alphas[j])))
        j = k
    return tuple(runs)


def _escape(coupling: CouplingSpec, x: np.ndarray):
    vu, vw = increment(coupling, 0.0, 1.0)
    L = x[-1]
    c = SQRT2 * coupling.h
    mass = 0.0
    if vu > 0:
        sd = math.sqrt(vu)
        mass += float(ndtr((-L - c) / sd) + ndtr((c - L) / sd))
    if vw > 0:
        sd = math.sqrt(vw)
        mass += float(2 * ndtr(-L / sd))
    if mass > ESCAPE_TOL:
        raise GridOverflowError(f"(u, w) grid half-width {L:.4g} leaks mass {mass:.3g}")


def solve_psi(measure: AtomicMeasure, coupling: CouplingSpec, lam: float = 0.0,
              grid: Grid2DParams | None = None, store_start: bool = False) -> PsiSolution:
    """Solve the two-system PDE backward from ``s = 1``.

    Parameters
    ----------
    store_start : bool
        Also build the full slice at ``s = 0`` (otherwise only point values
        at ``s = 0`` are available, which is all the bound needs).

    Raises
    ------
    NotPSDError
        If the diffusion path is not positive semidefinite.
    GridOverflowError
        If the grid is too narrow for the accumulated variance.
    """
    T = build_T(coupling)
    grid = grid or Grid2DParams()
    x = grid.resolve(coupling)
    Q = abs(coupling.q)
    nodes, alphas = _partition(measure, Q)
    top = _top_index(alphas)
    runs = _runs(alphas, top)
    slices = {}
    if top > 0:
        _escape(coupling, x)
    for lo, hi, m in reversed(runs):
        if lo == 0 and not store_start:
            continue
        vu, vw = increment(coupling, float(nodes[lo]), float(nodes[hi]))
        if hi == top:
            src = TopSource2D(lam, *increment(coupling, float(nodes[hi]), 1.0))
            if vw > 0:
                st = _sweep_top_w(src, x, vw, m, grid.gh_order)
            else:
                U, W = np.meshgrid(x, x, indexing="ij")
                st = src(U, W)
        else:
            st = _sweep_grid(slices[hi], x, 1, vw, m, grid.gh_order)
        slices[lo] = _sweep_grid(st, x, 0, vu, m, grid.gh_order)
    return PsiSolution(float(lam), coupling, measure, x, nodes, alphas, top, runs,
                       slices, grid.gh_order, T)


def integral_term(measure: AtomicMeasure, coupling: CouplingSpec) -> float:
    """``int_0^1 alpha s xi'' ds + int_0^|q| alpha s xi0''(iota s) ds``."""
    Q = abs(coupling.q)
    nodes, alphas = _partition(measure, Q)
    th = np.asarray(theta_eval(coupling.xi, nodes), dtype=float)
    total = float(np.sum(alphas * np.diff(th)))
    below = nodes[1:] <= Q
    if np.any(below):
        i = coupling.iota
        th0 = np.asarray(theta_eval(coupling.xi0, i * nodes), dtype=float)
        total += float(np.sum((alphas * np.diff(th0))[below]))
    return total


def gt_bound(measure: AtomicMeasure, coupling: CouplingSpec, lam: float = 0.0,
             grid: Grid2DParams | None = None, psi: PsiSolution | None = None) -> float:
    """``2 log 2 + Psi(lam, 0, h, h) - lam q - integral_term``."""
    if psi is None:
        psi = solve_psi(measure, coupling, lam, grid)
    return 2 * LOG2 + psi.value_at_start() - lam * coupling.q - integral_term(measure, coupling)


# ---------------------------------------------------------------------------
# lambda optimization
# ---------------------------------------------------------------------------

class LambdaOpt(NamedTuple):
    lambda_star: float
    value: float
    convex: bool
    n_evals: int


def optimize_lambda(measure: AtomicMeasure, coupling: CouplingSpec,
                    grid: Grid2DParams | None = None, lambda_range=(-4.0, 4.0),
                    n_probe: int = 9, xtol: float = 1e-6) -> LambdaOpt:
    """Minimize ``lam -> Lambda(lam, q)`` over ``lambda_range``.

    Probes on a uniform grid (plus ``lam = 0``) test discrete convexity.  If
    it holds, a bounded golden-section/parabolic search runs on the bracket
    around the best probe; otherwise the best probe is returned.
    """
    lo, hi = map(float, lambda_range)
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise ConfigurationError("lambda_range must be a finite increasing pair")
    cache = {}

    def f(lam):
        lam = float(lam)
        if lam not in cache:
            cache[lam] = gt_bound(measure, coupling, lam, grid)
        return cache[lam]

    pts = np.linspace(lo, hi, max(int(n_probe), 3))
    if lo < 0 < hi:
        pts = np.unique(np.concatenate([pts, [0.0]]))
    vals = np.array([f(p) for p in pts])
    # second divided differences on the (possibly non-uniform) probe grid
    d1 = np.diff(vals) / np.diff(pts)
    d2 = np.diff(d1)
    scale = max(1.0, float(np.max(np.abs(vals))))
    convex = bool(np.all(d2 >= -1e-9 * scale))
    i = int(np.argmin(vals))
    best_l, best_v = float(pts[i]), float(vals[i])
    if convex:
        a = pts[max(i - 1, 0)]
        b = pts[min(i + 1, pts.size - 1)]
        res = minimize_scalar(f, bounds=(a, b), method="bounded",
                              options={"xatol": xtol})
        if res.fun < best_v:
            best_l, best_v = float(res.x), float(res.fun)
    return LambdaOpt(best_l, best_v, convex, len(cache))


# ---------------------------------------------------------------------------
# fixed point of the cross-overlap map
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FixedPointReport:
    q_star: float
    q_grid: np.ndarray
    f_values: np.ndarray
    eta: float


def cross_overlap_map(coupling: CouplingSpec, muP_phi: PhiSolution, eta: float, q,
                      order: int = 40):
    """``f(q) = E d_xPhi(eta, h + z1) d_xPhi(eta, h + z2)`` with
    ``Var z_i = xi'(eta)`` and ``Cov(z1, z2) = xi0'(q)``."""
    q_arr = np.atleast_1d(np.asarray(q, dtype=float))
    a = float(coupling.xi(eta, 1))
    z, w = gh_rule(order)
    W = np.outer(w, w).ravel()
    g1 = np.repeat(z, z.size)
    g2 = np.tile(z, z.size)
    h = coupling.h
    out = np.empty(q_arr.size)
    for k, qq in enumerate(q_arr):
        if a <= 0:
            d = muP_phi.evaluate(eta, np.array([h]))[1][0]
            out[k] = d * d
            continue
        rho = float(np.clip(coupling.xi0(qq, 1) / a, -1.0, 1.0))
        sd = math.sqrt(a)
        x1 = h + sd * g1
        x2 = h + sd * (rho * g1 + math.sqrt(max(1 - rho * rho, 0.0)) * g2)
        d1 = muP_phi.evaluate(eta, x1)[1]
        d2 = muP_phi.evaluate(eta, x2)[1]
        out[k] = float(np.sum(W * d1 * d2))
    return out if np.ndim(q) else float(out[0])


def coupled_fixed_point(coupling: CouplingSpec, muP_phi: PhiSolution, eta: float,
                        q_grid_n: int = 41, order: int = 40) -> FixedPointReport:
    """Fixed point ``q* = f(q*)`` of the cross-overlap map on ``[-eta, eta]``.

    By Cauchy-Schwarz ``|f| <= f(eta)``, so ``f(q) - q`` is nonnegative at
    ``-eta`` and nonpositive at ``eta`` (up to the accuracy of ``eta``); the
    root is found with Brent's method and clipped to the interval.
    """
    eta = float(eta)
    if coupling.h == 0 and eta <= 0:
        qg = np.zeros(1)
        return FixedPointReport(0.0, qg, np.zeros(1), eta)
    qg = np.linspace(-eta, eta, max(int(q_grid_n), 2))
    fv = cross_overlap_map(coupling, muP_phi, eta, qg, order)
    if eta <= 0:
        return FixedPointReport(0.0, qg, fv, eta)

    def g(qq):
        return cross_overlap_map(coupling, muP_phi, eta, qq, order) - qq

    lo, hi = g(-eta), g(eta)
    if hi >= 0:
        q_star = eta
    elif lo <= 0:
        q_star = -eta
    else:
        q_star = brentq(g, -eta, eta, xtol=1e-13, rtol=1e-14)
    return FixedPointReport(float(q_star), qg, fv, eta)


# ---------------------------------------------------------------------------
# modified measure off the diagonal
# ---------------------------------------------------------------------------

def modified_cdf(muP: AtomicMeasure, coupling: CouplingSpec):
    """``s -> alpha_P(s) zeta/(zeta + zeta0)`` below ``|q|`` and ``alpha_P`` above.

    Raises
    ------
    InvalidModifiedMeasureError
        If the ratio is not nondecreasing on (0, 1] or the denominator vanishes.
    """
    Q = abs(coupling.q)
    i = coupling.iota
    try:
        rep = check_monotone_ratio(coupling.xi, coupling.xi0, reflect_den=(i < 0))
    except DegenerateDenominatorError as exc:
        raise InvalidModifiedMeasureError(str(exc)) from exc
    if not rep.monotone:
        raise InvalidModifiedMeasureError(
            f"ratio zeta/(zeta+zeta0) decreases near s={rep.witness:.6g}")
    xi, xi0 = coupling.xi, coupling.xi0
    r0 = float(rep.ratio[0])   # value at the first positive grid point, used at s=0

    def alpha(s):
        s = float(s)
        a = float(muP.cdf(s))
        if s >= Q:
            return a
        if s <= 0.0:
            return a * r0
        top = float(xi(s, 2))
        return a * top / (top + float(xi0(i * s, 2)))

    return alpha


def modified_measure(muP: AtomicMeasure, coupling: CouplingSpec,
                     eps: float = 0.02) -> AtomicMeasure:
    """Atomic measure within ``eps`` (L1 on distribution functions) of the
    reweighted distribution :func:`modified_cdf`."""
    fn = modified_cdf(muP, coupling)
    try:
        return discretize(fn, eps)
    except InvalidCDFError as exc:
        raise InvalidModifiedMeasureError(str(exc)) from exc


# ---------------------------------------------------------------------------
# hypotheses and scans
# ---------------------------------------------------------------------------

def _ratio_ok(num, den, reflect):
    try:
        rep = check_monotone_ratio(num, den, reflect_den=reflect)
    except DegenerateDenominatorError as exc:
        return False, {"error": str(exc)}
    return rep.monotone, {"witness": rep.witness}


def check_hypotheses(coupling: CouplingSpec, mode: str) -> dict:
    """Verify the structural conditions needed for ``mode``.

    Returns ``{"convexity": True, "ratio": True, "dominance": True}`` or
    raises :class:`HypothesisRefusal` naming the first failing condition.
    """
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}; expected one of {MODES}")
    xi, xi0, h = coupling.xi, coupling.xi0, coupling.h
    conv = check_convexity(xi)
    if not conv.convex:
        raise HypothesisRefusal("convexity", "xi is not convex on [-1, 1]",
                                {"witness": conv.witness})
    if mode in ("positivity", "nonnegativity") and not coupling.identical:
        raise HypothesisRefusal("identical", f"{mode} concerns two replicas of one system (xi0 = xi)")
    if mode == "positivity" and h == 0:
        raise HypothesisRefusal("field", "positivity needs a nonzero external field")
    if mode == "nonnegativity" and h != 0:
        raise HypothesisRefusal("field", "nonnegativity is stated for zero external field")
    if mode == "chaos":
        if xi0.is_zero:
            raise HypothesisRefusal("convexity", "xi0 must be nonzero")
        c0 = check_convexity(xi0)
        if not c0.convex:
            raise HypothesisRefusal("convexity", "xi0 is not convex on [-1, 1]",
                                    {"witness": c0.witness})
    dom = check_dominance(coupling)
    if not dom.weak:
        raise HypothesisRefusal("dominance", "xi0''(s) exceeds xi''(|s|)",
                                {"witness": dom.witness})
    if mode == "positivity":
        if not xi.is_even:
            ok, det = _ratio_ok(xi, xi, True)
            if not ok:
                raise HypothesisRefusal("ratio", "xi''(s)/(xi''(s)+xi''(-s)) is not "
                                        "nondecreasing on (0, 1]", det)
    elif mode == "nonnegativity":
        if xi.is_even:
            raise HypothesisRefusal("ratio", "the ratio condition requires xi not even")
        ok, det = _ratio_ok(xi, xi, True)
        if not ok:
            raise HypothesisRefusal("ratio", "xi''(s)/(xi''(s)+xi''(-s)) is not "
                                    "nondecreasing on (0, 1]", det)
    else:
        for reflect in (True, False):
            ok, det = _ratio_ok(xi, xi0, reflect)
            if not ok:
                sign = "-s" if reflect else "s"
                raise HypothesisRefusal("ratio", f"xi''(s)/(xi''(s)+xi0''({sign})) is not "
                                        "nondecreasing on (0, 1]", det)
        if not dom.strict:
            raise HypothesisRefusal("dominance", "xi0''(s) < xi''(|s|) fails for some s != 0",
                                    {"witness": dom.witness})
    return {"convexity": True, "ratio": True, "dominance": True}


@dataclass(frozen=True, eq=False)
class BoundCurve:
    """Upper bounds ``Lambda(q)`` compared with ``2 P(mu_P)``."""

    mode: str
    q_grid: np.ndarray
    lambda_star: np.ndarray
    Lambda: np.ndarray
    lambda_candidate: np.ndarray
    modified_candidate: np.ndarray
    psd_ok: np.ndarray
    in_region: np.ndarray
    two_P: float
    q_star: float
    eta: float
    verdict: str
    margin: float
    hypotheses: dict
    cert_margin: float
    eps_exclusion: float
    estimate_status: str

    @property
    def margins(self) -> np.ndarray:
        return self.two_P - self.Lambda

    def certificate(self) -> dict:
        return {"mode": self.mode, "verdict": self.verdict, "margin": self.margin,
                "q_star": self.q_star, "eta": self.eta, "two_P": self.two_P,
                "cert_margin": self.cert_margin, "eps_exclusion": self.eps_exclusion,
                "estimate_status": self.estimate_status,
                "hypotheses": dict(self.hypotheses)}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["q", "lambda_star", "Lambda", "two_P", "margin", "psd_ok"])
            for q, l, v, ok in zip(self.q_grid, self.lambda_star, self.Lambda, self.psd_ok):
                wr.writerow([repr(float(q)), repr(float(l)), repr(float(v)),
                             repr(self.two_P), repr(float(self.two_P - v)), int(bool(ok))])

    def to_json(self) -> str:
        return json.dumps(self.certificate(), indent=2, sort_keys=True)


def _region(mode, q, eta, q_star, eps):
    if mode == "positivity":
        return q <= eta - eps + 1e-12
    if mode == "nonnegativity":
        return q <= -eps + 1e-12
    return np.abs(q - q_star) >= eps - 1e-12


def scan_bound(coupling_family: CouplingSpec, muP_estimate, mode: str, q_grid_n: int = 101,
               eps_exclusion: float = 0.1, grid: Grid2DParams | None = None,
               lambda_range=(-4.0, 4.0), modified_eps: float = 0.02,
               cert_margin: float = CERT_MARGIN, candidates=("lambda", "modified"),
               phi: PhiSolution | None = None, threads: int = 1) -> BoundCurve:
    """Scan ``Lambda(q)`` over ``[-1, 1]`` and decide a certificate for ``mode``.

    ``coupling_family`` supplies ``xi``, ``xi0`` and ``h`` (its ``q`` is
    ignored); ``muP_estimate`` is a :class:`~parisi_lab.optimizer.ParisiEstimate`.
    At each ``q`` the bound is the smaller of the ``lam``-optimized bound for
    ``mu_P`` and, for ``|q| > eta`` inside the region, the bound at ``lam = 0``
    for the modified measure.  The verdict is granted when every ``q`` of the
    region has ``Lambda(q) < 2 P(mu_P) - cert_margin`` with a PSD path and the
    estimate is converged; otherwise it is ``"inconclusive"``.

    Raises
    ------
    HypothesisRefusal
        If a structural condition for ``mode`` fails.
    """
    hyp = check_hypotheses(coupling_family, mode)
    muP = muP_estimate.measure
    two_P = 2.0 * float(muP_estimate.value)
    eta = float(muP_estimate.eta)
    xi, h = coupling_family.xi, coupling_family.h
    if mode == "chaos":
        if phi is None:
            phi = solve_phi(muP, xi, h)
        q_star = coupled_fixed_point(coupling_family, phi, eta).q_star
    elif mode == "positivity":
        q_star = eta
    else:
        q_star = 0.0
    extra = [eta, -eta, 0.0, q_star, eta - eps_exclusion, -eps_exclusion,
             q_star - eps_exclusion, q_star + eps_exclusion]
    qg = np.linspace(-1.0, 1.0, int(q_grid_n))
    qg = np.unique(np.round(np.concatenate([qg, [e for e in extra if -1 <= e <= 1]]), 14))
    region = _region(mode, qg, eta, q_star, eps_exclusion)
    n = qg.size
    lam_star = np.zeros(n)
    lam_cand = np.full(n, np.nan)
    mod_cand = np.full(n, np.nan)
    psd = np.ones(n, dtype=bool)

    def one(k):
        q = float(qg[k])
        c = coupling_family.with_q(q)
        try:
            build_T(c)
        except NotPSDError:
            return False, 0.0, np.nan, np.nan
        lam, lc, mc = 0.0, np.nan, np.nan
        if "lambda" in candidates:
            opt = optimize_lambda(muP, c, grid, lambda_range)
            lam, lc = opt.lambda_star, opt.value
        if "modified" in candidates and region[k] and abs(q) > eta + 1e-12:
            try:
                mu = modified_measure(muP, c, modified_eps)
                mc = gt_bound(mu, c, 0.0, grid)
            except InvalidModifiedMeasureError:
                pass
        if not np.isnan(mc) and not (mc >= lc):
            lam = 0.0
        return True, lam, lc, mc

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=int(threads)) as ex:
            rows = list(ex.map(one, range(n)))
    else:
        rows = [one(k) for k in range(n)]
    for k, (ok_k, lam, lc, mc) in enumerate(rows):
        psd[k], lam_star[k], lam_cand[k], mod_cand[k] = ok_k, lam, lc, mc
    Lam = np.fmin(lam_cand, mod_cand)
    margins = two_P - Lam
    reg_m = margins[region]
    margin = float(np.min(np.where(np.isnan(reg_m), -np.inf, reg_m))) if reg_m.size else -np.inf
    status = getattr(muP_estimate, "status", "converged")
    ok = bool(margin > cert_margin and np.all(psd[region]) and status == "converged")
    return BoundCurve(mode, qg, lam_star, Lam, lam_cand, mod_cand, psd, region, two_P,
                      float(q_star), eta, mode if ok else "inconclusive", margin, hyp,
                      float(cert_margin), float(eps_exclusion), status)


# ---------------------------------------------------------------------------
# PDE residual
# ---------------------------------------------------------------------------

def pde_residual(psi: PsiSolution, s: float, x1: float, x2: float, ds: float = 1e-5) -> float:
    """Scaled residual of ``d_s L = -(1/2)(<T, D^2 L> + m <T grad L, grad L>)``.

    ``d_s L`` is a central difference of point evaluations; ``s +- ds`` must
    stay inside one segment.  The residual is divided by ``1 + |rhs|``.
    """
    u = (x1 + x2) / SQRT2
    w = (x1 - x2) / SQRT2
    lp = psi.evaluate_uw(s + ds, u, w)[0].ravel()[0]
    lm = psi.evaluate_uw(s - ds, u, w)[0].ravel()[0]
    lhs = (lp - lm) / (2 * ds)
    A, Au, Aw, Auu, Aww, Auw = (float(np.ravel(r)[0]) for r in psi.evaluate_uw(s, u, w))
    tu, tw = psi.T.rotated(s)
    m = psi.alpha_at(s)
    rhs = -0.5 * (float(tu) * (Auu + m * Au * Au) + float(tw) * (Aww + m * Aw * Aw))
    return abs(lhs - rhs) / (1.0 + abs(rhs))
