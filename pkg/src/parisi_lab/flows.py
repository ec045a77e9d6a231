"""Second moments along the optimal control process and first-order criteria.

The process ``X(r) = h + int alpha zeta Phi_x dr + int sqrt(zeta) dB`` has
``u(r) = Phi_x(r, X(r))``.  This module computes ``E u(r)^2`` and
``E Phi_xx(r, X(r))^2`` either by transporting the law of ``X`` (default) or
by Euler-Maruyama simulation, and from them

* directional derivatives of the Parisi functional,
* the global first-order optimality criterion over Dirac directions,
* the support conditions at a point,
* the replica-symmetric fixed point and its stability inequality.

Density transport
-----------------
On a segment where ``alpha = m`` the function ``exp(m Phi)`` solves a
backward heat equation, so ``X`` is a Doob transform of time-changed Brownian
motion.  Its density therefore evolves as

    p_r(y) = exp(m Phi(r, y)) * [G_v * (p_a exp(-m Phi(a, .)))](y),
    v = xi'(r) - xi'(a),

which solves the forward equation ``d_r p = (zeta/2) p_xx - d_x(alpha zeta Phi_x p)``
exactly.  The Gaussian convolution is applied spectrally on the grid.  The
first segment with positive ``alpha`` starts from a Gaussian (possibly a point
mass) and is treated by nested quadrature instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy.optimize import brentq

from ._kernels import M_FLOOR, gh_rule, hermite_interp, sech2
from .errors import ConfigurationError, GridOverflowError, NumericalRootError, ZeroMixtureError
from .measures import AtomicMeasure
from .mixtures import MixtureSpec
from .parisi1d import GridParams, GridSource, PhiSolution, solve_phi

LEAK_TOL = 1e-6
CRITERION_TOL = 1e-5
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True, eq=False)
class MomentCurve:
    """``E u(r)^2`` and ``E Phi_xx(r, X(r))^2`` on ``r_grid``."""

    r_grid: np.ndarray
    eu2: np.ndarray
    euxx2: np.ndarray
    source: str
    mc_std_err: np.ndarray | None = None
    mass: np.ndarray | None = field(default=None, repr=False)

    def to_csv(self, path):
        cols = [self.r_grid, self.eu2, self.euxx2]
        header = "r,eu2,euxx2"
        if self.mc_std_err is not None:
            cols.append(self.mc_std_err)
            header += ",stderr"
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=header,
                   comments="", fmt="%.17g")


def _r_grid(phi: PhiSolution, n_r: int, extra=()):
    pts = np.concatenate([np.linspace(0.0, 1.0, n_r), phi.s_nodes, np.asarray(extra, float)])
    pts = np.unique(np.clip(pts, 0.0, 1.0))
    # drop near-duplicates that would create zero-length pieces
    keep = np.concatenate([[True], np.diff(pts) > 1e-12])
    return pts[keep]


def _heat(f: np.ndarray, dx: float, var: float) -> np.ndarray:
    """Gaussian convolution of grid values (zero-padded spectral multiplier)."""
    if var <= 0:
        return f.copy()
    n = f.size
    nfft = sfft.next_fast_len(2 * n)
    k = 2 * np.pi * sfft.rfftfreq(nfft, d=dx)
    g = sfft.irfft(sfft.rfft(f, nfft) * np.exp(-0.5 * var * k * k), nfft)[:n]
    return g


def _deterministic(phi: PhiSolution, r_grid: np.ndarray):
    xi = phi.mixture
    z, w = gh_rule(phi.gh_order)
    x = phi.x_grid
    dx = phi.dx
    h = phi.h
    nodes, alphas = phi.s_nodes, phi.alphas
    pos = np.nonzero(alphas >= M_FLOOR)[0]
    j0 = int(pos[0]) if pos.size else nodes.size - 1
    a0 = nodes[j0]
    eu2 = np.empty(r_grid.size)
    euxx2 = np.empty(r_grid.size)
    mass = np.ones(r_grid.size)

    # leading alpha = 0 stretch: X(r) ~ N(h, xi'(r))
    for i, r in enumerate(r_grid):
        if r > a0:
            break
        pts = h + math.sqrt(max(xi(r, 1), 0.0)) * z
        _, d1, d2 = phi.evaluate(r, pts)
        eu2[i] = d1 * d1 @ w
        euxx2[i] = d2 * d2 @ w
    if j0 >= nodes.size - 1:
        return eu2, euxx2, mass

    # first positive segment: nested quadrature from the Gaussian at a0
    m = alphas[j0]
    b0 = nodes[j0 + 1]
    v0 = float(xi(a0, 1))
    xa = h + math.sqrt(v0) * z
    phia = phi.evaluate(a0, xa)[0]
    for i, r in enumerate(r_grid):
        if r <= a0 or r > b0:
            continue
        v = float(xi(r, 1) - v0)
        y = xa[:, None] + math.sqrt(v) * z[None, :]
        pr, d1, d2 = phi.evaluate(r, y)
        wt = w[:, None] * w[None, :] * np.exp(m * (pr - phia[:, None]))
        tot = wt.sum()
        mass[i] = tot
        eu2[i] = np.sum(wt * d1 * d1) / tot
        euxx2[i] = np.sum(wt * d2 * d2) / tot
    if j0 + 1 >= nodes.size - 1:
        _check_leak(mass)
        return eu2, euxx2, mass

    # density at b0 on the grid: Gaussian product formula
    vb = float(xi(b0, 1) - v0)
    tot_var = v0 + vb
    tau = math.sqrt(v0 * vb / tot_var)
    mu_y = (vb * h + v0 * x) / tot_var
    inner = np.exp(-m * phi.evaluate(a0, mu_y[:, None] + tau * z[None, :])[0]) @ w
    gauss = np.exp(-0.5 * (x - h) ** 2 / tot_var) / math.sqrt(2 * math.pi * tot_var)
    p = np.exp(m * phi.evaluate(b0, x)[0]) * gauss * inner
    _check_leak(np.array([p.sum() * dx]))

    # later segments: spectral transport of the Doob-transformed density
    for j in range(j0 + 1, nodes.size - 1):
        a, b = nodes[j], nodes[j + 1]
        m = alphas[j]
        f = p * np.exp(-m * phi.evaluate(a, x)[0])
        va = float(xi(a, 1))
        for i, r in enumerate(r_grid):
            if r <= a or r > b:
                continue
            pr, d1, d2 = phi.evaluate(r, x)
            dens = np.exp(m * pr) * _heat(f, dx, float(xi(r, 1) - va))
            tot = dens.sum() * dx
            mass[i] = tot
            eu2[i] = np.sum(dens * d1 * d1) * dx / tot
            euxx2[i] = np.sum(dens * d2 * d2) * dx / tot
        dens = np.exp(m * phi.evaluate(b, x)[0]) * _heat(f, dx, float(xi(b, 1) - va))
        p = np.maximum(dens, 0.0) / (dens.sum() * dx)
    _check_leak(mass)
    return eu2, euxx2, mass


def _check_leak(mass):
    leak = float(np.max(np.abs(np.asarray(mass) - 1.0)))
    if leak > LEAK_TOL:
        raise GridOverflowError(f"density mass deviates from 1 by {leak:.3g}; widen the grid")


def _monte_carlo(phi: PhiSolution, r_grid: np.ndarray, n_paths: int, n_steps: int,
                 seed: int, batch: int = 8192):
    xi = phi.mixture
    times = np.unique(np.concatenate([np.linspace(0, 1, n_steps + 1), r_grid, phi.s_nodes]))
    ss = np.random.SeedSequence(seed)
    n_batches = int(math.ceil(n_paths / batch))
    gens = [np.random.Generator(np.random.Philox(c)) for c in ss.spawn(n_batches)]
    sizes = [min(batch, n_paths - b * batch) for b in range(n_batches)]
    X = np.full(n_paths, phi.h, dtype=float)
    rec = {float(r): i for i, r in enumerate(r_grid)}
    eu2 = np.empty(r_grid.size)
    euxx2 = np.empty(r_grid.size)
    se = np.empty(r_grid.size)
    x0, dx = phi.x_grid[0], phi.dx
    for t_i, r in enumerate(times):
        need_rec = float(r) in rec
        alpha = phi.alpha_at(r) if r < 1 else 1.0
        need_drift = t_i + 1 < times.size and alpha >= M_FLOOR
        if need_rec or need_drift:
            sl = phi.slice(r)
            d1 = hermite_interp(x0, dx, sl[1], sl[2], X)
        if need_rec:
            d3 = np.gradient(sl[2], dx, edge_order=2)
            d2 = hermite_interp(x0, dx, sl[2], d3, X)
            u2 = d1 * d1
            i = rec[float(r)]
            eu2[i] = u2.mean()
            euxx2[i] = np.mean(d2 * d2)
            se[i] = u2.std(ddof=1) / math.sqrt(n_paths)
        if t_i + 1 == times.size:
            break
        r1 = times[t_i + 1]
        noise = np.concatenate([g.standard_normal(s) for g, s in zip(gens, sizes)])
        step_sd = math.sqrt(max(xi(r1, 1) - xi(r, 1), 0.0))
        if need_drift:
            X = X + alpha * xi(r, 2) * d1 * (r1 - r) + step_sd * noise
        else:
            X = X + step_sd * noise
    return eu2, euxx2, se


def second_moment_curve(phi: PhiSolution, mode: str = "deterministic", n_r: int = 201,
                        extra_r=(), n_paths: int = 100_000, n_steps: int = 1000,
                        seed: int = 0) -> MomentCurve:
    """``E u(r)^2`` and ``E Phi_xx(r, X(r))^2`` for the solution ``phi``.

    Parameters
    ----------
    phi : PhiSolution
    mode : {"deterministic", "monte-carlo"}
    n_r : int
        Number of uniform points in [0, 1]; atoms and ``extra_r`` are added.
    n_paths, n_steps, seed
        Monte Carlo settings (ignored in deterministic mode).

    Raises
    ------
    GridOverflowError
        If the transported density loses more than ``1e-6`` of its mass.
    """
    if phi.mixture.is_zero:
        raise ZeroMixtureError("second moments need a nonzero mixture")
    r_grid = _r_grid(phi, n_r, extra_r)
    if mode == "deterministic":
        eu2, euxx2, mass = _deterministic(phi, r_grid)
        return MomentCurve(r_grid, eu2, euxx2, "deterministic", None, mass)
    if mode in ("monte-carlo", "mc"):
        if n_paths < 2 or n_steps < 1:
            raise ConfigurationError("Monte Carlo needs n_paths >= 2 and n_steps >= 1")
        eu2, euxx2, se = _monte_carlo(phi, r_grid, n_paths, n_steps, seed)
        return MomentCurve(r_grid, eu2, euxx2, "monte-carlo", se)
    raise ConfigurationError(f"unknown mode {mode!r}")


class TailIntegral:
    """``C(q) = int_q^1 zeta(r) (E u(r)^2 - r) dr`` from a moment curve.

    ``E u^2`` is reconstructed by cubic Hermite interpolation using its exact
    slope ``zeta E Phi_xx^2``; each piece is integrated with 8-point
    Gauss-Legendre.
    """

    def __init__(self, curve: MomentCurve, mixture: MixtureSpec):
        self.r = curve.r_grid
        self.y = curve.eu2
        self.dy = np.asarray(mixture(self.r, 2)) * curve.euxx2
        self.xi = mixture
        pieces = np.array([self._piece(i, self.r[i], self.r[i + 1])
                           for i in range(self.r.size - 1)])
        self.tail = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])

    def _interp(self, i, r):
        r0, r1 = self.r[i], self.r[i + 1]
        hh = r1 - r0
        s = (r - r0) / hh
        s2, s3 = s * s, s * s * s
        return ((2 * s3 - 3 * s2 + 1) * self.y[i] + (s3 - 2 * s2 + s) * hh * self.dy[i]
                + (-2 * s3 + 3 * s2) * self.y[i + 1] + (s3 - s2) * hh * self.dy[i + 1])

    def _piece(self, i, lo, hi):
        if hi <= lo:
            return 0.0
        rr = 0.5 * (hi - lo) * _GL_X + 0.5 * (hi + lo)
        f = np.asarray(self.xi(rr, 2)) * (self._interp(i, rr) - rr)
        return 0.5 * (hi - lo) * float(f @ _GL_W)

    def __call__(self, q: float) -> float:
        q = float(np.clip(q, 0.0, 1.0))
        if q >= 1.0:
            return 0.0
        i = int(np.searchsorted(self.r, q, side="right") - 1)
        i = min(max(i, 0), self.r.size - 2)
        return self._piece(i, q, self.r[i + 1]) + float(self.tail[i + 1])

    def eu2_at(self, q: float) -> float:
        i = int(np.searchsorted(self.r, q, side="right") - 1)
        i = min(max(i, 0), self.r.size - 2)
        return float(self._interp(i, q))


def directional_derivative(mu0: AtomicMeasure, mu: AtomicMeasure, mixture: MixtureSpec,
                           h: float = 0.0, curve: MomentCurve | None = None,
                           tail: TailIntegral | None = None) -> float:
    """Derivative of ``t -> P((1-t) mu0 + t mu)`` at ``t = 0``.

    Equals ``(1/2) int zeta (alpha_mu - alpha_mu0)(E u^2 - r) dr`` where ``u``
    is the control process of ``mu0``.
    """
    if tail is None:
        if curve is None:
            curve = second_moment_curve(solve_phi(mu0, mixture, h))
        tail = TailIntegral(curve, mixture)
    # alpha_nu = sum w_i 1[r >= q_i] so int zeta alpha_nu g = sum w_i C(q_i)
    c_mu = sum(wi * tail(qi) for qi, wi in zip(mu.atoms, mu.weights))
    c_0 = sum(wi * tail(qi) for qi, wi in zip(mu0.atoms, mu0.weights))
    return 0.5 * (c_mu - c_0)


@dataclass(frozen=True, eq=False)
class CriterionReport:
    q_grid: np.ndarray
    derivative_values: np.ndarray
    min_value: float
    verdict: str
    worst_q: float
    tol: float
    curve: MomentCurve | None = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self):
        return {"q_grid": self.q_grid.tolist(),
                "derivative_values": self.derivative_values.tolist(),
                "min_value": self.min_value, "verdict": self.verdict,
                "worst_q": self.worst_q, "tol": self.tol}


def check_parisi_criterion(mu0: AtomicMeasure, mixture: MixtureSpec, h: float = 0.0,
                           q_grid_n: int = 21, grid: GridParams | None = None,
                           tol: float = CRITERION_TOL, n_r: int = 201) -> CriterionReport:
    """Test ``d/dt P((1-t) mu0 + t delta_q) >= -tol`` on a uniform ``q`` grid.

    Only Dirac directions are needed: the derivative is linear in the
    direction measure.
    """
    if mixture.is_zero:
        raise ZeroMixtureError("criterion needs a nonzero mixture")
    if q_grid_n < 11:
        raise ConfigurationError("q_grid_n must be at least 11")
    q_grid = np.linspace(0.0, 1.0, q_grid_n)
    phi = solve_phi(mu0, mixture, h, grid)
    curve = second_moment_curve(phi, n_r=n_r, extra_r=q_grid)
    tail = TailIntegral(curve, mixture)
    c_0 = sum(wi * tail(qi) for qi, wi in zip(mu0.atoms, mu0.weights))
    vals = np.array([0.5 * (tail(q) - c_0) for q in q_grid])
    i = int(np.argmin(vals))
    verdict = "pass" if vals[i] >= -tol else "fail"
    return CriterionReport(q_grid, vals, float(vals[i]), verdict, float(q_grid[i]), tol, curve)


@dataclass(frozen=True)
class SupportReport:
    q: float
    eq_gap: float
    ineq_slack: float
    valid: bool


def check_support_conditions(mu: AtomicMeasure, mixture: MixtureSpec, h: float, q: float,
                             grid: GridParams | None = None,
                             curve: MomentCurve | None = None) -> SupportReport:
    """``E u(q)^2 - q`` and ``1 - zeta(q) E Phi_xx(q, X(q))^2`` at a point ``q``.

    Both vanish / are nonnegative at points of the support of a Parisi
    measure.  ``q = 1`` is reported as invalid.
    """
    if q >= 1.0:
        return SupportReport(float(q), float("nan"), float("nan"), False)
    if curve is None or not np.any(np.isclose(curve.r_grid, q, atol=0, rtol=0)):
        curve = second_moment_curve(solve_phi(mu, mixture, h, grid), n_r=21, extra_r=[q])
    i = int(np.argmin(np.abs(curve.r_grid - q)))
    return SupportReport(float(q), float(curve.eu2[i] - q),
                         float(1.0 - mixture(q, 2) * curve.euxx2[i]), True)


@dataclass(frozen=True)
class ATReport:
    q_root: float
    roots: tuple
    brackets: tuple
    lhs_ineq: float
    rs_consistent: bool


def rs_fixed_point_map(mixture: MixtureSpec, h: float, q, order: int = 80):
    """``E tanh^2(z sqrt(xi'(q)) + h)``."""
    z, w = gh_rule(order)
    sd = np.sqrt(np.asarray(mixture(np.asarray(q, float), 1)))
    t = np.tanh(np.multiply.outer(sd, z) + h)
    return (t * t) @ w


def at_line_check(mixture: MixtureSpec, h: float = 0.0, quad_order: int = 80,
                  scan_n: int = 2001) -> ATReport:
    """Replica-symmetric fixed point and the stability inequality.

    Solves ``E tanh^2(z sqrt(xi'(q)) + h) = q``.  With ``h != 0`` the largest
    root is reported; with ``h = 0`` the root ``q = 0`` is used (the order
    parameter then charges the origin), and all roots are listed.  The
    inequality is ``zeta(q) E cosh^{-4}(z sqrt(xi'(q)) + h) <= 1``.

    Raises
    ------
    ConfigurationError
        If ``quad_order < 40``.
    NumericalRootError
        If ``h != 0`` and no sign change is found.
    """
    if quad_order < 40:
        raise ConfigurationError("quad_order must be at least 40")
    g = lambda q: float(rs_fixed_point_map(mixture, h, q, quad_order)) - q  # noqa: E731
    grid = np.linspace(0.0, 1.0, scan_n)
    vals = rs_fixed_point_map(mixture, h, grid, quad_order) - grid
    roots, brackets = [], []
    if vals[0] == 0.0:
        roots.append(0.0)
        brackets.append((0.0, 0.0))
    for i in range(scan_n - 1):
        lo, hi = grid[i], grid[i + 1]
        if vals[i] == 0.0 and i > 0:
            roots.append(float(lo))
            brackets.append((float(lo), float(lo)))
        elif vals[i] * vals[i + 1] < 0:
            roots.append(float(brentq(g, lo, hi, xtol=1e-15, rtol=1e-15)))
            brackets.append((float(lo), float(hi)))
    if h == 0:
        q_root = 0.0
        if 0.0 not in roots:
            roots.insert(0, 0.0)
            brackets.insert(0, (0.0, 0.0))
    else:
        if not roots:
            raise NumericalRootError("no sign change of the fixed-point equation on [0, 1]")
        q_root = max(roots)
    z, w = gh_rule(quad_order)
    s2 = sech2(z * math.sqrt(mixture(q_root, 1)) + h)
    lhs = float(mixture(q_root, 2) * (s2 * s2 @ w))
    return ATReport(q_root, tuple(roots), tuple(brackets), lhs, bool(lhs <= 1 + 1e-12))
