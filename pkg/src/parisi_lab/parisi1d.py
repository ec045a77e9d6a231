"""One-replica Parisi PDE for atomic order parameters, and the Parisi functional.

For ``mu`` with distribution function ``alpha`` the solution ``Phi_mu(s, x)``
of

    d_s Phi = -(xi''(s)/2) (Phi_xx + alpha(s) Phi_x^2),   Phi(1, x) = log cosh x

is computed segment by segment with the Hopf-Cole formula

    Phi(a, x) = (1/m) log E exp(m Phi(b, x + sigma z)),  sigma^2 = xi'(b) - xi'(a),

on every interval ``[a, b)`` where ``alpha = m`` is constant (plain expectation
when ``m`` is numerically zero).  Derivatives in ``x`` are tilted averages, so
no finite differences are involved.  :func:`solve_phi_fd` is an independent
explicit finite-difference solver used as a cross-check.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from ._kernels import M_FLOOR, LOG2, gh_rule, hermite_interp, log_cosh, sech2, tilted_average
from .errors import ConfigurationError, GridOverflowError
from .measures import AtomicMeasure
from .mixtures import MixtureSpec, theta_eval

ESCAPE_TOL = 1e-8
TOP_TOL = 1e-12


@dataclass(frozen=True)
class GridParams:
    """Spatial grid ``[-L, L]`` with spacing ``dx`` and quadrature order.

    ``None`` entries take defaults ``L = |h| + 6 sqrt(xi'(1))`` (at least
    ``|h| + 1``) and ``dx = 0.01 sqrt(max(xi'(1), 1))``; ``pad`` is added to
    the default half-width.
    """

    L: float | None = None
    dx: float | None = None
    gh_order: int = 80
    pad: float = 0.0

    def resolve(self, mixture: MixtureSpec, h: float):
        v1 = float(mixture(1.0, 1))
        L = self.L
        if L is None:
            L = max(abs(h) + 6.0 * math.sqrt(v1), abs(h) + 1.0) + self.pad
        dx = self.dx if self.dx is not None else 0.01 * math.sqrt(max(v1, 1.0))
        if L <= 0 or dx <= 0:
            raise ConfigurationError("grid half-width and spacing must be positive")
        n = int(round(2 * L / dx)) + 1
        if n < 5:
            raise ConfigurationError("grid has fewer than 5 points")
        return float(L), 2 * L / (n - 1), n


def escape_mass(mixture: MixtureSpec, h: float, L: float) -> float:
    """Mass of ``N(h, xi'(1))`` outside ``[-L, L]``."""
    sd = math.sqrt(float(mixture(1.0, 1)))
    if sd == 0:
        return 0.0 if abs(h) <= L else 1.0
    return float(ndtr((-L - h) / sd) + ndtr((h - L) / sd))


class TopSource:
    """Closed form ``log cosh y + c`` valid where ``alpha = 1``."""

    def __init__(self, const: float):
        self.const = float(const)

    def __call__(self, y):
        return log_cosh(y) + self.const, np.tanh(y), sech2(y)


class GridSource:
    """Cubic Hermite reconstruction of a slice known on a uniform grid."""

    def __init__(self, x0, dx, phi, dphi, ddphi):
        self.x0, self.dx = float(x0), float(dx)
        self.phi, self.dphi, self.ddphi = phi, dphi, ddphi
        self.d3 = np.gradient(ddphi, dx, edge_order=2)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        shape = y.shape
        flat = y.ravel()
        a = hermite_interp(self.x0, self.dx, self.phi, self.dphi, flat)
        b = hermite_interp(self.x0, self.dx, self.dphi, self.ddphi, flat)
        c = hermite_interp(self.x0, self.dx, self.ddphi, self.d3, flat)
        return a.reshape(shape), b.reshape(shape), c.reshape(shape)


def hopf_cole_step(source, m: float, var: float, targets, order: int = 80):
    """Value, slope and curvature of ``(1/m) log E exp(m A(x + sqrt(var) z))``."""
    targets = np.asarray(targets, dtype=float)
    z, w = gh_rule(order)
    if var <= 0:
        return source(targets)
    y = targets[..., None] + math.sqrt(var) * z
    A, dA, ddA = source(y)
    m_eff = m if m >= M_FLOOR else 0.0
    L, (d1, d2) = tilted_average(A, w, m_eff, (dA, ddA + m_eff * dA * dA))
    return L, d1, d2 - m_eff * d1 * d1


@dataclass(frozen=True, eq=False)
class PhiSolution:
    """Slices of ``Phi_mu`` at the nodes ``{0} U atoms U {1}``.

    Arrays ``phi``, ``dphi``, ``ddphi`` have shape ``(len(s_nodes), len(x_grid))``.
    Values at intermediate times or off-grid points come from :meth:`evaluate`,
    which applies the exact segment formula from the node above.
    """

    x_grid: np.ndarray
    s_nodes: np.ndarray
    alphas: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    ddphi: np.ndarray
    measure: AtomicMeasure
    mixture: MixtureSpec
    h: float
    gh_order: int
    top_index: int
    _sources: dict = field(default_factory=dict, repr=False)

    @property
    def dx(self) -> float:
        return float(self.x_grid[1] - self.x_grid[0])

    def source(self, j: int):
        if j not in self._sources:
            if j >= self.top_index:
                s = self.s_nodes[j]
                const = 0.5 * (self.mixture(1.0, 1) - self.mixture(s, 1))
                self._sources[j] = TopSource(const)
            else:
                self._sources[j] = GridSource(self.x_grid[0], self.dx, self.phi[j],
                                              self.dphi[j], self.ddphi[j])
        return self._sources[j]

    def alpha_at(self, s: float) -> float:
        return float(self.measure.cdf(s))

    def evaluate(self, s: float, x):
        """``(Phi, Phi_x, Phi_xx)`` at time ``s`` and points ``x``."""
        s = float(s)
        x = np.asarray(x, dtype=float)
        t_top = self.s_nodes[self.top_index]
        if s >= t_top:
            const = 0.5 * (self.mixture(1.0, 1) - self.mixture(min(s, 1.0), 1))
            return TopSource(const)(x)
        j = int(np.searchsorted(self.s_nodes, s, side="left"))
        if self.s_nodes[j] == s:
            return self.source(j)(x)
        var = float(self.mixture(self.s_nodes[j], 1) - self.mixture(s, 1))
        return hopf_cole_step(self.source(j), self.alphas[j - 1], var, x, self.gh_order)

    def slice(self, s: float):
        return self.evaluate(s, self.x_grid)

    def value_at_start(self) -> float:
        """``Phi_mu(0, h)``."""
        return float(self.evaluate(0.0, np.array([self.h]))[0][0])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["s", "x", "phi", "dphi", "ddphi"])
            for j, s in enumerate(self.s_nodes):
                for x, a, b, c in zip(self.x_grid, self.phi[j], self.dphi[j], self.ddphi[j]):
                    wr.writerow([repr(float(s)), repr(float(x)), repr(float(a)),
                                 repr(float(b)), repr(float(c))])


def _top_index(alphas: np.ndarray) -> int:
    """First node from which ``alpha = 1`` up to time 1."""
    idx = len(alphas)
    for j in range(len(alphas) - 1, -1, -1):
        if alphas[j] >= 1 - TOP_TOL:
            idx = j
        else:
            break
    return idx


def _grid_points(mixture, h, grid):
    grid = grid or GridParams()
    L, dx, n = grid.resolve(mixture, h)
    mass = escape_mass(mixture, h, L)
    if mass > ESCAPE_TOL:
        raise GridOverflowError(
            f"grid half-width L={L:.4g} leaks mass {mass:.3g} of N(h, xi'(1))")
    return grid, np.linspace(-L, L, n)


def solve_phi(measure: AtomicMeasure, mixture: MixtureSpec, h: float = 0.0,
              grid: GridParams | None = None) -> PhiSolution:
    """Solve the Parisi PDE for an atomic ``measure`` on a uniform grid.

    Raises
    ------
    GridOverflowError
        If the grid is too narrow for the Gaussian spread ``xi'(1)``.
    """
    grid, x = _grid_points(mixture, h, grid)
    nodes, alphas = measure.partition()
    n = nodes.size
    top = _top_index(alphas)
    phi = np.empty((n, x.size))
    dphi = np.empty_like(phi)
    ddphi = np.empty_like(phi)
    sol = PhiSolution(x, nodes, alphas, phi, dphi, ddphi, measure, mixture, float(h),
                      grid.gh_order, top)
    v1 = mixture(1.0, 1)
    for j in range(n - 1, -1, -1):
        if j >= top:
            const = 0.5 * (v1 - mixture(nodes[j], 1))
            phi[j], dphi[j], ddphi[j] = TopSource(const)(x)
            continue
        var = float(mixture(nodes[j + 1], 1) - mixture(nodes[j], 1))
        phi[j], dphi[j], ddphi[j] = hopf_cole_step(sol.source(j + 1), alphas[j], var, x,
                                                   grid.gh_order)
    return sol


def free_energy_term(measure: AtomicMeasure, mixture: MixtureSpec) -> float:
    """``(1/2) int_0^1 alpha(s) s xi''(s) ds`` for piecewise constant ``alpha``."""
    nodes, alphas = measure.partition()
    th = np.asarray(theta_eval(mixture, nodes))
    return 0.5 * float(np.sum(alphas * np.diff(th)))


def parisi_functional(measure: AtomicMeasure, mixture: MixtureSpec, h: float = 0.0,
                      grid: GridParams | None = None, phi: PhiSolution | None = None) -> float:
    """``log 2 + Phi_mu(0, h) - (1/2) int alpha s xi'' ds``."""
    if phi is None:
        phi = solve_phi(measure, mixture, h, grid)
    return LOG2 + phi.value_at_start() - free_energy_term(measure, mixture)


def phi_at_start(measure: AtomicMeasure, mixture: MixtureSpec, h: float,
                 grid: GridParams | None = None) -> float:
    """``Phi_mu(0, h)`` without building the full slice at time 0."""
    grid, x = _grid_points(mixture, h, grid)
    nodes, alphas = measure.partition()
    top = _top_index(alphas)
    v1 = mixture(1.0, 1)
    if top == 0:
        return float(log_cosh(h) + 0.5 * v1)
    src = None
    for j in range(nodes.size - 1, 0, -1):
        if j >= top:
            src = TopSource(0.5 * (v1 - mixture(nodes[j], 1)))
            continue
        var = float(mixture(nodes[j + 1], 1) - mixture(nodes[j], 1))
        vals = hopf_cole_step(src, alphas[j], var, x, grid.gh_order)
        src = GridSource(x[0], x[1] - x[0], *vals)
    var = float(mixture(nodes[1], 1) - mixture(nodes[0], 1))
    return float(hopf_cole_step(src, alphas[0], var, np.array([h]), grid.gh_order)[0][0])


def parisi_value(measure: AtomicMeasure, mixture: MixtureSpec, h: float = 0.0,
                 grid: GridParams | None = None) -> float:
    """Same as :func:`parisi_functional`, skipping the time-0 grid slice."""
    return LOG2 + phi_at_start(measure, mixture, h, grid) - free_energy_term(measure, mixture)


def rs_closed_form(q: float, mixture: MixtureSpec, h: float, s, x, order: int = 80):
    """``Phi_{delta_q}(s, x)`` in closed form.

    For ``s >= q`` it is ``(xi'(1) - xi'(s))/2 + log cosh x``; for ``s < q`` it
    is ``(xi'(1) - xi'(q))/2 + E log cosh(x + z sqrt(xi'(q) - xi'(s)))``.
    ``h`` only enters through the point ``x`` and is kept for symmetry with the
    other solvers.
    """
    x = np.asarray(x, dtype=float)
    v1 = mixture(1.0, 1)
    if s >= q:
        return 0.5 * (v1 - mixture(s, 1)) + log_cosh(x)
    z, w = gh_rule(order)
    sd = math.sqrt(mixture(q, 1) - mixture(s, 1))
    return 0.5 * (v1 - mixture(q, 1)) + log_cosh(x[..., None] + sd * z) @ w


@dataclass(frozen=True, eq=False)
class FDSolution:
    x_grid: np.ndarray
    s_nodes: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    ddphi: np.ndarray
    dt: float
    n_steps: int


def max_curvature(mixture: MixtureSpec, n: int = 2001) -> float:
    return float(np.max(mixture(np.linspace(0.0, 1.0, n), 2)))


def solve_phi_fd(measure: AtomicMeasure, mixture: MixtureSpec, h: float = 0.0,
                 grid: GridParams | None = None, dt: float | None = None,
                 safety: float = 1.0) -> FDSolution:
    """Explicit central-difference solver marching backward from ``s = 1``.

    The step must satisfy ``dt <= dx^2 / (2 max xi'' safety)``; by default the
    largest admissible step is used.  Steps are aligned with the nodes.

    Raises
    ------
    ConfigurationError
        If ``dt`` violates the stability bound.
    """
    grid, x = _grid_points(mixture, h, grid)
    dx = x[1] - x[0]
    zmax = max_curvature(mixture)
    dt_max = dx * dx / (2.0 * max(zmax, 1e-300) * safety) if zmax > 0 else 1.0
    if dt is None:
        dt = dt_max
    if dt > dt_max * (1 + 1e-12):
        raise ConfigurationError(f"time step {dt:.3g} exceeds stability bound {dt_max:.3g}")
    nodes, alphas = measure.partition()
    n = nodes.size
    out = np.empty((n, x.size))
    u = np.asarray(log_cosh(x))
    out[-1] = u
    total = 0
    inv2 = 1.0 / (dx * dx)
    for j in range(n - 2, -1, -1):
        a, b = nodes[j], nodes[j + 1]
        steps = max(1, int(math.ceil((b - a) / dt - 1e-9)))
        k = (b - a) / steps
        m = alphas[j]
        for i in range(steps):
            s = b - i * k
            uxx = np.empty_like(u)
            uxx[1:-1] = (u[2:] - 2 * u[1:-1] + u[:-2]) * inv2
            uxx[0], uxx[-1] = uxx[1], uxx[-2]
            ux = np.gradient(u, dx, edge_order=2)
            u = u + k * 0.5 * mixture(s, 2) * (uxx + m * ux * ux)
        total += steps
        out[j] = u
    d1 = np.gradient(out, dx, axis=1, edge_order=2)
    d2 = np.gradient(d1, dx, axis=1, edge_order=2)
    return FDSolution(x, nodes, out, d1, d2, float(dt), total)
