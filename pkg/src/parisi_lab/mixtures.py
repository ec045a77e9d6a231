"""Mixture functions xi(s) = sum_p beta_p^2 s^p and structural checks on them.

A mixture is stored by its coefficients ``{p: beta_p^2}``.  The helpers here
evaluate xi and its first two derivatives, the auxiliary function
``theta(s) = s xi'(s) - xi(s)`` and run grid checks (convexity, monotone
ratios, domination of a cross mixture) used as hypotheses elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import DegenerateDenominatorError, DomainError, ZeroMixtureError

TOL_CONVEX = 1e-10
TOL_MONO = 1e-10
DEFAULT_GRID_N = 2001
_DOMAIN_SLACK = 1e-12


@dataclass(frozen=True)
class MixtureSpec:
    """Coefficients of a mixture function.

    Parameters
    ----------
    coeffs : mapping of int to float
        Degree ``p >= 1`` mapped to ``beta_p^2 >= 0``.
    allow_zero : bool
        Permit the identically zero mixture (used for the non-interacting case).
    """

    coeffs: Mapping[int, float]
    allow_zero: bool = False
    _items: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        items = []
        for p, c in dict(self.coeffs).items():
            p_int = int(p)
            if p_int != float(p) or p_int < 1:
                raise ValueError(f"degree must be a positive integer, got {p!r}")
            c = float(c)
            if not np.isfinite(c) or c < 0:
                raise ValueError(f"coefficient for degree {p_int} must be finite and >= 0")
            if c > 0:
                items.append((p_int, c))
        items.sort()
        if not items and not self.allow_zero:
            raise ZeroMixtureError("mixture has no positive coefficient")
        object.__setattr__(self, "coeffs", dict(items))
        object.__setattr__(self, "_items", tuple(items))

    # equality/hash on the cleaned coefficients
    def __eq__(self, other):
        if not isinstance(other, MixtureSpec):
            return NotImplemented
        return self._items == other._items

    def __hash__(self):
        return hash(self._items)

    @property
    def is_zero(self) -> bool:
        return not self._items

    @property
    def is_even(self) -> bool:
        return all(p % 2 == 0 for p, _ in self._items)

    def __call__(self, s, order: int = 0):
        return eval_mixture(self, s, order)

    def theta(self, s):
        return theta_eval(self, s)

    def scaled(self, factor: float) -> "MixtureSpec":
        return MixtureSpec({p: factor * c for p, c in self._items}, allow_zero=True)

    def to_dict(self) -> dict:
        return {"coeffs": {str(p): c for p, c in self._items}}

    @classmethod
    def from_dict(cls, data: Mapping, allow_zero: bool = False) -> "MixtureSpec":
        coeffs = data["coeffs"] if "coeffs" in data else data
        return cls({int(k): float(v) for k, v in coeffs.items()}, allow_zero=allow_zero)


def sk(beta: float) -> MixtureSpec:
    """Sherrington-Kirkpatrick mixture ``beta^2 s^2 / 2``."""
    return MixtureSpec({2: beta * beta / 2.0}, allow_zero=(beta == 0))


def eval_mixture(spec: MixtureSpec, s, order: int = 0):
    """Evaluate xi (``order=0``), xi' (1) or xi'' (2) at ``s`` in [-1, 1].

    Examples
    --------
    >>> eval_mixture(MixtureSpec({2: 0.5}), 1.0, 2)
    1.0
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    arr = np.asarray(s, dtype=float)
    if np.any(np.abs(arr) > 1 + _DOMAIN_SLACK) or np.any(~np.isfinite(arr)):
        raise DomainError("mixture evaluated outside [-1, 1]")
    out = np.zeros_like(arr)
    for p, c in spec._items:
        if order == 0:
            out = out + c * arr**p
        elif order == 1:
            out = out + c * p * arr ** (p - 1)
        elif p >= 2:
            out = out + c * p * (p - 1) * arr ** (p - 2)
    if out.ndim == 0:
        return float(out)
    return out


def theta_eval(spec: MixtureSpec, s):
    """``theta(s) = s xi'(s) - xi(s)``; note ``theta' = s xi''``."""
    arr = np.asarray(s, dtype=float)
    out = arr * eval_mixture(spec, arr, 1) - eval_mixture(spec, arr, 0)
    if np.ndim(out) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class ConvexityReport:
    convex: bool
    witness: float | None
    min_value: float


def check_convexity(spec: MixtureSpec, grid_n: int = DEFAULT_GRID_N) -> ConvexityReport:
    """Check ``xi'' >= -tol`` on a uniform grid of [-1, 1]."""
    s = np.linspace(-1.0, 1.0, grid_n)
    d2 = np.asarray(eval_mixture(spec, s, 2))
    i = int(np.argmin(d2))
    convex = bool(d2[i] >= -TOL_CONVEX)
    return ConvexityReport(convex, None if convex else float(s[i]), float(d2[i]))


@dataclass(frozen=True)
class MonotoneReport:
    monotone: bool
    witness: float | None
    ratio: np.ndarray = field(repr=False)
    s_grid: np.ndarray = field(repr=False)


def ratio_parts(num: MixtureSpec, den_extra: MixtureSpec, reflect_den: bool, s):
    """Numerator ``xi''(s)`` and denominator ``xi''(s) + xi0''(+-s)`` of the ratio."""
    s = np.asarray(s, dtype=float)
    top = np.asarray(eval_mixture(num, s, 2))
    extra = np.asarray(eval_mixture(den_extra, -s if reflect_den else s, 2))
    return top, top + extra


def check_monotone_ratio(num: MixtureSpec, den_extra: MixtureSpec,
                         reflect_den: bool = True,
                         grid_n: int = DEFAULT_GRID_N) -> MonotoneReport:
    """Check that ``s -> xi''(s)/(xi''(s) + xi0''(+-s))`` is nondecreasing on (0, 1].

    ``reflect_den=True`` uses ``xi0''(-s)`` in the denominator (negative
    overlaps), ``False`` uses ``xi0''(s)``.

    Raises
    ------
    DegenerateDenominatorError
        If the denominator is not strictly positive on the grid.
    """
    s = np.linspace(0.0, 1.0, grid_n)[1:]
    top, den = ratio_parts(num, den_extra, reflect_den, s)
    if np.any(den <= 0):
        bad = float(s[np.argmax(den <= 0)])
        raise DegenerateDenominatorError(f"denominator vanishes at s={bad:.6g}")
    r = top / den
    dr = np.diff(r)
    i = int(np.argmin(dr)) if dr.size else 0
    monotone = bool(dr.size == 0 or dr[i] >= -TOL_MONO)
    return MonotoneReport(monotone, None if monotone else float(s[i + 1]), r, s)


@dataclass(frozen=True)
class CouplingSpec:
    """Two replicas with self-mixture ``xi``, cross mixture ``xi0``, field ``h``
    and constrained overlap ``q``."""

    xi: MixtureSpec
    xi0: MixtureSpec
    h: float = 0.0
    q: float = 0.0

    def __post_init__(self):
        if abs(self.q) > 1 + _DOMAIN_SLACK:
            raise DomainError("overlap q must lie in [-1, 1]")
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "q", float(np.clip(self.q, -1.0, 1.0)))

    @property
    def iota(self) -> int:
        return 1 if self.q >= 0 else -1

    @property
    def identical(self) -> bool:
        return self.xi == self.xi0

    def with_q(self, q: float) -> "CouplingSpec":
        return CouplingSpec(self.xi, self.xi0, self.h, q)

    def to_dict(self) -> dict:
        return {"xi": self.xi.to_dict(), "xi0": self.xi0.to_dict(),
                "h": self.h, "q": self.q}


@dataclass(frozen=True)
class DominanceReport:
    strict: bool
    weak: bool
    witness: float | None


def check_dominance(coupling: CouplingSpec, grid_n: int = DEFAULT_GRID_N) -> DominanceReport:
    """Compare ``xi0''(s)`` with ``xi''(|s|)`` over [-1, 1].

    ``weak`` holds when ``xi0'' <= xi''(|.|) + tol`` everywhere; ``strict``
    when the inequality is strict at every grid point except ``s = 0``.
    The witness is the grid point with the largest ``xi0'' - xi''(|s|)``.
    """
    s = np.linspace(-1.0, 1.0, grid_n)
    gap = np.asarray(eval_mixture(coupling.xi0, s, 2)) - np.asarray(
        eval_mixture(coupling.xi, np.abs(s), 2))
    weak = bool(np.all(gap <= TOL_CONVEX))
    off = np.abs(s) > 0.5 / (grid_n - 1)
    strict = bool(np.all(gap[off] < 0))
    if strict:
        witness = None
    else:
        masked = np.where(off, gap, -np.inf)
        witness = float(s[int(np.argmax(masked))])
    return DominanceReport(strict, weak, witness)
