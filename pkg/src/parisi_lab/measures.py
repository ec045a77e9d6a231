"""Atomic probability measures on [0, 1] and their distribution functions.

The functional order parameter is handled through atomic measures.  A measure
``mu`` is identified with its right-continuous distribution function
``alpha(s) = mu([0, s])``; distances are the L1 distance between distribution
functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidCDFError, InvalidMeasureError

MERGE_TOL = 1e-10
WEIGHT_FLOOR = 1e-12
SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """Finitely supported probability measure on [0, 1].

    Use :meth:`create` to build one from raw (possibly unsorted, duplicated or
    tiny-weight) atoms; the constructor itself only validates.
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if a.size == 0 or a.size != w.size:
            raise InvalidMeasureError("atoms and weights must be nonempty and of equal length")
        if np.any(a < 0) or np.any(a > 1) or np.any(~np.isfinite(a)):
            raise InvalidMeasureError("atoms must lie in [0, 1]")
        if np.any(np.diff(a) <= 0):
            raise InvalidMeasureError("atoms must be strictly increasing")
        if np.any(w <= WEIGHT_FLOOR):
            raise InvalidMeasureError(f"weights must exceed {WEIGHT_FLOOR}")
        if abs(w.sum() - 1.0) > SUM_TOL * max(1, a.size):
            raise InvalidMeasureError(f"weights sum to {w.sum()!r}, expected 1")
        a.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "weights", w)

    @classmethod
    def create(cls, atoms: Sequence[float], weights: Sequence[float] | None = None,
               weight_floor: float = WEIGHT_FLOOR) -> "AtomicMeasure":
        """Sort, merge atoms closer than ``MERGE_TOL``, move weights below
        ``weight_floor`` to the nearest surviving atom and renormalize."""
        a = np.asarray(atoms, dtype=float).ravel()
        if weights is None:
            w = np.full(a.size, 1.0 / max(a.size, 1))
        else:
            w = np.asarray(weights, dtype=float).ravel()
        if a.size == 0 or a.size != w.size:
            raise InvalidMeasureError("atoms and weights must be nonempty and of equal length")
        if np.any(w < 0) or np.any(~np.isfinite(w)) or w.sum() <= 0:
            raise InvalidMeasureError("weights must be finite, nonnegative, not all zero")
        if np.any(a < -MERGE_TOL) or np.any(a > 1 + MERGE_TOL):
            raise InvalidMeasureError("atoms must lie in [0, 1]")
        a = np.clip(a, 0.0, 1.0)
        order = np.argsort(a, kind="stable")
        a, w = a[order], w[order]
        # merge near-coincident atoms (weighted position)
        merged_a, merged_w = [a[0]], [w[0]]
        for x, y in zip(a[1:], w[1:]):
            if x - merged_a[-1] < MERGE_TOL:
                tot = merged_w[-1] + y
                if tot > 0:
                    merged_a[-1] = (merged_a[-1] * merged_w[-1] + x * y) / tot
                merged_w[-1] = tot
            else:
                merged_a.append(x)
                merged_w.append(y)
        a = np.array(merged_a)
        w = np.array(merged_w)
        w = w / w.sum()
        # redistribute tiny weights to nearest neighbour, smallest first
        while a.size > 1 and np.min(w) <= weight_floor:
            j = int(np.argmin(w))
            if j == 0:
                k = 1
            elif j == a.size - 1:
                k = j - 1
            else:
                k = j - 1 if a[j] - a[j - 1] <= a[j + 1] - a[j] else j + 1
            w[k] += w[j]
            a = np.delete(a, j)
            w = np.delete(w, j)
        w = w / w.sum()
        return cls(a, w)

    @classmethod
    def dirac(cls, q: float) -> "AtomicMeasure":
        return cls(np.array([float(q)]), np.array([1.0]))

    @property
    def k(self) -> int:
        """Number of atoms minus one (replica-symmetry-breaking level)."""
        return self.atoms.size - 1

    def cdf(self, s):
        """Right-continuous distribution function ``alpha(s) = mu([0, s])``."""
        s_arr = np.asarray(s, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(self.weights)])
        cum[-1] = 1.0
        idx = np.searchsorted(self.atoms, s_arr, side="right")
        out = cum[idx]
        if out.ndim == 0:
            return float(out)
        return out

    __call__ = cdf

    def partition(self):
        """Nodes ``0 = t_0 < ... < t_n = 1`` (atoms plus endpoints) and the
        constant value of ``alpha`` on each ``[t_i, t_{i+1})``."""
        nodes = np.unique(np.concatenate([[0.0], self.atoms, [1.0]]))
        alphas = np.asarray(self.cdf(nodes[:-1]), dtype=float)
        return nodes, alphas

    def mix(self, other: "AtomicMeasure", t: float) -> "AtomicMeasure":
        """Convex combination ``(1 - t) self + t other``."""
        if not 0 <= t <= 1:
            raise ValueError("mixing parameter must lie in [0, 1]")
        a = np.concatenate([self.atoms, other.atoms])
        w = np.concatenate([(1 - t) * self.weights, t * other.weights])
        keep = w > 0
        return AtomicMeasure.create(a[keep], w[keep])

    def smallest_atom(self, weight_threshold: float = 1e-6) -> float:
        """Smallest atom carrying weight above ``weight_threshold``."""
        ok = self.weights > weight_threshold
        return float(self.atoms[ok][0]) if np.any(ok) else float(self.atoms[0])

    def to_dict(self) -> dict:
        return {"atoms": [float(x) for x in self.atoms],
                "weights": [float(x) for x in self.weights]}

    @classmethod
    def from_dict(cls, data) -> "AtomicMeasure":
        return cls.create(data["atoms"], data["weights"])

    def __repr__(self):
        pairs = ", ".join(f"{a:.6g}:{w:.6g}" for a, w in zip(self.atoms, self.weights))
        return f"AtomicMeasure({pairs})"


def cdf(measure: AtomicMeasure, s):
    return measure.cdf(s)


def distance(mu: AtomicMeasure, nu: AtomicMeasure) -> float:
    """Exact ``int_0^1 |alpha_mu - alpha_nu| ds``."""
    pts = np.unique(np.concatenate([[0.0, 1.0], mu.atoms, nu.atoms]))
    left = pts[:-1]
    diff = np.abs(np.asarray(mu.cdf(left)) - np.asarray(nu.cdf(left)))
    return float(np.sum(diff * np.diff(pts)))


def _check_cdf(fn: Callable, n_probe: int = 1001):
    s = np.linspace(0.0, 1.0, n_probe)
    vals = np.array([float(fn(x)) for x in s])
    if np.any(~np.isfinite(vals)) or np.any(vals < -1e-12) or np.any(vals > 1 + 1e-12):
        raise InvalidCDFError("distribution function must take values in [0, 1]")
    dv = np.diff(vals)
    if np.any(dv < -1e-12):
        bad = float(s[1:][np.argmin(dv)])
        raise InvalidCDFError(f"distribution function decreases near s={bad:.6g}")
    if abs(vals[-1] - 1.0) > 1e-12:
        raise InvalidCDFError("distribution function must equal 1 at s=1")


def _upper_quantile(fn: Callable, u: float, n_iter: int = 64) -> float:
    """``inf{s in [0,1]: fn(s) > u}`` by bisection (returns a point with fn > u)."""
    if float(fn(0.0)) > u:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        if float(fn(mid)) > u:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-15:
            break
    return hi


def _lower_quantile(fn: Callable, u: float, n_iter: int = 64) -> float:
    """``inf{s in [0,1]: fn(s) >= u}``."""
    if float(fn(0.0)) >= u:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        if float(fn(mid)) >= u:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-15:
            break
    return hi


def discretize(cdf_callable: Callable[[float], float], eps: float,
               weight_floor: float = WEIGHT_FLOOR, max_splits: int = 64) -> AtomicMeasure:
    """Atomic measure within L1 distance ``eps`` of the distribution ``cdf_callable``.

    The quantile function is cut into ``k = ceil(1/(2 eps))`` equal slices.
    Each slice becomes one atom at the midpoint of its quantile range, unless
    the slice contains a jump of the distribution function, in which case it
    is split at the jump level so that atoms of the input are reproduced.

    Raises
    ------
    InvalidCDFError
        If the callable is not a distribution function on [0, 1].
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    _check_cdf(cdf_callable)
    k = int(math.ceil(1.0 / (2.0 * eps)))
    atoms, weights = [], []
    for j in range(k):
        lo_u, hi_u = j / k, (j + 1) / k
        stack = [(lo_u, hi_u)]
        splits = 0
        while stack:
            a_u, b_u = stack.pop()
            left = _upper_quantile(cdf_callable, a_u)
            right = _lower_quantile(cdf_callable, b_u)
            c = float(cdf_callable(left))
            if right > left and a_u + 1e-9 < c < b_u - 1e-9 and splits < max_splits:
                # a jump at `left` covers [a_u, c]; keep it as its own atom
                splits += 1
                atoms.append(left)
                weights.append(c - a_u)
                stack.append((c, b_u))
                continue
            atoms.append(0.5 * (left + max(right, left)))
            weights.append(b_u - a_u)
    return AtomicMeasure.create(atoms, weights, weight_floor=weight_floor)
