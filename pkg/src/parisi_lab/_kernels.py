"""Low-level numerical kernels: Gauss-Hermite rules, cubic Hermite
interpolation on uniform grids and the tilted Gaussian average that
implements one Hopf-Cole step ``(1/m) log E exp(m A(x + sigma z))``."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

M_FLOOR = 1e-8
LOG2 = float(np.log(2.0))


@lru_cache(maxsize=None)
def gh_rule(order: int):
    """Nodes and normalized weights for ``E f(z)``, ``z ~ N(0, 1)``."""
    z, w = hermegauss(order)
    w = w / w.sum()
    z.setflags(write=False)
    w.setflags(write=False)
    return z, w


def log_cosh(x):
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - LOG2


def sech2(x):
    t = np.tanh(x)
    return 1.0 - t * t


def _expand(coef, ndim):
    return coef.reshape(coef.shape + (1,) * (ndim - 1))


def hermite_interp(x0: float, dx: float, f: np.ndarray, df: np.ndarray, y: np.ndarray):
    """Cubic Hermite interpolation along axis 0 of ``f`` with slopes ``df``.

    ``y`` is a 1-D array of abscissae; the result has shape
    ``(len(y),) + f.shape[1:]``.  Outside the grid the function is continued
    linearly with the end slope.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = f.shape[0]
    t = (y - x0) / dx
    i = np.clip(np.floor(t).astype(np.int64), 0, n - 2)
    s = np.clip(t - i, 0.0, 1.0)
    s2 = s * s
    s3 = s2 * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = (s3 - 2 * s2 + s) * dx
    h01 = -2 * s3 + 3 * s2
    h11 = (s3 - s2) * dx
    nd = f.ndim
    out = (_expand(h00, nd) * f[i] + _expand(h10, nd) * df[i]
           + _expand(h01, nd) * f[i + 1] + _expand(h11, nd) * df[i + 1])
    lo = t < 0
    if np.any(lo):
        out[lo] = f[0] + _expand(y[lo] - x0, nd) * df[0]
    hi = t > n - 1
    if np.any(hi):
        out[hi] = f[-1] + _expand(y[hi] - (x0 + (n - 1) * dx), nd) * df[-1]
    return out


def tilted_average(A: np.ndarray, w: np.ndarray, m: float, channels=()):
    """One Hopf-Cole quadrature along the last axis.

    Parameters
    ----------
    A : array (..., nq)
        Values of the function at the quadrature points.
    w : array (nq,)
        Quadrature weights summing to one.
    m : float
        Tilt. Below ``M_FLOOR`` a plain average is used.
    channels : sequence of arrays (..., nq)
        Quantities averaged under the tilted weights.

    Returns
    -------
    L : array (...)
        ``(1/m) log sum w exp(m A)`` (or ``sum w A``).
    avgs : list of arrays
        Tilted averages of each channel.
    """
    if m < M_FLOOR:
        return A @ w, [c @ w for c in channels]
    e = m * A
    emax = e.max(axis=-1, keepdims=True)
    wt = w * np.exp(e - emax)
    Z = wt.sum(axis=-1, keepdims=True)
    L = (emax[..., 0] + np.log(Z[..., 0])) / m
    p = wt / Z
    return L, [np.sum(p * c, axis=-1) for c in channels]


def hermite_interp_cols(x0: float, dx: float, f: np.ndarray, df: np.ndarray, y: np.ndarray):
    """Column-wise variant of :func:`hermite_interp`.

    ``f`` and ``df`` have shape ``(n, P)``; row ``p`` of ``y`` (shape
    ``(P, nq)``) is interpolated in column ``p``.  Returns shape ``(P, nq)``.
    """
    n = f.shape[0]
    t = (y - x0) / dx
    i = np.clip(np.floor(t).astype(np.int64), 0, n - 2)
    s = np.clip(t - i, 0.0, 1.0)
    col = np.arange(f.shape[1])[:, None]
    s2 = s * s
    s3 = s2 * s
    out = ((2 * s3 - 3 * s2 + 1) * f[i, col] + (s3 - 2 * s2 + s) * dx * df[i, col]
           + (-2 * s3 + 3 * s2) * f[i + 1, col] + (s3 - s2) * dx * df[i + 1, col])
    lo = t < 0
    if np.any(lo):
        out = np.where(lo, f[0][:, None] + (y - x0) * df[0][:, None], out)
    hi = t > n - 1
    if np.any(hi):
        xe = x0 + (n - 1) * dx
        out = np.where(hi, f[-1][:, None] + (y - xe) * df[-1][:, None], out)
    return out
