"""Small numerical kernels shared by the solver modules.

* :func:`integrate` is a vectorised adaptive Gauss-Legendre rule.  A whole
  batch of intervals is integrated at once; intervals whose 10-point and
  20-point estimates disagree are bisected until they agree.
* :func:`newton_bisect` is a scalar Newton iteration kept inside a bracket,
  falling back to bisection whenever a step leaves it.
* :func:`taylor_shift` re-expands a polynomial around another origin using
  exact arithmetic when the coefficients are Fractions.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from math import comb

import numpy as np

from .errors import ConvergenceError, NoRootError


@lru_cache(maxsize=None)
def _gl(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def _rule(f, a, b, order):
    x, w = _gl(order)
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    pts = mid[:, None] + half[:, None] * x[None, :]
    return half * (f(pts) @ w)


def integrate(f, a, b, rtol=1e-13, atol=0.0, max_splits=60, max_intervals=100_000):
    """Integrate the vectorised ``f`` over each interval ``[a[i], b[i]]``.

    ``f`` receives a 2-D array of abscissae and must return an array of the
    same shape.  Returns an array of integrals, one per interval.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    out = np.zeros(a.shape)
    idx = np.arange(a.size)
    lo, hi = a.ravel(), b.ravel()
    flat = out.ravel()
    for _ in range(max_splits):
        if idx.size == 0:
            return out
        if idx.size > max_intervals:
            break
        coarse = _rule(f, lo, hi, 10)
        fine = _rule(f, lo, hi, 20)
        if not np.all(np.isfinite(fine)):
            raise ConvergenceError("non-finite integrand value")
        ok = np.abs(fine - coarse) <= np.maximum(rtol * np.abs(fine), atol)
        np.add.at(flat, idx[ok], fine[ok])
        bad = ~ok
        mid = 0.5 * (lo[bad] + hi[bad])
        idx = np.concatenate([idx[bad], idx[bad]])
        lo, hi = np.concatenate([lo[bad], mid]), np.concatenate([mid, hi[bad]])
        # an interval can no longer be halved in floating point
        if np.any(hi - lo <= 4 * np.finfo(float).eps * np.maximum(np.abs(lo), np.abs(hi))):
            break
    if idx.size:
        raise ConvergenceError(f"adaptive quadrature failed on {idx.size} subintervals")
    return out


def newton_bisect(f, df, lo, hi, x0=None, xtol=1e-15, rtol=4e-16, maxiter=200):
    """Root of ``f`` in ``[lo, hi]`` with a sign change.

    Newton steps from ``x0`` (the midpoint by default); any step leaving the
    current bracket is replaced by bisection.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if flo * fhi > 0:
        raise NoRootError(f"no sign change on [{lo!r}, {hi!r}]")
    x = 0.5 * (lo + hi) if x0 is None else min(max(x0, lo), hi)
    for _ in range(maxiter):
        fx = f(x)
        if fx == 0:
            return x
        if (fx < 0) == (flo < 0):
            lo, flo = x, fx
        else:
            hi = x
        d = df(x)
        step_ok = d != 0 and np.isfinite(d)
        if step_ok:
            xn = x - fx / d
            step_ok = lo < xn < hi
        if not step_ok:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= xtol + rtol * abs(xn) or hi - lo <= xtol + rtol * abs(x):
            return xn
        x = xn
    raise ConvergenceError("newton_bisect did not converge")


def taylor_shift(coeffs, origin, sign=1):
    """Coefficients in ``d`` of ``p(origin + sign*d)``, where ``p = sum c_k t^k``."""
    deg = len(coeffs) - 1
    out = []
    for k in range(deg + 1):
        acc = 0 if isinstance(origin, Fraction) else 0.0
        for j in range(k, deg + 1):
            acc += coeffs[j] * comb(j, k) * origin ** (j - k)
        out.append(acc * sign**k)
    return out


def horner(coeffs, x):
    acc = np.zeros_like(x, dtype=float) + float(coeffs[-1])
    for c in reversed(coeffs[:-1]):
        acc = acc * x + float(c)
    return acc


def poly_derivative(coeffs):
    return [k * c for k, c in enumerate(coeffs)][1:]


def lstsq(columns, y, weights=None):
    """Weighted linear least squares; returns (coefficients, residual vector)."""
    A = np.column_stack(columns)
    y = np.asarray(y, dtype=float)
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        A, yw = A * w[:, None], y * w
    else:
        yw = y
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    coef, *_ = np.linalg.lstsq(A / scale, yw, rcond=None)
    coef = coef / scale
    return coef, yw - A @ coef


def newton_bisect_vec(f, df, lo, hi, x0=None, rtol=4e-16, maxiter=200):
    """Vectorised :func:`newton_bisect` for increasing ``f`` on ``[lo, hi]``.

    ``f(lo) <= 0 <= f(hi)`` is assumed element-wise (clipped targets).
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    x = 0.5 * (lo + hi) if x0 is None else np.clip(np.array(x0, dtype=float), lo, hi)
    active = np.ones(x.shape, dtype=bool)
    for _ in range(maxiter):
        fx = f(x)
        neg = fx < 0
        lo = np.where(active & neg, x, lo)
        hi = np.where(active & ~neg, x, hi)
        d = df(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - fx / d
        bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        xn = np.where(fx == 0, x, xn)
        done = (np.abs(xn - x) <= rtol * np.abs(xn) + 1e-300) | (hi - lo <= rtol * np.abs(hi))
        x = np.where(active, xn, x)
        active &= ~done
        if not active.any():
            return x
    raise ConvergenceError("vectorised newton_bisect did not converge")
