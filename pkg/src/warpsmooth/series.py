"""Truncated Taylor-series arithmetic on arrays of expansion points.

A series is an array of shape ``(K + 1, npts)`` whose row ``j`` holds
``g^(j)(x) / j!``.  Products, square roots and reciprocals are computed
with the usual Cauchy-product recurrences, which gives exact high-order
derivatives of ``A = sqrt(A^2)`` and ``A^-2`` without symbolic algebra.
"""
from math import factorial

import numpy as np


def mul(a, b):
    K = a.shape[0]
    out = np.zeros_like(a if a.dtype.kind == "c" else b)
    for n in range(K):
        out[n] = np.einsum("j...,j...->...", a[: n + 1], b[n::-1])
    return out


def sqrt(g):
    K = g.shape[0]
    a = np.zeros_like(g)
    a[0] = np.sqrt(g[0])
    for n in range(1, K):
        acc = g[n] - np.einsum("j...,j...->...", a[1:n], a[n - 1:0:-1])
        a[n] = acc / (2.0 * a[0])
    return a


def reciprocal(g):
    K = g.shape[0]
    r = np.zeros_like(g)
    r[0] = 1.0 / g[0]
    for n in range(1, K):
        acc = np.einsum("j...,j...->...", g[1: n + 1], r[n - 1::-1])
        r[n] = -acc * r[0]
    return r


def to_derivatives(series):
    """Convert Taylor coefficients to derivatives, row by row."""
    fac = np.array([factorial(j) for j in range(series.shape[0])], dtype=float)
    return series * fac.reshape((-1,) + (1,) * (series.ndim - 1))


def poly_series(coeffs, center, x, K):
    """Taylor coefficients of sum_i c_i (x - center)^i at the points x."""
    c = np.polynomial.Polynomial(np.asarray(coeffs, dtype=float))
    d = np.asarray(x, dtype=float) - center
    out = np.empty((K + 1,) + d.shape)
    p = c
    for j in range(K + 1):
        out[j] = p(d) / factorial(j)
        p = p.deriv()
    return out
