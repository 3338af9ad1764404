"""Weighted projection onto the (partially pinned) probability simplex.

Solves  min sum_j m_j (x_j - y_j)^2  s.t.  x >= 0, x_j = 0 for j in a fixed
set, sum_j x_j = mass.  The KKT system gives x_j = max(0, y_j - theta/m_j)
for a scalar multiplier theta.  Numerically everything is computed in the
shifted domain u = max_j(m_j y_j) - theta with offsets
delta_j = max_k(m_k y_k) - m_j y_j, so x_j = max(0, (u - delta_j)/m_j):
targets y can then be arbitrarily large (the scaled-step line searches
produce huge ones) without catastrophic cancellation.  u is found by
bisection and sharpened once on the identified active set, giving KKT
residuals at machine precision.
"""
from __future__ import annotations

import numpy as np

from .errors import EmptyFreeSet


def weighted_simplex_project(y, weights, fixed_zero=(), mass: float = 1.0,
                             iters: int = 128) -> np.ndarray:
    """Project y onto {x >= 0, sum x = mass, x[fixed_zero] = 0} in the
    norm induced by diag(weights).  All weights must be positive."""
    y = np.asarray(y, dtype=float)
    m = np.asarray(weights, dtype=float)
    if y.shape != m.shape or y.ndim != 1:
        raise ValueError("y and weights must be 1-D arrays of equal length")
    if np.any(m <= 0):
        raise ValueError("projection weights must be positive")
    free = np.ones(len(y), dtype=bool)
    for j in fixed_zero:
        free[j] = False
    if not free.any():
        raise EmptyFreeSet("every coordinate pinned to zero")

    yf, mf = y[free], m[free]
    delta = np.max(mf * yf) - mf * yf  # >= 0, zero at the last-draining coord

    def total(u):
        return np.maximum(0.0, (u - delta) / mf).sum()

    lo, hi = 0.0, float(np.max(mf)) * mass
    while total(hi) < mass:
        hi = 2.0 * hi + float(np.max(delta)) + 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if total(mid) < mass:
            lo = mid
        else:
            hi = mid
    u = 0.5 * (lo + hi)

    # exact multiplier on the localized active set
    support = (u - delta) / mf > 0
    if support.any():
        inv = (1.0 / mf)[support]
        u_exact = (mass + np.sum(delta[support] / mf[support])) / inv.sum()
        cand = np.maximum(0.0, (u_exact - delta) / mf)
        if abs(cand.sum() - mass) <= abs(total(u) - mass):
            u = u_exact
    xf = np.maximum(0.0, (u - delta) / mf)
    if abs(xf.sum() - mass) > 1e-9 * max(1.0, abs(mass)):
        raise ArithmeticError("simplex projection failed to conserve mass")

    x = np.zeros_like(y)
    x[free] = xf
    return x


def projection_kkt_residual(x, y, weights, fixed_zero=(), mass: float = 1.0) -> float:
    """Max violation of feasibility, stationarity, and complementarity."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m = np.asarray(weights, dtype=float)
    free = np.ones(len(y), dtype=bool)
    for j in fixed_zero:
        free[j] = False
    res = abs(x.sum() - mass)
    res = max(res, float(np.max(np.abs(x[~free])) if (~free).any() else 0.0))
    res = max(res, float(max(0.0, np.max(-x))))
    grad = 2.0 * m[free] * (x[free] - y[free])
    pos = x[free] > 0
    if pos.any():
        theta = grad[pos].mean()
        res = max(res, float(np.max(np.abs(grad[pos] - theta))))
        if (~pos).any():
            # inactive coordinates must not undercut the multiplier
            res = max(res, float(max(0.0, np.max(theta - grad[~pos]))))
    return res
