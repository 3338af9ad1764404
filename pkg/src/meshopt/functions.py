"""Capacity, link-cost, and session-utility function families.

Each family exposes values, first and second derivatives, and closed-form
extrema of the derivative products that the Hessian upper bounds need over
SINR intervals or cost sublevel sets.  All logarithms are natural.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcinv


# ---------------------------------------------------------------------------
# Capacity models C(x), x = SINR
# ---------------------------------------------------------------------------

class _LogLinearCapacity:
    """C(x) = scale * ln(inner * x).

    Covers the high-SINR CDMA approximation and the M-QAM rate formula,
    which differ only in the constants.  Satisfies C''(x)*x + C'(x) <= 0
    (with equality), so total cost stays convex in log powers.
    """

    log_concave_in_power = True

    def __init__(self, scale: float, inner: float):
        if scale <= 0 or inner <= 0:
            raise ValueError("scale and inner constant must be positive")
        self.scale = float(scale)
        self.inner = float(inner)

    def value(self, x):
        return self.scale * np.log(self.inner * x)

    def deriv(self, x):
        return self.scale / np.asarray(x, dtype=float)

    def deriv2(self, x):
        x = np.asarray(x, dtype=float)
        return -self.scale / (x * x)

    # Derivative products are monotone in x, so interval extrema sit at the
    # endpoints: C'(x)^2 x^2 = scale^2 and C''(x) x^2 = -scale identically.
    def max_c1sq_x2(self, lo, hi):
        return self.scale ** 2

    def min_c2_x2(self, lo, hi):
        return -self.scale

    def max_c1sq_x2_1px2(self, lo, hi):
        return self.scale ** 2 * (1.0 + hi) ** 2

    def min_c2_x2_1px2(self, lo, hi):
        return -self.scale * (1.0 + hi) ** 2


class HighSinrLog(_LogLinearCapacity):
    """High-SINR spread-spectrum capacity, C = scale * ln(K * SINR)."""

    def __init__(self, k: float, scale: float = 1.0):
        super().__init__(scale=scale, inner=k)
        self.k = float(k)


class MQam(_LogLinearCapacity):
    """M-QAM over CDMA symbols: C = R_s * ln(K * SINR / (2 * Qinv(Pe)^2))."""

    def __init__(self, k: float, symbol_rate: float = 1.0, target_error: float = 1e-3):
        # Qinv(p) for the standard normal tail, via the complementary erf.
        qinv = math.sqrt(2.0) * erfcinv(2.0 * target_error)
        super().__init__(scale=symbol_rate, inner=k / (2.0 * qinv ** 2))
        self.k = float(k)
        self.symbol_rate = float(symbol_rate)
        self.target_error = float(target_error)


class PreciseLog:
    """Exact Shannon-style capacity C = ln(1 + K * SINR).

    Violates C''x + C' <= 0, so it is valid only on the fixed-total-power
    (power allocation + routing) path, never with power control.
    """

    log_concave_in_power = False

    def __init__(self, k: float):
        if k <= 0:
            raise ValueError("processing gain must be positive")
        self.k = float(k)

    def value(self, x):
        return np.log1p(self.k * np.asarray(x, dtype=float))

    def deriv(self, x):
        return self.k / (1.0 + self.k * np.asarray(x, dtype=float))

    def deriv2(self, x):
        d = 1.0 + self.k * np.asarray(x, dtype=float)
        return -self.k ** 2 / (d * d)

    # g(x) = K x / (1 + K x) is increasing in x, so g^2 and g^2 (1+x)^2 are
    # increasing and their negatives decreasing: all extrema at x = hi.
    def _g(self, x):
        return self.k * x / (1.0 + self.k * x)

    def max_c1sq_x2(self, lo, hi):
        return self._g(hi) ** 2

    def min_c2_x2(self, lo, hi):
        return -self._g(hi) ** 2

    def max_c1sq_x2_1px2(self, lo, hi):
        return self._g(hi) ** 2 * (1.0 + hi) ** 2

    def min_c2_x2_1px2(self, lo, hi):
        return -self._g(hi) ** 2 * (1.0 + hi) ** 2


# ---------------------------------------------------------------------------
# Link cost models D(C, F) on {0 <= F < C}
# ---------------------------------------------------------------------------

class MM1Delay:
    """Average waiting time of an M/M/1 queue: D = 1 / (C - F)."""

    def value(self, cap, flow):
        return 1.0 / (np.asarray(cap, dtype=float) - flow)

    def dF(self, cap, flow):
        g = np.asarray(cap, dtype=float) - flow
        return 1.0 / (g * g)

    def dC(self, cap, flow):
        g = np.asarray(cap, dtype=float) - flow
        return -1.0 / (g * g)

    def d2F(self, cap, flow):
        g = np.asarray(cap, dtype=float) - flow
        return 2.0 / (g * g * g)

    def d2C(self, cap, flow):
        return self.d2F(cap, flow)

    # D <= b at fixed C (or fixed F) pins C - F >= 1/b.
    def d2F_max(self, budget, cap):
        return 2.0 * budget ** 3 * np.ones_like(np.asarray(cap, dtype=float))

    def d2C_max_fixed_flow(self, budget, flow):
        return 2.0 * budget ** 3

    def dC_min_fixed_flow(self, budget, flow):
        return -(budget ** 2)

    def d2C_max(self, budget, cap_floor=None):
        return 2.0 * budget ** 3

    def dC_min(self, budget, cap_floor=None):
        return -(budget ** 2)


class MM1Packets:
    """Expected M/M/1 queue occupancy: D = (F + eps) / (C - F).

    The infinitesimal eps in the numerator keeps dD/dC < 0 at F = 0.
    """

    def __init__(self, eps: float = 1e-9):
        if eps < 0:
            raise ValueError("eps must be nonnegative")
        self.eps = float(eps)

    def value(self, cap, flow):
        return (np.asarray(flow, dtype=float) + self.eps) / (cap - flow)

    def dF(self, cap, flow):
        g = np.asarray(cap, dtype=float) - flow
        return (cap + self.eps) / (g * g)

    def dC(self, cap, flow):
        g = np.asarray(cap, dtype=float) - flow
        return -(np.asarray(flow, dtype=float) + self.eps) / (g * g)

    def d2F(self, cap, flow):
        g = np.asarray(cap, dtype=float) - flow
        return 2.0 * (cap + self.eps) / (g * g * g)

    def d2C(self, cap, flow):
        g = np.asarray(cap, dtype=float) - flow
        return 2.0 * (np.asarray(flow, dtype=float) + self.eps) / (g * g * g)

    def d2F_max(self, budget, cap):
        # D <= b at fixed C gives C - F >= (C + eps)/(1 + b).
        return 2.0 * (1.0 + budget) ** 3 / (np.asarray(cap, dtype=float) + self.eps) ** 2

    def d2C_max_fixed_flow(self, budget, flow):
        # D <= b at fixed F gives C - F >= (F + eps)/b.
        return 2.0 * budget ** 3 / (np.asarray(flow, dtype=float) + self.eps) ** 2

    def dC_min_fixed_flow(self, budget, flow):
        return -(budget ** 2) / (np.asarray(flow, dtype=float) + self.eps)

    def d2C_max(self, budget, cap_floor=None):
        # Unbounded over {D <= b} alone as C - F -> 0 with F -> 0; a capacity
        # floor from the power limits must be supplied.
        from .errors import UnboundedCurvature

        if cap_floor is None or cap_floor <= 0:
            raise UnboundedCurvature(
                "d2D/dC2 for F/(C-F) needs a positive capacity floor")
        return 2.0 * budget * (1.0 + budget) ** 2 / (cap_floor + self.eps) ** 2

    def dC_min(self, budget, cap_floor=None):
        from .errors import UnboundedCurvature

        if cap_floor is None or cap_floor <= 0:
            raise UnboundedCurvature(
                "dD/dC lower bound for F/(C-F) needs a positive capacity floor")
        return -budget * (1.0 + budget) / (cap_floor + self.eps)


# ---------------------------------------------------------------------------
# Session utilities and the overflow loss B(F) = U(rmax) - U(rmax - F)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogUtility:
    """U(r) = weight * ln(eps_u + r)."""

    weight: float = 1.0
    eps_u: float = 1e-3

    def value(self, r):
        return self.weight * np.log(self.eps_u + np.asarray(r, dtype=float))

    def du(self, r):
        return self.weight / (self.eps_u + np.asarray(r, dtype=float))

    def d2u(self, r):
        d = self.eps_u + np.asarray(r, dtype=float)
        return -self.weight / (d * d)

    def loss(self, overflow, r_max):
        top = self.eps_u + r_max
        return self.weight * (np.log(top) - np.log(top - overflow))

    def dloss(self, overflow, r_max):
        return self.du(r_max - overflow)

    def d2loss(self, overflow, r_max):
        return -self.d2u(r_max - overflow)

    def d2loss_max(self, budget, r_max):
        # B <= budget pins eps_u + r_max - F >= (eps_u + r_max) e^{-budget/a}.
        top = self.eps_u + r_max
        return self.weight * math.exp(2.0 * budget / self.weight) / top ** 2


@dataclass(frozen=True)
class QuadCapUtility:
    """Concave quadratic U(r) = weight * (r - r^2 / (2 * r_cap)), flat at r_cap."""

    weight: float = 1.0
    r_cap: float = 1.0

    def value(self, r):
        r = np.asarray(r, dtype=float)
        return self.weight * (r - r * r / (2.0 * self.r_cap))

    def du(self, r):
        return self.weight * (1.0 - np.asarray(r, dtype=float) / self.r_cap)

    def d2u(self, r):
        return -self.weight / self.r_cap * np.ones_like(np.asarray(r, dtype=float))

    def loss(self, overflow, r_max):
        return self.value(r_max) - self.value(r_max - np.asarray(overflow, dtype=float))

    def dloss(self, overflow, r_max):
        return self.du(r_max - overflow)

    def d2loss(self, overflow, r_max):
        return self.weight / self.r_cap * np.ones_like(np.asarray(overflow, dtype=float))

    def d2loss_max(self, budget, r_max):
        return self.weight / self.r_cap
