"""Diagonal Hessian upper bounds and the scaling matrices / stepsizes.

Given a cost budget D0 (the initial network cost) or a node's local budget,
closed-form extrema of the link-cost derivatives over the corresponding
sublevel sets combine with capacity-derivative interval extrema to produce:
routing scaling M_i(w) and stepsize alpha_i(w); power allocation scaling Q_i
and stepsize beta_i (standard and refined variants); and power control
scalars v_i.  Every accepted step under these parameters cannot increase the
network cost (up to floating point, handled by the drivers' descent guard).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBound, EmptyAllowedSet
from .model import EPS_ETA, FlowState, NetworkState, RadioState, Topology


@dataclass(frozen=True)
class CurvatureBounds:
    """Sublevel-set derivative extrema at a given budget."""

    budget: float            # D0
    a_link: np.ndarray       # (E,) max d2D/dF2 at each link's current capacity
    a_max: float             # network-wide maximum of a_link
    x_bar: float             # global SINR cap from the power constraints
    kappa: float             # max C'(x)^2 x^2 on [0, x_bar]
    varphi: float            # min C''(x) x^2 on [0, x_bar]
    b_upper: float | None = None   # max d2D/dC2 over the (C,F) sublevel set
    b_lower: float | None = None   # min dD/dC over the (C,F) sublevel set
    cap_floor: float | None = None


def sinr_cap(topology: Topology) -> float:
    """Largest achievable SINR on any link: full power, no interference."""
    return float(np.max(topology.link_gain
                        * topology.power_cap[topology.link_src]
                        / topology.noise[topology.link_dst]))


def capacity_floor(topology: Topology, capacity_fn, cost_fn, budget: float,
                   eps_eta: float = EPS_ETA) -> float:
    """Smallest link capacity reachable while the network cost stays <= budget.

    Finite cost pins gamma_i above the level at which even an exclusive,
    interference-free allocation would already cost `budget` on some
    out-link; combined with the eta floor and worst-case interference this
    floors every SINR, hence every capacity.  The cost function's own
    sublevel-set capacity floor is folded in.
    """
    c_zero = cost_fn_cap_at_budget(cost_fn, budget)
    x_star = capacity_fn_inverse(capacity_fn, c_zero)
    gamma_lb = np.full(topology.n, -np.inf)
    for i in range(topology.n):
        ol = topology.out_links[i]
        if len(ol) == 0:
            continue
        g = topology.link_gain[ol]
        nj = topology.noise[topology.link_dst[ol]]
        with np.errstate(divide="ignore"):
            gl = np.log(x_star * nj / g) / math.log(topology.power_cap[i])
        gamma_lb[i] = min(1.0, float(np.max(gl)))
    p_min = np.where(topology.transmits,
                     topology.power_cap ** np.minimum(gamma_lb, 1.0), 0.0)
    worst_in = (topology.gain_matrix.T @ topology.power_cap)[topology.link_dst] \
        + topology.noise[topology.link_dst]
    x_floor = topology.link_gain * p_min[topology.link_src] * eps_eta / worst_in
    floor = float(np.min(capacity_fn.value(x_floor)))
    return max(floor, _implied_cap_floor(cost_fn, budget))


def _implied_cap_floor(cost_fn, budget: float) -> float:
    # any point of {D <= budget} already satisfies C >= this value
    if hasattr(cost_fn, "eps"):
        return cost_fn.eps / budget
    return 1.0 / budget


def cost_fn_cap_at_budget(cost_fn, budget: float) -> float:
    """Capacity at which a zero-flow link costs exactly `budget`."""
    if hasattr(cost_fn, "eps"):
        return cost_fn.eps / budget if cost_fn.eps > 0 else 0.0
    return 1.0 / budget


def capacity_fn_inverse(capacity_fn, c: float) -> float:
    """SINR achieving capacity c."""
    if hasattr(capacity_fn, "inner"):
        return math.exp(c / capacity_fn.scale) / capacity_fn.inner
    return math.expm1(c) / capacity_fn.k


def cost_curvature_extrema(cost_fn, budget: float, mode: str, *, cap=None,
                           flow=None, cap_floor=None):
    """Closed-form derivative extrema over cost sublevel sets.

    Modes: "d2F" (fixed capacity), "d2C"/"dC" (fixed flow),
    "d2C_global"/"dC_global" (over the full (C,F) sublevel set; the packet
    cost additionally needs a capacity floor and raises UnboundedCurvature
    without one).
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    if mode == "d2F":
        return cost_fn.d2F_max(budget, cap)
    if mode == "d2C":
        return cost_fn.d2C_max_fixed_flow(budget, flow)
    if mode == "dC":
        return cost_fn.dC_min_fixed_flow(budget, flow)
    if mode == "d2C_global":
        return cost_fn.d2C_max(budget, cap_floor)
    if mode == "dC_global":
        return cost_fn.dC_min(budget, cap_floor)
    raise ValueError(f"unknown mode {mode!r}")


def curvature_bounds(topology: Topology, radio: RadioState, cost_fn,
                     capacity_fn, budget: float, *, with_power_control=False,
                     eps_eta: float = EPS_ETA) -> CurvatureBounds:
    """Assemble every budget-dependent bound the lemma scalings consume."""
    a_link = np.asarray(cost_curvature_extrema(cost_fn, budget, "d2F",
                                               cap=radio.capacity), dtype=float)
    x_bar = sinr_cap(topology)
    kappa = float(capacity_fn.max_c1sq_x2(0.0, x_bar))
    varphi = float(capacity_fn.min_c2_x2(0.0, x_bar))
    b_up = b_lo = floor = None
    if with_power_control:
        floor = capacity_floor(topology, capacity_fn, cost_fn, budget, eps_eta)
        b_up = float(cost_curvature_extrema(cost_fn, budget, "d2C_global",
                                            cap_floor=floor))
        b_lo = float(cost_curvature_extrema(cost_fn, budget, "dC_global",
                                            cap_floor=floor))
    return CurvatureBounds(budget=budget, a_link=a_link,
                           a_max=float(np.max(a_link)) if len(a_link) else 0.0,
                           x_bar=x_bar, kappa=kappa, varphi=varphi,
                           b_upper=b_up, b_lower=b_lo, cap_floor=floor)


def routing_scaling(bounds: CurvatureBounds, allowed_links, hop_at_head,
                    t_i: float):
    """Routing scaling per the diagonal Hessian bound.

    M entries (t_i/2)(A_ij + |AN| h_j A) over the allowed set, and the basic
    algorithm's stepsize alpha = 2 / (|AN| max_j (A_ij + |AN| h_j A)).
    """
    allowed_links = np.asarray(allowed_links, dtype=np.intp)
    if len(allowed_links) == 0:
        raise EmptyAllowedSet("no allowed out-neighbors")
    n_an = len(allowed_links)
    hops = np.asarray(hop_at_head, dtype=float)
    entries = bounds.a_link[allowed_links] + n_an * hops * bounds.a_max
    alpha = 2.0 / (n_an * float(np.max(entries)))
    return 0.5 * t_i * entries, alpha


def _other_interference(topology: Topology, radio: RadioState, links) -> np.ndarray:
    # interference seen on node i's links from everyone but i, plus noise
    i = topology.link_src[links]
    return radio.interference[links] - topology.link_gain[links] * (
        radio.node_power[i] - radio.link_power[links])


def _eta_lower_bound(g, p_i, s_j, flow_e, budget, eta_now, cost_fn,
                     capacity_fn, eps_eta, iters=60):
    """Bisect for the eta at which the link's cost alone reaches the budget."""

    def local_cost(eta):
        x = g * p_i * eta / (g * p_i * (1.0 - eta) + s_j)
        c = float(capacity_fn.value(x))
        if c <= flow_e:
            return math.inf
        return float(cost_fn.value(c, flow_e))

    lo, hi = eps_eta, eta_now
    if local_cost(lo) < budget:
        return eps_eta
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if local_cost(mid) >= budget:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


def pa_scaling(topology: Topology, state: NetworkState, radio: RadioState,
               flow: FlowState, node: int, cost_fn, capacity_fn,
               eps_eta: float = EPS_ETA):
    """Power allocation scaling at one node from its local cost budget.

    Returns (diagonal entries over the node's out-links, stepsize beta_i).
    """
    ol = topology.out_links[node]
    budget = float(np.sum(cost_fn.value(radio.capacity[ol], flow.link_flow[ol])))
    p_i = radio.node_power[node]
    s = _other_interference(topology, radio, ol)
    q = np.empty(len(ol))
    for a, e in enumerate(ol):
        g = topology.link_gain[e]
        x_max = g * p_i / s[a]
        eta_lb = _eta_lower_bound(g, p_i, s[a], flow.link_flow[e], budget,
                                  state.eta[e], cost_fn, capacity_fn, eps_eta)
        x_min = g * p_i * eta_lb / (g * p_i * (1.0 - eta_lb) + s[a])
        b_ij = cost_fn.d2C_max_fixed_flow(budget, flow.link_flow[e])
        d_min = cost_fn.dC_min_fixed_flow(budget, flow.link_flow[e])
        q[a] = (b_ij * capacity_fn.max_c1sq_x2_1px2(x_min, x_max)
                + d_min * capacity_fn.min_c2_x2_1px2(x_min, x_max)) / eta_lb ** 2
    beta = 2.0 * p_i ** 2 / (len(ol) * float(np.max(q)))
    return q, beta


def refined_pa_scaling(topology: Topology, state: NetworkState,
                       radio: RadioState, flow: FlowState, node: int,
                       cost_fn, k: float):
    """Power allocation scaling for the exact ln(1+Kx) capacity model:
    diagonal entries [Bup K^2 - Blo (K-1)^2] NR^2 with NR the zero-own-power
    interference SINR cap."""
    ol = topology.out_links[node]
    budget = float(np.sum(cost_fn.value(radio.capacity[ol], flow.link_flow[ol])))
    p_i = radio.node_power[node]
    s = _other_interference(topology, radio, ol)
    nr = topology.link_gain[ol] * p_i / s
    b_up = np.array([cost_fn.d2C_max_fixed_flow(budget, flow.link_flow[e])
                     for e in ol])
    b_lo = np.array([cost_fn.dC_min_fixed_flow(budget, flow.link_flow[e])
                     for e in ol])
    q = (b_up * k ** 2 - b_lo * (k - 1.0) ** 2) * nr ** 2
    beta = 2.0 * p_i ** 2 / (len(ol) * float(np.max(q)))
    return q, beta


def pc_scaling(bounds: CurvatureBounds, topology: Topology) -> np.ndarray:
    """Per-node power control scalars v_i = (ln Pbar_i / 2) |N| |E| bracket."""
    if topology.m == 0:
        raise DegenerateBound("no links")
    if bounds.b_upper is None or bounds.b_lower is None:
        raise ValueError("bounds were built without with_power_control")
    bracket = bounds.b_upper * bounds.kappa + bounds.b_lower * bounds.varphi
    if bracket <= 0.0:
        raise DegenerateBound(f"nonpositive bracket {bracket}")
    sbar = np.log(topology.power_cap)
    return 0.5 * sbar * topology.n * topology.m * bracket


def hessian_bound_check(fun, x0, bound_diag, trials: int, rng,
                        zero_sum: bool = True, h: float = 1e-4) -> float:
    """Max over random unit directions of (v' H v - v' diag(bound) v), H
    estimated by central second differences of `fun` at x0.  Nonpositive
    results (up to finite-difference slack) certify the bound."""
    x0 = np.asarray(x0, dtype=float)
    bound = np.asarray(bound_diag, dtype=float)
    worst = -math.inf
    f0 = fun(x0)
    for _ in range(trials):
        v = rng.normal(size=len(x0))
        if zero_sum:
            v -= v.mean()
        norm = np.linalg.norm(v)
        if norm == 0.0:
            continue
        v /= norm
        quad = (fun(x0 + h * v) - 2.0 * f0 + fun(x0 - h * v)) / (h * h)
        worst = max(worst, quad - float(np.dot(bound, v * v)))
    return worst if worst > -math.inf else 0.0  # only the zero direction
