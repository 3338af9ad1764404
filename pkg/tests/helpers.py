"""Shared fixtures and independent numeric oracles for the test suite.

Oracles here (finite differences, dense grid search, scalar bisection) are
deliberately written against total_cost / raw formulas only, never against
the analytic-derivative code paths they are used to check.
"""
from __future__ import annotations

import math

import numpy as np

from meshopt.model import (NetworkState, RadioState, Session, Topology,
                           compute_flows, compute_radio, total_cost)


# ---------------------------------------------------------------------------
# Hand-built fixtures
# ---------------------------------------------------------------------------

def diamond_topology(pcap=10.0, noise=0.1, gains=None):
    """1 -> {2, 3} -> 4 with forward links only."""
    links = [(1, 2), (1, 3), (2, 4), (3, 4)]
    gain = {lk: 1.0 for lk in links}
    if gains:
        gain.update(gains)
    return Topology(nodes=[1, 2, 3, 4], links=links, gain=gain,
                    noise={v: noise for v in [1, 2, 3, 4]},
                    power_cap={v: pcap for v in [1, 2, 3, 4]})


def diamond_session(rate=1.0, utility=None):
    return [Session(0, origin=1, dest=4, rate=rate, utility=utility)]


def diamond_state(top, split=0.5):
    return NetworkState.build(top, diamond_session(), phi_map={
        0: {(1, 2): split, (1, 3): 1.0 - split, (2, 4): 1.0, (3, 4): 1.0}})


def fixed_radio(top, caps):
    """RadioState with prescribed capacities (for fixtures decoupled from SINR)."""
    caps = np.asarray(caps, dtype=float)
    ones = np.ones(top.m)
    return RadioState(link_power=ones * 1.0, node_power=np.ones(top.n),
                      interference=ones * 1.0, sinr=ones * 1.0, capacity=caps)


def chain_topology(n=3, pcap=10.0, noise=0.1):
    links = [(i, i + 1) for i in range(1, n)]
    gain = {lk: 1.0 for lk in links}
    return Topology(nodes=list(range(1, n + 1)), links=links, gain=gain,
                    noise={v: noise for v in range(1, n + 1)},
                    power_cap={v: pcap for v in range(1, n + 1)})


# ---------------------------------------------------------------------------
# Finite-difference oracles
# ---------------------------------------------------------------------------

def cost_of_state(top, sessions, cost_fn, capacity_fn, state):
    radio = compute_radio(top, capacity_fn, state)
    flow = compute_flows(top, sessions, state)
    return total_cost(flow, radio, cost_fn, sessions)


def fd_directional(fun, x0, v, h=1e-6):
    """Central-difference directional derivative of fun at x0 along v."""
    return (fun(x0 + h * v) - fun(x0 - h * v)) / (2.0 * h)


def fd_quadratic_form(fun, x0, v, h=1e-4):
    """Central second difference: v' H v for H the Hessian of fun at x0."""
    f0 = fun(x0)
    return (fun(x0 + h * v) - 2.0 * f0 + fun(x0 - h * v)) / (h * h)


def bisect_scalar(fun, lo, hi, iters=200):
    """Root of a monotone scalar function by plain bisection."""
    flo = fun(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if (fun(mid) > 0) == (flo > 0):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Random instances and interior states for property tests
# ---------------------------------------------------------------------------

def random_setup(seed, n_nodes=10, radius=0.7, n_sessions=3, rate=1.0):
    """Dense random instance with sessions forced onto far-apart endpoint
    pairs, plus an interior loop-free state (all used links unsaturated)."""
    from meshopt.functions import HighSinrLog, MM1Packets
    from meshopt.generate import (GenConfig, Instance, generate_instance,
                                  hop_distances_to)

    cfg = GenConfig(n_nodes=n_nodes, radius=radius, seed=seed)
    inst = generate_instance(cfg)
    rng = np.random.default_rng(seed + 1000)
    top = inst.topology
    pairs = []
    for d in range(top.n):
        dist = hop_distances_to(top, d)
        for o in range(top.n):
            if dist[o] >= 2:
                pairs.append((dist[o], o, d))
    pairs.sort(reverse=True)
    sessions = tuple(Session(k, origin=o, dest=d, rate=rate)
                     for k, (_, o, d) in enumerate(pairs[:n_sessions]))
    inst = Instance(top, sessions, inst.positions, cfg)
    cap = HighSinrLog(cfg.k_proc)
    cost_fn = MM1Packets()
    state = interior_state(inst, rng, cap, cost_fn)
    return inst, state, cap, cost_fn, rng


def interior_state(inst, rng, cap, cost_fn, margin=0.3, tries=200):
    """Random loop-free state with every used link comfortably unsaturated."""
    from meshopt.generate import random_descent_state

    for _ in range(tries):
        state = random_descent_state(inst.topology, inst.sessions, rng)
        radio = compute_radio(inst.topology, cap, state)
        flow = compute_flows(inst.topology, inst.sessions, state)
        if np.min(radio.capacity - flow.link_flow) >= margin:
            return state
    raise RuntimeError("no interior state found")


# ---------------------------------------------------------------------------
# Hessian-bound gap oracles (finite differences vs. the lemma matrices)
# ---------------------------------------------------------------------------

def _derived(top, sessions, cost_fn, cap_fn, state):
    radio = compute_radio(top, cap_fn, state)
    flow = compute_flows(top, sessions, state)
    return radio, flow, total_cost(flow, radio, cost_fn, sessions)


def lemma_routing_gaps(top, sessions, cost_fn, cap_fn, state, trials, rng,
                       support_floor=0.02):
    """Worst relative FD-vs-bound gap for the routing Hessian bound,
    checked per (node, session) on the positive allowed support."""
    from meshopt.marginals import hop_counts, node_potentials
    from meshopt.scaling import curvature_bounds, hessian_bound_check
    from meshopt.steps import blocked_sets

    radio, flow, cost = _derived(top, sessions, cost_fn, cap_fn, state)
    pots = node_potentials(top, sessions, state, flow, radio, cost_fn)
    blocked = blocked_sets(top, sessions, state, pots)
    hops = hop_counts(top, sessions, blocked.allowed)
    bounds = curvature_bounds(top, radio, cost_fn, cap_fn, cost)
    worst = -np.inf
    checks = 0
    for w in range(len(sessions)):
        for i in range(top.n):
            an = blocked.allowed[w][i]
            t_i = flow.node_rate[w, i]
            sup = an[state.phi[w, an] > support_floor]
            if len(sup) < 2 or t_i <= 1e-9:
                continue
            heads = top.link_dst[an]
            entries_full = bounds.a_link[an] + len(an) * hops[w, heads] * bounds.a_max
            keep = np.isin(an, sup)
            mbar = t_i ** 2 * entries_full[keep]

            def fun(x, w=w, sup=sup):
                row = state.phi[w].copy()
                row[sup] = x
                return cost_of_state(top, sessions, cost_fn, cap_fn,
                                     state.with_phi_row(w, row))

            gap = hessian_bound_check(fun, state.phi[w, sup], mbar, trials,
                                      rng, zero_sum=True)
            worst = max(worst, gap / max(1.0, float(np.max(mbar))))
            checks += 1
    return worst, checks


def lemma_pa_gaps(top, sessions, cost_fn, cap_fn, state, trials, rng,
                  refined=False, k=None):
    """Worst relative FD-vs-bound gap for the power allocation bounds
    (standard or refined) across nodes with at least two out-links."""
    from meshopt.scaling import pa_scaling, refined_pa_scaling
    from meshopt.steps import interference_limited_check

    radio, flow, cost = _derived(top, sessions, cost_fn, cap_fn, state)
    from meshopt.scaling import hessian_bound_check

    worst = -np.inf
    checks = 0
    for i in range(top.n):
        ol = top.out_links[i]
        if len(ol) < 2:
            continue
        if refined:
            qbar, _ = refined_pa_scaling(top, state, radio, flow, i, cost_fn, k)
        else:
            qbar, _ = pa_scaling(top, state, radio, flow, i, cost_fn, cap_fn)

        def fun(x, ol=ol):
            eta = state.eta.copy()
            eta[ol] = x
            return cost_of_state(top, sessions, cost_fn, cap_fn,
                                 state.with_eta(eta))

        gap = hessian_bound_check(fun, state.eta[ol], qbar, trials, rng,
                                  zero_sum=True)
        worst = max(worst, gap / max(1.0, float(np.max(qbar))))
        checks += 1
    return worst, checks


def lemma_pc_gap(top, sessions, cost_fn, cap_fn, state, trials, rng):
    """Relative FD-vs-bound gap for the power control Hessian bound."""
    from meshopt.scaling import curvature_bounds, hessian_bound_check

    radio, flow, cost = _derived(top, sessions, cost_fn, cap_fn, state)
    bounds = curvature_bounds(top, radio, cost_fn, cap_fn, cost,
                              with_power_control=True)
    bracket = bounds.b_upper * bounds.kappa + bounds.b_lower * bounds.varphi
    vbar = top.n * top.m * bracket * np.log(top.power_cap) ** 2

    def fun(g):
        return cost_of_state(top, sessions, cost_fn, cap_fn,
                             state.with_gamma(g))

    gap = hessian_bound_check(fun, state.gamma, vbar, trials, rng,
                              zero_sum=False)
    return gap / max(1.0, float(np.max(vbar)))


def grid_search_simplex(objective, dims, resolution):
    """Dense minimization of objective over the probability simplex.

    Enumerates lattice points with coordinates k/resolution summing to 1
    (dims 2 or 3) and returns (best_point, best_value).
    """
    best, best_val = None, math.inf
    if dims == 2:
        for k in range(resolution + 1):
            x = np.array([k / resolution, 1.0 - k / resolution])
            val = objective(x)
            if val < best_val:
                best, best_val = x, val
    elif dims == 3:
        for k in range(resolution + 1):
            for l in range(resolution + 1 - k):
                x = np.array([k / resolution, l / resolution,
                              1.0 - (k + l) / resolution])
                val = objective(x)
                if val < best_val:
                    best, best_val = x, val
    else:
        raise ValueError("grid oracle supports 2-D and 3-D only")
    return best, best_val
