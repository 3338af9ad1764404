"""Node-based update steps and their supporting machinery.

Blocked-node sets make every update loop-free: a node never forwards toward
a neighbor with higher potential, nor starts forwarding toward an
equal-potential neighbor it is not already using.  The basic steps move
fractions toward the cheapest allowed coordinate with a scalar stepsize; the
general steps solve the scaled quadratic model exactly via the weighted
simplex projection.  Power control clips gamma at 1 after a scaled descent
move.  Optimality residuals measure how far each block is from the
equal-marginal conditions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AcyclicityViolation, CapacityModelMismatch, RoutingCycle
from .model import (EPS_ETA, FlowState, NetworkState, RadioState, Topology,
                    session_topo_order)
from .projection import weighted_simplex_project


@dataclass(frozen=True)
class BlockedSets:
    """Per (session, node) partition of out-links into allowed and blocked."""

    allowed: tuple   # allowed[w][i] -> np.ndarray of link indices
    blocked: tuple   # blocked[w][i] -> np.ndarray of link indices


def blocked_sets(topology: Topology, sessions, state: NetworkState,
                 potentials: np.ndarray) -> BlockedSets:
    """Blocking rule: j is blocked for (i, w) iff pot_j > pot_i, or
    phi_ij = 0 and pot_j = pot_i (the tie rule that kills zero-gain cycles).

    The potentials must be one consistent table (all consumers see the same
    values); the resulting allowed graph is then provably acyclic, which is
    asserted.
    """
    allowed_all, blocked_all = [], []
    for w, sess in enumerate(sessions):
        dest = topology.idx[sess.dest]
        pot = potentials[w]
        allowed_w, blocked_w = [], []
        for i in range(topology.n):
            ol = topology.out_links[i]
            if i == dest or len(ol) == 0:
                allowed_w.append(np.empty(0, dtype=np.intp))
                blocked_w.append(ol.copy())
                continue
            heads = topology.link_dst[ol]
            blk = (pot[heads] > pot[i]) | ((state.phi[w, ol] == 0.0)
                                           & (pot[heads] == pot[i]))
            allowed_w.append(ol[~blk])
            blocked_w.append(ol[blk])
        allowed_all.append(allowed_w)
        blocked_all.append(blocked_w)
        mask = np.zeros(topology.m)
        for i in range(topology.n):
            if i != dest:
                mask[allowed_w[i]] = 1.0
        try:
            session_topo_order(topology, mask, session=sess.id)
        except RoutingCycle as rc:
            raise AcyclicityViolation(
                f"allowed graph cyclic for session {sess.id}: {rc.cycle}") from rc
    return BlockedSets(tuple(allowed_all), tuple(blocked_all))


def _receiver(topology, delta, candidates):
    """Cheapest candidate link; ties go to the smallest head node id."""
    heads = topology.link_dst[candidates]
    order = np.lexsort((heads, delta[candidates]))
    return candidates[order[0]]


def brt_step(topology: Topology, state_row: np.ndarray,
             delta_row: np.ndarray, t_i: float, alpha: float,
             allowed: np.ndarray, blocked: np.ndarray) -> np.ndarray | None:
    """Basic routing move: shift alpha * a_ij / t_i (capped at the current
    fraction) from each costlier allowed link, plus all blocked mass, onto
    one cheapest allowed link.  No-op when the node carries no traffic."""
    if t_i <= 0.0 or len(allowed) == 0:
        return None
    row = state_row.copy()
    star = _receiver(topology, delta_row, allowed)
    dmin = delta_row[star]
    moved = float(row[blocked].sum())
    row[blocked] = 0.0
    for e in allowed:
        if e == star:
            continue
        a = delta_row[e] - dmin
        if a > 0.0:
            step = min(row[e], alpha * a / t_i)
            row[e] -= step
            moved += step
    row[star] += moved
    return row


def grt_step(topology: Topology, state_row: np.ndarray,
             delta_row: np.ndarray, m_diag: np.ndarray,
             allowed: np.ndarray, blocked: np.ndarray,
             t_i: float) -> np.ndarray | None:
    """General scaled projection move over the allowed simplex.

    m_diag holds the diagonal scaling over `allowed`.  A single zero entry
    reproduces the basic algorithm (zero penalty on the cheapest coordinate);
    it is solved by its closed-form KKT system instead of the projection.
    """
    if t_i <= 0.0 or len(allowed) == 0:
        return None
    row = state_row.copy()
    zero = m_diag <= 0.0
    if zero.any():
        if zero.sum() > 1:
            raise ValueError("at most one zero scaling entry is supported")
        star = allowed[int(np.argmax(zero))]
        theta = delta_row[star]
        moved = float(row[blocked].sum())
        row[blocked] = 0.0
        for a, e in zip(m_diag, allowed):
            if e == star:
                continue
            step = min(row[e], max(0.0, (delta_row[e] - theta) / a))
            row[e] -= step
            moved += step
        row[star] += moved
        return row
    mass = float(row[allowed].sum() + row[blocked].sum())
    y = row[allowed] - delta_row[allowed] / m_diag
    x = weighted_simplex_project(y, m_diag, mass=mass)
    row[blocked] = 0.0
    row[allowed] = x
    return row


def idle_reroute(topology: Topology, state_row: np.ndarray,
                 delta_row: np.ndarray, allowed: np.ndarray,
                 blocked: np.ndarray) -> np.ndarray | None:
    """Routing assignment for a node currently carrying no traffic: put all
    mass on one cheapest allowed link (cost-free, and it settles the
    optimality conditions at idle nodes)."""
    if len(allowed) == 0:
        return None
    row = state_row.copy()
    star = _receiver(topology, delta_row, allowed)
    row[blocked] = 0.0
    row[allowed] = 0.0
    row[star] = 1.0
    return None if np.array_equal(row, state_row) else row


def pa_step(topology: Topology, node: int, eta: np.ndarray,
            delta_eta: np.ndarray, p_i: float, mode: str,
            q_diag: np.ndarray | None = None, beta: float | None = None,
            eps_eta: float = EPS_ETA) -> np.ndarray | None:
    """Power allocation move at one node; returns the full new eta or None.

    mode "bpa": shift beta * b_ij / P_i (capped at eta_ij - floor) onto one
    cheapest link.  mode "gpa": scaled projection onto the floored simplex.
    Nodes with fewer than two out-links have nothing to allocate.
    """
    ol = topology.out_links[node]
    if len(ol) < 2:
        return None
    new = eta.copy()
    if mode == "bpa":
        star = _receiver(topology, delta_eta, ol)
        dmin = delta_eta[star]
        moved = 0.0
        for e in ol:
            if e == star:
                continue
            b = delta_eta[e] - dmin
            if b > 0.0:
                step = min(new[e] - eps_eta, beta * b / p_i)
                if step > 0.0:
                    new[e] -= step
                    moved += step
        new[star] += moved
    elif mode == "gpa":
        y = eta[ol] - delta_eta[ol] / q_diag
        free_mass = 1.0 - len(ol) * eps_eta
        x = weighted_simplex_project(y - eps_eta, q_diag, mass=free_mass)
        new[ol] = x + eps_eta
    else:
        raise ValueError(f"unknown power allocation mode {mode!r}")
    return new


def pc_step(gamma: np.ndarray, delta_gamma: np.ndarray,
            node_power: np.ndarray, v: np.ndarray, capacity_fn,
            update_set=None) -> np.ndarray:
    """Power control move gamma_i <- min(1, gamma_i - dgamma_i / v_i) for
    nodes in the update set (all transmitting nodes by default)."""
    if not getattr(capacity_fn, "log_concave_in_power", False):
        raise CapacityModelMismatch(
            "power control needs a capacity model concave in log powers")
    new = gamma.copy()
    idx = np.arange(len(gamma)) if update_set is None else np.asarray(update_set)
    for i in idx:
        if node_power[i] > 0.0:
            new[i] = min(1.0, gamma[i] - delta_gamma[i] / v[i])
    return new


def cr_step(topology: Topology, state_row: np.ndarray,
            over: float, delta_row: np.ndarray, delta_over: float,
            m_diag: np.ndarray, m_over: float, allowed: np.ndarray,
            blocked: np.ndarray, t_i: float):
    """Congestion control / routing move at an elastic session's source:
    the general routing step over the simplex extended by the overflow
    coordinate, which is never blocked."""
    if t_i <= 0.0:
        return None
    y = np.concatenate([state_row[allowed] - delta_row[allowed] / m_diag,
                        [over - delta_over / m_over]])
    w = np.concatenate([m_diag, [m_over]])
    mass = float(state_row[allowed].sum() + state_row[blocked].sum() + over)
    x = weighted_simplex_project(y, w, mass=mass)
    row = state_row.copy()
    row[blocked] = 0.0
    row[allowed] = x[:-1]
    return row, float(x[-1])


def interference_limited_check(topology: Topology, radio: RadioState,
                               k: float) -> np.ndarray:
    """Per-link test K G_ij P_ij <= (K - 2) IN_ij (capacity concavity regime)."""
    if k <= 2:
        raise ValueError("processing gain must exceed 2")
    return (k * topology.link_gain * radio.link_power
            <= (k - 2.0) * radio.interference)


@dataclass(frozen=True)
class OptimalityResidual:
    """Distance from the equal-marginal optimality conditions, per block."""

    routing: np.ndarray      # (W, N)
    power_alloc: np.ndarray  # (N,)
    power_ctrl: np.ndarray   # (N,)
    congestion: np.ndarray   # (W,)

    def overall(self, blocks=("routing", "power_alloc", "power_ctrl",
                              "congestion")) -> float:
        parts = [float(np.max(getattr(self, b))) if getattr(self, b).size else 0.0
                 for b in blocks]
        return max(parts) if parts else 0.0


def optimality_residuals(topology: Topology, sessions, state: NetworkState,
                         report, blocked: BlockedSets,
                         radio: RadioState) -> OptimalityResidual:
    """Residuals: positive-fraction marginals must equal the per-node
    minimum, no allowed coordinate may undercut it, delta_eta must be equal
    across out-links, and delta_gamma must vanish (or push against gamma=1).
    """
    W = len(sessions)
    routing = np.zeros((W, topology.n))
    congestion = np.zeros(W)
    for w, sess in enumerate(sessions):
        dest = topology.idx[sess.dest]
        orig = topology.idx[sess.origin]
        for i in range(topology.n):
            ol = topology.out_links[i]
            if i == dest or len(ol) == 0:
                continue
            delta = report.delta_phi[w]
            pos = ol[state.phi[w, ol] > 0.0]
            vals = list(delta[pos])
            use_over = sess.elastic and i == orig
            if use_over and state.phi_over[w] > 0.0:
                vals.append(report.delta_phi_over[w])
            if not vals:
                continue
            lam = min(vals)
            undercut = 0.0
            al = blocked.allowed[w][i]
            if len(al):
                undercut = max(0.0, lam - float(np.min(delta[al])))
            spread = max(abs(v - lam) for v in vals)
            routing[w, i] = undercut + spread
            if use_over:
                if state.phi_over[w] > 0.0:
                    congestion[w] = abs(report.delta_phi_over[w] - lam)
                else:
                    congestion[w] = max(0.0, lam - report.delta_phi_over[w])
    power_alloc = np.zeros(topology.n)
    power_ctrl = np.zeros(topology.n)
    for i in range(topology.n):
        ol = topology.out_links[i]
        if len(ol) >= 2:
            de = report.delta_eta[ol]
            power_alloc[i] = float(np.max(de) - np.min(de))
        if len(ol) >= 1 and radio.node_power[i] > 0.0:
            slope = report.delta_gamma[i] / radio.node_power[i]
            if state.gamma[i] >= 1.0 - 1e-12:
                power_ctrl[i] = max(0.0, slope)
            else:
                power_ctrl[i] = abs(slope)
    return OptimalityResidual(routing, power_alloc, power_ctrl, congestion)
