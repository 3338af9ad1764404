"""First-derivative quantities that drive every update step.

Node potentials dD/dr_i(w) are computed by the backward recursion over each
session's routing DAG; from them come the marginal routing costs.  Marginal
power allocation costs use only link-local measures.  Marginal power control
costs aggregate one flooded scalar per node (MSG) weighted by path gain,
optionally restricted to the closest nodes by gain.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import RoutingCycle, ScopeTooLarge
from .model import FlowState, NetworkState, RadioState, Topology, session_topo_order


class Staleness(Enum):
    """Whether consumers see live marginals or values frozen at the
    producer's last iteration (the delayed-message model)."""

    FRESH = "fresh"
    CACHED = "cached"


@dataclass(frozen=True)
class MarginalReport:
    node_potential: np.ndarray   # (W, N) dD/dr_i(w), zero at destinations
    delta_phi: np.ndarray        # (W, E)
    delta_phi_over: np.ndarray   # (W,) B'_w(F_wb) for elastic sessions
    delta_eta: np.ndarray        # (E,)
    msg: np.ndarray              # (N,)
    delta_gamma: np.ndarray      # (N,)
    hop_count: np.ndarray | None = None  # (W, N), filled once blocking is known


def node_potentials(topology: Topology, sessions, state: NetworkState,
                    flow: FlowState, radio: RadioState, cost_fn) -> np.ndarray:
    """dD/dr_i(w) by backward recursion, zero at each destination.

    At an elastic session's origin the overflow link contributes
    phi_wb * B'_w(F_wb) like any other out-edge.
    """
    ddf = np.asarray(cost_fn.dF(radio.capacity, flow.link_flow), dtype=float)
    W = len(sessions)
    pot = np.zeros((W, topology.n))
    for w, sess in enumerate(sessions):
        order = session_topo_order(topology, state.phi[w], session=sess.id)
        dest = topology.idx[sess.dest]
        p = pot[w]
        for i in reversed(order):
            if i == dest:
                continue
            acc = 0.0
            for e in topology.out_links[i]:
                f = state.phi[w, e]
                if f > 0.0:
                    acc += f * (ddf[e] + p[topology.link_dst[e]])
            if sess.elastic and i == topology.idx[sess.origin] and state.phi_over[w] > 0.0:
                acc += state.phi_over[w] * float(
                    sess.utility.dloss(flow.overflow[w], sess.rate))
            p[i] = acc
    return pot


def session_potential(topology: Topology, sessions, w: int,
                      state: NetworkState, flow: FlowState,
                      radio: RadioState, cost_fn) -> np.ndarray:
    """One session's potential vector (the backward recursion for w only)."""
    ddf = np.asarray(cost_fn.dF(radio.capacity, flow.link_flow), dtype=float)
    sess = sessions[w]
    order = session_topo_order(topology, state.phi[w], session=sess.id)
    dest = topology.idx[sess.dest]
    p = np.zeros(topology.n)
    for i in reversed(order):
        if i == dest:
            continue
        acc = 0.0
        for e in topology.out_links[i]:
            f = state.phi[w, e]
            if f > 0.0:
                acc += f * (ddf[e] + p[topology.link_dst[e]])
        if sess.elastic and i == topology.idx[sess.origin] and state.phi_over[w] > 0.0:
            acc += state.phi_over[w] * float(
                sess.utility.dloss(flow.overflow[w], sess.rate))
        p[i] = acc
    return p


def marginal_routing_costs(topology: Topology, potentials: np.ndarray,
                           flow: FlowState, radio: RadioState, cost_fn,
                           sessions):
    """delta_phi_ij(w) = dD_ij/dF_ij + dD/dr_j(w); overflow gets B'_w(F_wb).

    Defined on every link for every session, including zero-flow links.
    """
    ddf = np.asarray(cost_fn.dF(radio.capacity, flow.link_flow), dtype=float)
    delta_phi = ddf[None, :] + potentials[:, topology.link_dst]
    delta_over = np.zeros(len(sessions))
    for w, sess in enumerate(sessions):
        if sess.elastic:
            delta_over[w] = float(sess.utility.dloss(flow.overflow[w], sess.rate))
    return delta_phi, delta_over


def marginal_power_alloc_costs(topology: Topology, state: NetworkState,
                               radio: RadioState, flow: FlowState, cost_fn,
                               capacity_fn, refined: bool = False) -> np.ndarray:
    """Per-link marginal power allocation cost from local measures only.

    Standard form: dD/dC * C'(x) * x / P_ij * (1 + x).
    Refined form (exact ln(1+Kx) capacity, fixed total powers):
    dD/dC * [(K-1) G / (K G P_ij + IN) + G / IN].
    """
    ddc = np.asarray(cost_fn.dC(radio.capacity, flow.link_flow), dtype=float)
    if not refined:
        c1 = np.asarray(capacity_fn.deriv(radio.sinr), dtype=float)
        return ddc * c1 * radio.sinr / radio.link_power * (1.0 + radio.sinr)
    k = capacity_fn.k
    g = topology.link_gain
    return ddc * ((k - 1.0) * g / (k * g * radio.link_power + radio.interference)
                  + g / radio.interference)


def power_control_messages(topology: Topology, radio: RadioState,
                           flow: FlowState, cost_fn, capacity_fn) -> np.ndarray:
    """MSG(n) = sum over incoming links (m,n) of
    -dD_mn/dC_mn * C'_mn * SINR_mn^2 / (G_mn P_mn); zero with no in-links."""
    ddc = np.asarray(cost_fn.dC(radio.capacity, flow.link_flow), dtype=float)
    c1 = np.asarray(capacity_fn.deriv(radio.sinr), dtype=float)
    terms = -ddc * c1 * radio.sinr / radio.interference
    msg = np.zeros(topology.n)
    np.add.at(msg, topology.link_dst, terms)
    return msg


def _scope_mask(topology: Topology, k: int) -> np.ndarray:
    """Boolean (N, N) mask keeping, per row i, the k largest gains G_in.

    Ties broken toward the smaller node index; zero-gain columns never count.
    """
    if k > topology.n - 1:
        raise ScopeTooLarge(f"k={k} exceeds |N|-1={topology.n - 1}")
    mask = np.zeros((topology.n, topology.n), dtype=bool)
    for i in range(topology.n):
        gains = topology.gain_matrix[i]
        cand = np.flatnonzero(gains > 0.0)
        if len(cand) > k:
            order = cand[np.lexsort((cand, -gains[cand]))][:k]
        else:
            order = cand
        mask[i, order] = True
    return mask


def marginal_power_control_costs(topology: Topology, msgs: np.ndarray,
                                 delta_eta: np.ndarray, state: NetworkState,
                                 radio: RadioState, scope="all") -> np.ndarray:
    """delta_gamma_i = P_i * (sum_n G_in MSG(n) + sum_{n in O(i)} d_eta_in eta_in).

    scope="all" uses every gain entry; an integer k keeps only the k nodes
    with the largest G_in (the local message-exchange approximation).  The
    own-neighbor delta_eta term is always included.
    """
    own = np.zeros(topology.n)
    np.add.at(own, topology.link_src, delta_eta * state.eta)
    if scope == "all" or scope is None:
        cross = topology.gain_matrix @ msgs
    else:
        mask = _scope_mask(topology, int(scope))
        cross = (topology.gain_matrix * mask) @ msgs
    return radio.node_power * (cross + own)


def hop_counts(topology: Topology, sessions, allowed_out) -> np.ndarray:
    """Longest-hop counts to each destination over the allowed edge sets.

    allowed_out[w][i] is the iterable of allowed out-link indices of node i
    for session w.  h at the destination is 0; a non-destination node with
    no allowed out-edge gets the conservative cap |N| - 1.
    """
    W = len(sessions)
    hops = np.zeros((W, topology.n), dtype=int)
    cap = topology.n - 1
    for w, sess in enumerate(sessions):
        dest = topology.idx[sess.dest]
        phi_like = np.zeros(topology.m)
        for i in range(topology.n):
            if i == dest:
                continue
            for e in allowed_out[w][i]:
                phi_like[e] = 1.0
        order = session_topo_order(topology, phi_like, session=sess.id)
        h = hops[w]
        for i in reversed(order):
            if i == dest:
                h[i] = 0
                continue
            ae = allowed_out[w][i]
            if len(ae) == 0:
                h[i] = cap
            else:
                h[i] = 1 + max(h[topology.link_dst[e]] for e in ae)
    return hops


def lemma1_residual(topology: Topology, flow: FlowState, radio: RadioState,
                    cost_fn, potentials: np.ndarray, sessions,
                    state: NetworkState) -> float:
    """Relative residual of the flow/potential identity
    sum_links dD/dF * F (+ overflow terms) = sum_w dD/dr_O(w) * t_O(w)."""
    ddf = np.asarray(cost_fn.dF(radio.capacity, flow.link_flow), dtype=float)
    lhs = float(np.dot(ddf, flow.link_flow))
    rhs = 0.0
    for w, sess in enumerate(sessions):
        if sess.elastic:
            lhs += float(sess.utility.dloss(flow.overflow[w], sess.rate)) \
                * flow.overflow[w]
        rhs += potentials[w, topology.idx[sess.origin]] * sess.rate
    return abs(lhs - rhs) / max(1.0, abs(lhs))


def compute_marginals(topology: Topology, sessions, state: NetworkState,
                      flow: FlowState, radio: RadioState, cost_fn,
                      capacity_fn, refined: bool = False,
                      scope="all") -> MarginalReport:
    """Assemble the full marginal report from exact current values."""
    pot = node_potentials(topology, sessions, state, flow, radio, cost_fn)
    dphi, dover = marginal_routing_costs(topology, pot, flow, radio,
                                         cost_fn, sessions)
    deta = marginal_power_alloc_costs(topology, state, radio, flow, cost_fn,
                                      capacity_fn, refined=refined)
    msg = power_control_messages(topology, radio, flow, cost_fn, capacity_fn)
    dgamma = marginal_power_control_costs(topology, msg, deta, state, radio,
                                          scope=scope)
    return MarginalReport(pot, dphi, dover, deta, msg, dgamma)
