"""Network, session, and decision-variable model plus all derived state.

The decision vector is (phi, phi_over, eta, gamma): per-session routing
fractions on out-links, per-elastic-session overflow fractions, per-link
power allocation fractions, and per-node log-power controls.  From it the
radio state (link powers, interference, SINR, capacities) and the flow
state (node throughputs, link flows) are derived, and the total network
cost is the sum of link costs plus overflow utility losses.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .errors import MissingGain, RoutingCycle


class Topology:
    """Directed radio network with global path gains.

    Links carry traffic; gains may exist between any ordered node pair and
    feed the interference sums whether or not a link exists.  Absent gain
    entries contribute nothing.
    """

    def __init__(self, nodes, links, gain, noise, power_cap):
        self.node_ids = tuple(sorted(nodes))
        self.n = len(self.node_ids)
        self.idx = {v: k for k, v in enumerate(self.node_ids)}
        links = sorted(set((int(a), int(b)) for a, b in links))
        for (a, b) in links:
            if a == b:
                raise ValueError(f"self-link {a}")
            if a not in self.idx or b not in self.idx:
                raise ValueError(f"link ({a},{b}) references unknown node")
            if (a, b) not in gain:
                raise MissingGain(f"no path gain for link ({a},{b})")
        self.links = tuple(links)
        self.m = len(links)
        self.link_idx = {lk: e for e, lk in enumerate(links)}

        self.gain_matrix = np.zeros((self.n, self.n))
        for (a, b), g in gain.items():
            if a == b:
                continue
            if g <= 0:
                raise ValueError(f"gain G[{a},{b}] must be positive")
            if a in self.idx and b in self.idx:
                self.gain_matrix[self.idx[a], self.idx[b]] = float(g)

        self.noise = np.array([float(noise[v]) for v in self.node_ids])
        self.power_cap = np.array([float(power_cap[v]) for v in self.node_ids])
        if np.any(self.noise <= 0):
            raise ValueError("receiver noise must be positive")
        if np.any(self.power_cap <= 1):
            raise ValueError("power caps must exceed 1 (rescale the instance)")

        self.link_src = np.array([self.idx[a] for a, _ in links], dtype=np.intp)
        self.link_dst = np.array([self.idx[b] for _, b in links], dtype=np.intp)
        self.link_gain = self.gain_matrix[self.link_src, self.link_dst]

        out, into = [[] for _ in range(self.n)], [[] for _ in range(self.n)]
        for e in range(self.m):
            out[self.link_src[e]].append(e)
            into[self.link_dst[e]].append(e)
        self.out_links = [np.array(v, dtype=np.intp) for v in out]
        self.in_links = [np.array(v, dtype=np.intp) for v in into]
        self.out_degree = np.array([len(v) for v in out])
        # transmitters: nodes with at least one out-link actually radiate
        self.transmits = self.out_degree > 0

    def out_neighbors(self, i: int) -> np.ndarray:
        return self.link_dst[self.out_links[i]]

    def is_strongly_connected(self) -> bool:
        if self.n <= 1:
            return True
        fwd = [[] for _ in range(self.n)]
        rev = [[] for _ in range(self.n)]
        for e in range(self.m):
            fwd[self.link_src[e]].append(self.link_dst[e])
            rev[self.link_dst[e]].append(self.link_src[e])
        for adj in (fwd, rev):
            seen = {0}
            stack = [0]
            while stack:
                for j in adj[stack.pop()]:
                    if j not in seen:
                        seen.add(j)
                        stack.append(j)
            if len(seen) < self.n:
                return False
        return True


@dataclass(frozen=True)
class Session:
    """One traffic session; elastic iff a utility function is attached."""

    id: int
    origin: int
    dest: int
    rate: float  # fixed rate if inelastic, maximum desired rate if elastic
    utility: object | None = None

    def __post_init__(self):
        if self.origin == self.dest:
            raise ValueError("session origin equals destination")
        if self.rate <= 0:
            raise ValueError("session rate must be positive")

    @property
    def elastic(self) -> bool:
        return self.utility is not None


EPS_ETA = 1e-6  # hard floor on power allocation fractions


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)  # private copy so callers' buffers stay live
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class NetworkState:
    """Full decision vector.  Arrays are read-only; steps build new states."""

    phi: np.ndarray        # (W, E) routing fractions
    phi_over: np.ndarray   # (W,)   overflow fraction, 0 for inelastic sessions
    eta: np.ndarray        # (E,)   power allocation fractions
    gamma: np.ndarray      # (N,)   log-power controls, <= 1

    def __post_init__(self):
        object.__setattr__(self, "phi", _freeze(self.phi))
        object.__setattr__(self, "phi_over", _freeze(self.phi_over))
        object.__setattr__(self, "eta", _freeze(self.eta))
        object.__setattr__(self, "gamma", _freeze(self.gamma))

    def with_phi_row(self, w: int, row: np.ndarray, over: float | None = None) -> "NetworkState":
        phi = self.phi.copy()
        phi[w] = row
        phi_over = self.phi_over
        if over is not None:
            phi_over = self.phi_over.copy()
            phi_over[w] = over
        return NetworkState(phi, phi_over, self.eta, self.gamma)

    def with_eta(self, eta: np.ndarray) -> "NetworkState":
        return NetworkState(self.phi, self.phi_over, eta, self.gamma)

    def with_gamma(self, gamma: np.ndarray) -> "NetworkState":
        return NetworkState(self.phi, self.phi_over, self.eta, gamma)

    @classmethod
    def build(cls, topology: Topology, sessions, phi_map=None, eta_map=None,
              gamma_map=None, phi_over_map=None) -> "NetworkState":
        """Assemble a state from sparse {(i, j): value}-style maps.

        Defaults: phi all zero (caller must route), eta uniform per node,
        gamma all one, overflow zero.
        """
        W = len(sessions)
        phi = np.zeros((W, topology.m))
        if phi_map:
            for w, routes in phi_map.items():
                for (a, b), v in routes.items():
                    phi[w, topology.link_idx[(a, b)]] = v
        eta = np.zeros(topology.m)
        for i in range(topology.n):
            ol = topology.out_links[i]
            if len(ol):
                eta[ol] = 1.0 / len(ol)
        if eta_map:
            for (a, b), v in eta_map.items():
                eta[topology.link_idx[(a, b)]] = v
        gamma = np.ones(topology.n)
        if gamma_map:
            for v, g in gamma_map.items():
                gamma[topology.idx[v]] = g
        phi_over = np.zeros(W)
        if phi_over_map:
            for w, v in phi_over_map.items():
                phi_over[w] = v
        return cls(phi, phi_over, eta, gamma)


@dataclass(frozen=True)
class RadioState:
    link_power: np.ndarray     # (E,) P_ij
    node_power: np.ndarray     # (N,) total transmit power, 0 for silent nodes
    interference: np.ndarray   # (E,) interference-plus-noise at each receiver
    sinr: np.ndarray           # (E,)
    capacity: np.ndarray       # (E,)


@dataclass(frozen=True)
class FlowState:
    node_rate: np.ndarray     # (W, N) t_i(w)
    link_flow: np.ndarray     # (E,) F_ij
    overflow: np.ndarray      # (W,) F_wb
    admitted: np.ndarray      # (W,) r_w = rate - F_wb


def compute_radio(topology: Topology, capacity_fn, state: NetworkState) -> RadioState:
    """Derive link powers, interference, SINR, and capacity from the state.

    SINR_ij = G_ij P_ij / IN_ij with
    IN_ij = G_ij sum_{k != j} P_ik + sum_{m != i} G_mj P_m + N_j,
    which collapses to (total received power at j) - G_ij P_ij + N_j.
    """
    node_power = np.where(topology.transmits,
                          topology.power_cap ** state.gamma, 0.0)
    link_power = node_power[topology.link_src] * state.eta
    received = topology.gain_matrix.T @ node_power
    interference = (received[topology.link_dst]
                    - topology.link_gain * link_power
                    + topology.noise[topology.link_dst])
    sinr = topology.link_gain * link_power / interference
    capacity = np.asarray(capacity_fn.value(sinr), dtype=float)
    return RadioState(link_power, node_power, interference, sinr, capacity)


def session_topo_order(topology: Topology, phi_row: np.ndarray, session=None) -> list:
    """Topological node order of one session's active (phi > 0) graph.

    Raises RoutingCycle with a witness cycle if the active graph is cyclic.
    Deterministic: ready nodes are processed in ascending index order.
    """
    active = np.flatnonzero(phi_row > 0.0)
    indeg = np.zeros(topology.n, dtype=int)
    adj = [[] for _ in range(topology.n)]
    for e in active:
        s, d = topology.link_src[e], topology.link_dst[e]
        adj[s].append(d)
        indeg[d] += 1
    ready = [i for i in range(topology.n) if indeg[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        i = heapq.heappop(ready)
        order.append(i)
        for d in adj[i]:
            indeg[d] -= 1
            if indeg[d] == 0:
                heapq.heappush(ready, d)
    if len(order) < topology.n:
        left = set(range(topology.n)) - set(order)
        # trim nodes not on any cycle so the witness walk cannot dead-end
        trimmed = True
        while trimmed:
            trimmed = False
            for v in list(left):
                if not any(d in left for d in adj[v]):
                    left.discard(v)
                    trimmed = True
        cycle, seen, cur = [], set(), min(left)
        while cur not in seen:
            seen.add(cur)
            cycle.append(topology.node_ids[cur])
            cur = next(d for d in adj[cur] if d in left)
        raise RoutingCycle(session, cycle)
    return order


def compute_flows(topology: Topology, sessions, state: NetworkState) -> FlowState:
    """Propagate session rates through the routing DAGs and sum link flows."""
    W = len(sessions)
    node_rate = np.zeros((W, topology.n))
    overflow = np.zeros(W)
    for w, sess in enumerate(sessions):
        order = session_topo_order(topology, state.phi[w], session=sess.id)
        t = node_rate[w]
        t[topology.idx[sess.origin]] = sess.rate
        for i in order:
            ti = t[i]
            if ti == 0.0:
                continue
            for e in topology.out_links[i]:
                f = state.phi[w, e]
                if f > 0.0:
                    t[topology.link_dst[e]] += ti * f
        if sess.elastic:
            overflow[w] = t[topology.idx[sess.origin]] * state.phi_over[w]
    link_flow = np.einsum("we,we->e", state.phi,
                          node_rate[:, topology.link_src]) if W else np.zeros(topology.m)
    admitted = np.array([s.rate for s in sessions]) - overflow
    return FlowState(node_rate, link_flow, overflow, admitted)


def total_cost(flow: FlowState, radio: RadioState, cost_fn, sessions) -> float:
    """Sum of link costs plus overflow losses; +inf once any F_ij >= C_ij."""
    if np.any(flow.link_flow >= radio.capacity):
        return math.inf
    total = float(np.sum(cost_fn.value(radio.capacity, flow.link_flow)))
    for w, sess in enumerate(sessions):
        if sess.elastic:
            fwb = flow.overflow[w]
            if fwb >= sess.rate:
                loss = float(sess.utility.loss(min(fwb, sess.rate), sess.rate))
            else:
                loss = float(sess.utility.loss(fwb, sess.rate))
            if not math.isfinite(loss):
                return math.inf
            total += loss
    return total


@dataclass(frozen=True)
class Diagnostic:
    kind: str
    message: str
    session: object = None
    node: object = None
    link: object = None


def validate_state(topology: Topology, sessions, state: NetworkState,
                   tol: float = 1e-9) -> list:
    """Check every decision-vector invariant; empty list means valid."""
    out = []
    for w, sess in enumerate(sessions):
        dest = topology.idx[sess.dest]
        orig = topology.idx[sess.origin]
        for i in range(topology.n):
            ol = topology.out_links[i]
            row = state.phi[w, ol] if len(ol) else np.zeros(0)
            if np.any(row < -tol):
                out.append(Diagnostic("NegativeFraction",
                                      f"phi < 0 at node {topology.node_ids[i]}",
                                      session=sess.id, node=topology.node_ids[i]))
            if i == dest:
                if len(ol) and np.any(np.abs(row) > tol):
                    out.append(Diagnostic("DestinationForwarding",
                                          "phi nonzero at destination",
                                          session=sess.id, node=sess.dest))
                continue
            total = row.sum()
            if i == orig and sess.elastic:
                total += state.phi_over[w]
            if len(ol) == 0 and not (i == orig and sess.elastic):
                continue
            if abs(total - 1.0) > max(tol, 1e-9):
                out.append(Diagnostic("SimplexViolation",
                                      f"phi mass {total:.12g} != 1 at node "
                                      f"{topology.node_ids[i]}",
                                      session=sess.id, node=topology.node_ids[i]))
        try:
            session_topo_order(topology, state.phi[w], session=sess.id)
        except RoutingCycle as rc:
            out.append(Diagnostic("RoutingCycle", str(rc), session=sess.id))
        if state.phi_over[w] < -tol or state.phi_over[w] > 1 + tol:
            out.append(Diagnostic("OverflowRange", "phi_wb outside [0,1]",
                                  session=sess.id))
        if not sess.elastic and state.phi_over[w] != 0.0:
            out.append(Diagnostic("OverflowOnInelastic",
                                  "phi_wb nonzero for inelastic session",
                                  session=sess.id))
    for i in range(topology.n):
        ol = topology.out_links[i]
        if len(ol) == 0:
            continue
        vals = state.eta[ol]
        if abs(vals.sum() - 1.0) > tol:
            out.append(Diagnostic("EtaSimplexViolation",
                                  f"eta mass {vals.sum():.12g} != 1",
                                  node=topology.node_ids[i]))
        if np.any(vals < EPS_ETA * (1 - 1e-6)):
            out.append(Diagnostic("EtaFloorViolation",
                                  f"eta below floor {EPS_ETA}",
                                  node=topology.node_ids[i]))
    if np.any(state.gamma > 1 + tol):
        bad = topology.node_ids[int(np.argmax(state.gamma))]
        out.append(Diagnostic("GammaBound", "gamma > 1", node=bad))
    return out
