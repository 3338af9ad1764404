"""Optimizer drivers: sequential node-by-node sweeps with guaranteed descent.

One iteration runs every node's routing (or congestion/routing) update, then
every node's power allocation update, then one power control update.  Blocked
sets, hop counts, and the budget-dependent routing bounds are rebuilt once
per sweep from a consistent potential snapshot; the marginals driving each
step are read through a message environment (exact for the centralized
drivers, ledger-based with staleness and noise for the protocol simulator).

A descent guard backstops the exact-arithmetic descent guarantee: a
candidate step whose cost rises by more than a hair is halved toward the
feasible anchor (the previous point with any blocked mass reassigned), and
the run aborts or records a violation if even the anchor ascends.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (CapacityDomain, DescentGuardExhausted, InitialInfeasible)
from .marginals import (compute_marginals, hop_counts,
                        marginal_power_alloc_costs,
                        marginal_power_control_costs, node_potentials,
                        power_control_messages)
from .model import (EPS_ETA, FlowState, NetworkState, RadioState, Topology,
                    compute_flows, compute_radio, total_cost)
from .scaling import (curvature_bounds, pa_scaling, pc_scaling,
                      refined_pa_scaling, routing_scaling)
from .steps import (blocked_sets, brt_step, cr_step, grt_step, idle_reroute,
                    optimality_residuals, pa_step, pc_step)


@dataclass(frozen=True)
class OptimizerConfig:
    rt: str = "grt"            # "brt" | "grt" | "grt-brt" | "off"
    pa: str = "gpa"            # "bpa" | "gpa" | "off"
    pc: bool = True
    cr: bool = False
    iters: int = 500
    tol: float = 1e-4
    order: str = "round_robin"  # | "random"
    seed: int = 0
    pc_subset: int | None = None
    pc_scope: object = "all"   # "all" or int k (nearest-by-gain message scope)
    record_states: bool = False
    guard_max_halvings: int = 40
    guard_slack: float = 1e-12
    # keep each lemma-scaled step as the base candidate but probe doubled
    # extensions along its direction, accepting the best cost seen; descent
    # is never worse than the base step's, so convergence is preserved while
    # the worst-case-bound stepsizes stop throttling the approach
    accelerate: bool = True
    accel_doublings: int = 70

    def enabled_blocks(self):
        blocks = []
        if self.rt != "off":
            blocks.append("routing")
        if self.pa != "off":
            blocks.append("power_alloc")
        if self.pc:
            blocks.append("power_ctrl")
        if self.cr:
            blocks.append("congestion")
        return tuple(blocks)


@dataclass
class Trajectory:
    costs: list = field(default_factory=list)       # [0] is the initial cost
    residuals: list = field(default_factory=list)
    states: list = field(default_factory=list)
    final_state: NetworkState | None = None
    converged_at: int | None = None
    guard_halvings: int = 0
    guard_reverts: int = 0
    monotonicity_violations: int = 0
    infeasible_sweeps: int = 0
    extra: dict = field(default_factory=dict)


class Runtime:
    """Mutable working copy of the decision vector plus derived caches."""

    def __init__(self, topology, sessions, state: NetworkState, cost_fn,
                 capacity_fn, refined_pa=False):
        self.top = topology
        self.sessions = list(sessions)
        self.cost_fn = cost_fn
        self.capacity_fn = capacity_fn
        self.refined_pa = refined_pa
        self.phi = state.phi.copy()
        self.phi_over = state.phi_over.copy()
        self.eta = state.eta.copy()
        self.gamma = state.gamma.copy()
        self.refresh()

    # -- derived state ------------------------------------------------------

    def snapshot(self) -> NetworkState:
        return NetworkState(self.phi, self.phi_over, self.eta, self.gamma)

    def refresh(self):
        self.radio = compute_radio(self.top, self.capacity_fn, self.snapshot())
        self.flow = compute_flows(self.top, self.sessions, self.snapshot())
        self.cost = total_cost(self.flow, self.radio, self.cost_fn,
                               self.sessions)

    def _flow_for(self, w, row, over):
        phi = self.phi.copy()
        phi[w] = row
        phi_over = self.phi_over.copy()
        phi_over[w] = over
        cand = NetworkState(phi, phi_over, self.eta, self.gamma)
        return cand, compute_flows(self.top, self.sessions, cand)

    def eval_phi(self, w, row, over):
        from .errors import RoutingCycle

        try:
            _, flow = self._flow_for(w, row, over)
        except RoutingCycle:
            # stale or noisy potentials can propose loop-forming candidates;
            # price them out so the guard rejects them
            return math.inf, None
        return total_cost(flow, self.radio, self.cost_fn, self.sessions), flow

    def commit_phi(self, w, row, over, cost, flow):
        self.phi[w] = row
        self.phi_over[w] = over
        self.flow = flow
        self.cost = cost

    def eval_eta(self, eta):
        state = NetworkState(self.phi, self.phi_over, eta, self.gamma)
        radio = compute_radio(self.top, self.capacity_fn, state)
        return total_cost(self.flow, radio, self.cost_fn, self.sessions), radio

    def commit_eta(self, eta, cost, radio):
        self.eta = np.asarray(eta)
        self.radio = radio
        self.cost = cost

    def eval_gamma(self, gamma):
        state = NetworkState(self.phi, self.phi_over, self.eta, gamma)
        radio = compute_radio(self.top, self.capacity_fn, state)
        return total_cost(self.flow, radio, self.cost_fn, self.sessions), radio

    def commit_gamma(self, gamma, cost, radio):
        self.gamma = np.asarray(gamma)
        self.radio = radio
        self.cost = cost

    # -- exact marginal pieces ----------------------------------------------

    def potentials(self):
        return node_potentials(self.top, self.sessions, self.snapshot(),
                               self.flow, self.radio, self.cost_fn)

    def ddf(self):
        return np.asarray(self.cost_fn.dF(self.radio.capacity,
                                          self.flow.link_flow), dtype=float)

    def delta_eta(self):
        return marginal_power_alloc_costs(self.top, self.snapshot(),
                                          self.radio, self.flow, self.cost_fn,
                                          self.capacity_fn,
                                          refined=self.refined_pa)

    def msgs(self):
        return power_control_messages(self.top, self.radio, self.flow,
                                      self.cost_fn, self.capacity_fn)


class ExactMessages:
    """Centralized message environment: everyone sees live exact values."""

    tolerant = False  # descent-guard exhaustion is a hard error

    def blocking_potentials(self, rt: Runtime):
        return rt.potentials()

    def session_potentials(self, rt: Runtime, node, w):
        from .marginals import session_potential

        return session_potential(rt.top, rt.sessions, w, rt.snapshot(),
                                 rt.flow, rt.radio, rt.cost_fn)

    def publish_routing(self, rt, node, w):
        pass

    def delta_gamma(self, rt: Runtime, scope):
        return marginal_power_control_costs(rt.top, rt.msgs(), rt.delta_eta(),
                                            rt.snapshot(), rt.radio,
                                            scope=scope)

    def publish_msgs(self, rt, nodes):
        pass


def _line_search(cfg, base_cost, make_candidate, evaluate):
    """Evaluate the lemma step (scale 1), then stepsize doublings of the same
    update rule, returning the cheapest candidate seen.

    Candidates that do not move (worst-case stepsizes routinely fall below
    one float ulp) are skipped without a cost evaluation, so the search jumps
    to the first scale that produces a representable step.  The scale-1
    candidate is always evaluated first: the accepted move is never worse
    than the guaranteed-descent step.
    """
    first = make_candidate(1.0)
    if first is None:
        return None
    cost, aux = evaluate(first)
    best = (cost, first, aux)
    if not cfg.accelerate or cost > base_cost + cfg.guard_slack:
        return best
    improved = False
    prev = first
    scale = 2.0
    fast_forwards = 60
    doublings = cfg.accel_doublings
    while doublings > 0:
        cand = make_candidate(scale)
        if cand is None:
            break
        if np.array_equal(cand, prev):
            # sub-ulp step at this scale: leap ahead instead of crawling
            if fast_forwards == 0:
                break
            fast_forwards -= 1
            scale *= 256.0
            continue
        scale *= 2.0
        doublings -= 1
        prev = cand
        c, a = evaluate(cand)
        if c < best[0]:
            best = (c, cand, a)
            improved = True
        elif improved:
            break
    return best


def _guarded_phi(rt, tr, cfg, messages, w, make_candidate, anchor_row,
                 anchor_over):
    """Line-searched, descent-guarded commit of a routing/CR candidate.

    make_candidate(scale) returns a (row, over) pair (the step rule at the
    given stepsize multiple) or None for a no-op.
    """
    base = rt.cost

    def packed(scale):
        out = make_candidate(scale)
        if out is None:
            return None
        row, over = out
        return np.concatenate([row, [over]])

    def evaluate(vec):
        return rt.eval_phi(w, vec[:-1], vec[-1])

    found = _line_search(cfg, base, packed, evaluate)
    if found is None:
        return
    cost, vec, flow = found
    row, over = vec[:-1], vec[-1]
    halvings = 0
    while cost > base + cfg.guard_slack and halvings < cfg.guard_max_halvings:
        row = 0.5 * (row + anchor_row)
        over = 0.5 * (over + anchor_over)
        cost, flow = rt.eval_phi(w, row, over)
        halvings += 1
    tr.guard_halvings += halvings
    if cost > base + cfg.guard_slack:
        cost_a, flow_a = rt.eval_phi(w, anchor_row, anchor_over)
        if cost_a <= base + cfg.guard_slack:
            tr.guard_reverts += 1
            rt.commit_phi(w, anchor_row, anchor_over, cost_a, flow_a)
            return
        if not messages.tolerant:
            raise DescentGuardExhausted(
                f"routing step at session {w} ascends by {cost_a - base:.3e}")
        tr.monotonicity_violations += 1
        rt.commit_phi(w, anchor_row, anchor_over, cost_a, flow_a)
        return
    rt.commit_phi(w, row, over, cost, flow)


def _guarded_block(rt, tr, cfg, messages, make_candidate, anchor, evaluate,
                   commit):
    base = rt.cost
    found = _line_search(cfg, base, make_candidate, evaluate)
    if found is None:
        return
    cost, candidate, aux = found
    halvings = 0
    while cost > base + cfg.guard_slack and halvings < cfg.guard_max_halvings:
        candidate = 0.5 * (candidate + anchor)
        cost, aux = evaluate(candidate)
        halvings += 1
    tr.guard_halvings += halvings
    if cost > base + cfg.guard_slack:
        tr.guard_reverts += 1
        return  # keep the previous point (always feasible for eta/gamma)
    commit(candidate, cost, aux)


def _feasibility_pass(rt: Runtime, tr: Trajectory, cfg, blocked, pots):
    """Zero every blocked coordinate that still carries mass, reassigning it
    to the cheapest allowed link, before any step runs.

    Afterwards every active edge of every session is an allowed edge, so all
    mid-sweep states and candidates stay loop-free by the potential order.
    A forced reassignment that raises cost is recorded, never skipped: the
    loop-freedom invariant outranks monotonicity here.
    """
    from .steps import _receiver

    ddf = rt.ddf()
    for w in range(len(rt.sessions)):
        delta = ddf + pots[w][rt.top.link_dst]
        for i in range(rt.top.n):
            blk = blocked.blocked[w][i]
            if len(blk) == 0:
                continue
            mass = float(rt.phi[w, blk].sum())
            if mass <= 0.0:
                continue
            al = blocked.allowed[w][i]
            if len(al) == 0:
                continue  # nowhere to move it (stale potentials only)
            row = rt.phi[w].copy()
            row[blk] = 0.0
            row[_receiver(rt.top, delta, al)] += mass
            cost, flow = rt.eval_phi(w, row, rt.phi_over[w])
            if not math.isfinite(cost):
                continue
            if cost > rt.cost + cfg.guard_slack:
                tr.monotonicity_violations += 1
            rt.commit_phi(w, row, rt.phi_over[w], cost, flow)


def _node_order(cfg, topology, sweep, rng):
    if cfg.order == "round_robin":
        return list(range(topology.n))
    if cfg.order == "random":
        return list(rng.permutation(topology.n))
    raise ValueError(f"unknown node order {cfg.order!r}")


def _pc_update_set(cfg, topology, sweep):
    nodes = [i for i in range(topology.n) if topology.out_degree[i] > 0]
    if cfg.pc_subset is None or cfg.pc_subset >= len(nodes):
        return nodes
    k = cfg.pc_subset
    start = (sweep * k) % len(nodes)
    return [nodes[(start + j) % len(nodes)] for j in range(k)]


def run_loop(topology, sessions, initial: NetworkState, cost_fn, capacity_fn,
             cfg: OptimizerConfig, messages=None, scenario=None,
             refined_pa=False, extra_cost_models=None) -> Trajectory:
    """Shared sweep loop for every driver.  Returns the full trajectory."""
    if cfg.pc and not getattr(capacity_fn, "log_concave_in_power", False):
        raise CapacityDomain("power control paired with a capacity model "
                             "that is not concave in log powers")
    messages = messages if messages is not None else ExactMessages()
    rng = np.random.default_rng(cfg.seed)
    rt = Runtime(topology, sessions, initial, cost_fn, capacity_fn,
                 refined_pa=refined_pa)
    tr = Trajectory()
    if not math.isfinite(rt.cost):
        raise InitialInfeasible("initial cost is infinite")
    budget = rt.cost
    v = None
    if cfg.pc:
        bounds0 = curvature_bounds(rt.top, rt.radio, cost_fn, capacity_fn,
                                   budget, with_power_control=True)
        v = pc_scaling(bounds0, rt.top)
    tr.costs.append(rt.cost)
    tr.residuals.append(_residual(rt, cfg))
    if cfg.record_states:
        tr.states.append(rt.snapshot())
    _record_extra(tr, rt, extra_cost_models)

    for sweep in range(1, cfg.iters + 1):
        if scenario is not None:
            changed = scenario(sweep, rt)
            if changed:
                rt.refresh()
                if math.isfinite(rt.cost):
                    budget = max(budget, rt.cost)
                    if cfg.pc:
                        bounds0 = curvature_bounds(rt.top, rt.radio, cost_fn,
                                                   capacity_fn, budget,
                                                   with_power_control=True)
                        v = pc_scaling(bounds0, rt.top)
        if not math.isfinite(rt.cost):
            # adaptivity scenarios can overload the network; freeze until a
            # later perturbation restores feasibility
            tr.infeasible_sweeps += 1
            tr.costs.append(rt.cost)
            tr.residuals.append(math.inf)
            if cfg.record_states:
                tr.states.append(rt.snapshot())
            _record_extra(tr, rt, extra_cost_models)
            continue

        pots = messages.blocking_potentials(rt)
        blocked = blocked_sets(rt.top, rt.sessions, rt.snapshot(), pots)
        hops = hop_counts(rt.top, rt.sessions, blocked.allowed)
        if cfg.rt != "off" or cfg.cr:
            _feasibility_pass(rt, tr, cfg, blocked, pots)
        a_link = np.asarray(cost_fn.d2F_max(budget, rt.radio.capacity),
                            dtype=float)
        a_max = float(np.max(a_link)) if len(a_link) else 0.0
        order = _node_order(cfg, rt.top, sweep, rng)

        if cfg.rt != "off":
            _routing_sweep(rt, tr, cfg, messages, blocked, hops, a_link,
                           a_max, budget, order)
        if cfg.pa != "off":
            _pa_sweep(rt, tr, cfg, messages, order)
        if cfg.pc:
            _pc_sweep(rt, tr, cfg, messages, v, sweep)

        res = _residual(rt, cfg)
        tr.costs.append(rt.cost)
        tr.residuals.append(res)
        if cfg.record_states:
            tr.states.append(rt.snapshot())
        _record_extra(tr, rt, extra_cost_models)
        if res <= cfg.tol and scenario is None:
            tr.converged_at = sweep
            break
    tr.final_state = rt.snapshot()
    return tr


def _residual(rt: Runtime, cfg: OptimizerConfig) -> float:
    if not math.isfinite(rt.cost):
        return math.inf
    report = compute_marginals(rt.top, rt.sessions, rt.snapshot(), rt.flow,
                               rt.radio, rt.cost_fn, rt.capacity_fn,
                               refined=rt.refined_pa)
    blocked = blocked_sets(rt.top, rt.sessions, rt.snapshot(),
                           report.node_potential)
    res = optimality_residuals(rt.top, rt.sessions, rt.snapshot(), report,
                               blocked, rt.radio)
    blocks = cfg.enabled_blocks()
    return res.overall(blocks) if blocks else 0.0


def _record_extra(tr, rt, extra_cost_models):
    if not extra_cost_models:
        return
    for name, capfn in extra_cost_models.items():
        radio = compute_radio(rt.top, capfn, rt.snapshot())
        tr.extra.setdefault(name, []).append(
            total_cost(rt.flow, radio, rt.cost_fn, rt.sessions))


def _routing_sweep(rt, tr, cfg, messages, blocked, hops, a_link, a_max,
                   budget, order):
    from .scaling import CurvatureBounds

    bounds = CurvatureBounds(budget=budget, a_link=a_link, a_max=a_max,
                             x_bar=0.0, kappa=0.0, varphi=0.0)
    for i in order:
        for w, sess in enumerate(rt.sessions):
            dest = rt.top.idx[sess.dest]
            if i == dest or rt.top.out_degree[i] == 0:
                continue
            allowed = blocked.allowed[w][i]
            blk = blocked.blocked[w][i]
            if len(allowed) == 0:
                continue  # stale/noisy potentials may strand a node
            pot_w = messages.session_potentials(rt, i, w)
            ddf = rt.ddf()
            delta = ddf + pot_w[rt.top.link_dst]
            t_i = rt.flow.node_rate[w, i]
            is_source = sess.elastic and i == rt.top.idx[sess.origin]
            if t_i <= 0.0:
                row = idle_reroute(rt.top, rt.phi[w], delta, allowed, blk)
                if row is not None:
                    # no traffic: flows and cost are untouched by construction
                    rt.phi[w] = row
                messages.publish_routing(rt, i, w)
                continue
            heads = rt.top.link_dst[allowed]
            entries = a_link[allowed] + len(allowed) * hops[w, heads] * a_max
            anchor = rt.phi[w].copy()  # blocked mass already cleared
            over_now = rt.phi_over[w]
            alpha = 2.0 / (len(allowed) * float(np.max(entries)))
            if is_source and cfg.cr:
                d_over = float(sess.utility.dloss(rt.flow.overflow[w],
                                                  sess.rate))
                m_over = 0.5 * t_i * sess.utility.d2loss_max(budget, sess.rate)

                def mk(scale):
                    return cr_step(rt.top, rt.phi[w], over_now, delta, d_over,
                                   0.5 * t_i * entries / scale,
                                   m_over / scale, allowed, blk, t_i)
            elif cfg.rt == "brt":
                def mk(scale):
                    row = brt_step(rt.top, rt.phi[w], delta, t_i,
                                   alpha * scale, allowed, blk)
                    return None if row is None else (row, over_now)
            elif cfg.rt == "grt-brt":
                star = np.lexsort((rt.top.link_dst[allowed],
                                   delta[allowed]))[0]

                def mk(scale):
                    m = np.full(len(allowed), t_i / (alpha * scale))
                    m[star] = 0.0
                    row = grt_step(rt.top, rt.phi[w], delta, m, allowed, blk,
                                   t_i)
                    return None if row is None else (row, over_now)
            else:
                def mk(scale):
                    row = grt_step(rt.top, rt.phi[w], delta,
                                   0.5 * t_i * entries / scale, allowed, blk,
                                   t_i)
                    return None if row is None else (row, over_now)
            _guarded_phi(rt, tr, cfg, messages, w, mk, anchor, over_now)
            messages.publish_routing(rt, i, w)


def _pa_sweep(rt, tr, cfg, messages, order):
    for i in order:
        if rt.top.out_degree[i] < 2:
            continue
        delta_eta = rt.delta_eta()
        p_i = rt.radio.node_power[i]
        if rt.refined_pa:
            qbar, beta = refined_pa_scaling(rt.top, rt.snapshot(), rt.radio,
                                            rt.flow, i, rt.cost_fn,
                                            rt.capacity_fn.k)
        else:
            qbar, beta = pa_scaling(rt.top, rt.snapshot(), rt.radio, rt.flow,
                                    i, rt.cost_fn, rt.capacity_fn)
        if cfg.pa == "bpa":
            def mk(scale):
                return pa_step(rt.top, i, rt.eta, delta_eta, p_i, "bpa",
                               beta=beta * scale)
        else:
            def mk(scale):
                return pa_step(rt.top, i, rt.eta, delta_eta, p_i, "gpa",
                               q_diag=qbar / (2.0 * p_i * scale))
        _guarded_block(rt, tr, cfg, messages, mk, rt.eta, rt.eval_eta,
                       rt.commit_eta)


def _pc_sweep(rt, tr, cfg, messages, v, sweep):
    delta_gamma = messages.delta_gamma(rt, cfg.pc_scope)
    update = _pc_update_set(cfg, rt.top, sweep)

    def mk(scale):
        return pc_step(rt.gamma, delta_gamma, rt.radio.node_power, v / scale,
                       rt.capacity_fn, update_set=update)

    _guarded_block(rt, tr, cfg, messages, mk, rt.gamma, rt.eval_gamma,
                   rt.commit_gamma)
    messages.publish_msgs(rt, update)


def run_jopr(topology, sessions, initial: NetworkState, cost_fn, capacity_fn,
             cfg: OptimizerConfig) -> Trajectory:
    """Centralized joint power control and routing optimization."""
    return run_loop(topology, sessions, initial, cost_fn, capacity_fn, cfg)


@dataclass
class JoparTrajectory:
    stages: list                 # (label, Trajectory) per stage run
    precise_costs: list          # per recorded point, exact capacity model
    approx_costs: list           # per recorded point, high-SINR model
    interference_warnings: list  # links failing the concavity condition
    final_state: NetworkState | None = None


def run_two_stage_jopar(topology, sessions, initial: NetworkState, cost_fn,
                        k: float, cfg: OptimizerConfig, cycles: int = 2,
                        stage2: bool = True) -> JoparTrajectory:
    """Alternate a routing + refined power allocation stage under the exact
    ln(1+Kx) capacity (total powers fixed) with a power control stage under
    the high-SINR model (routing and allocation frozen)."""
    from .functions import HighSinrLog, PreciseLog
    from .steps import interference_limited_check

    precise = PreciseLog(k)
    approx = HighSinrLog(k)
    out = JoparTrajectory([], [], [], [])
    state = initial
    for cycle in range(cycles):
        radio = compute_radio(topology, precise, state)
        ok = interference_limited_check(topology, radio, k)
        if not np.all(ok):
            bad = [topology.links[e] for e in np.flatnonzero(~ok)]
            out.interference_warnings.append((cycle, bad))
        cfg1 = OptimizerConfig(rt=cfg.rt if cfg.rt != "off" else "grt",
                               pa=cfg.pa if cfg.pa != "off" else "gpa",
                               pc=False, cr=cfg.cr, iters=cfg.iters,
                               tol=cfg.tol, order=cfg.order, seed=cfg.seed)
        t1 = run_loop(topology, sessions, state, cost_fn, precise, cfg1,
                      refined_pa=True, extra_cost_models={"approx": approx})
        out.stages.append((f"pa_rt[{cycle}]", t1))
        out.precise_costs.extend(t1.costs)
        out.approx_costs.extend(t1.extra["approx"])
        state = t1.final_state
        if not stage2:
            break
        approx_radio = compute_radio(topology, approx, state)
        flow = compute_flows(topology, sessions, state)
        if not math.isfinite(total_cost(flow, approx_radio, cost_fn, sessions)):
            out.interference_warnings.append((cycle, "approx model infeasible; "
                                              "power control stage skipped"))
            break
        cfg2 = OptimizerConfig(rt="off", pa="off", pc=True, cr=False,
                               iters=cfg.iters, tol=cfg.tol, order=cfg.order,
                               seed=cfg.seed)
        t2 = run_loop(topology, sessions, state, cost_fn, approx, cfg2,
                      extra_cost_models={"precise": precise})
        out.stages.append((f"pc[{cycle}]", t2))
        out.precise_costs.extend(t2.extra["precise"])
        out.approx_costs.extend(t2.costs)
        state = t2.final_state
    out.final_state = state
    return out
