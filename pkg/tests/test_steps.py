"""Step tests: blocking, BRT/GRT moves and their equivalence, power
allocation and control moves, congestion steps, and residuals."""
import numpy as np
import pytest

from meshopt.errors import CapacityModelMismatch
from meshopt.functions import (HighSinrLog, LogUtility, MM1Delay, MM1Packets,
                               PreciseLog)
from meshopt.marginals import (compute_marginals, marginal_routing_costs,
                               node_potentials)
from meshopt.model import (NetworkState, Session, Topology, compute_flows,
                           compute_radio, total_cost)
from meshopt.scaling import curvature_bounds, pa_scaling, routing_scaling
from meshopt.steps import (blocked_sets, brt_step, cr_step, grt_step,
                           idle_reroute, interference_limited_check,
                           optimality_residuals, pa_step, pc_step)

from helpers import (chain_topology, cost_of_state, diamond_session,
                     diamond_state, diamond_topology, fixed_radio)

MM1P0 = MM1Packets(eps=0.0)


def _diamond_setup(split=0.5, caps=(2.0, 2.0, 2.0, 2.0)):
    top = diamond_topology()
    sessions = diamond_session()
    state = diamond_state(top, split=split)
    flow = compute_flows(top, sessions, state)
    radio = fixed_radio(top, np.array(caps, dtype=float)[
        [top.link_idx[lk] for lk in [(1, 2), (1, 3), (2, 4), (3, 4)]]])
    return top, sessions, state, flow, radio


def test_blocked_sets_chain_and_diamond():
    top, sessions, state, flow, radio = _diamond_setup()
    pot = node_potentials(top, sessions, state, flow, radio, MM1P0)
    blk = blocked_sets(top, sessions, state, pot)
    assert len(blk.blocked[0][top.idx[1]]) == 0
    assert len(blk.allowed[0][top.idx[4]]) == 0  # destination forwards nothing


def test_blocked_sets_equal_potential_tie():
    nodes = [1, 2, 3]
    links = [(1, 2), (2, 1), (1, 3), (2, 3)]
    top = Topology(nodes, links, {lk: 1.0 for lk in links},
                   {v: 0.1 for v in nodes}, {v: 10.0 for v in nodes})
    sessions = [Session(0, 1, 3, rate=1.0)]
    state = NetworkState.build(top, sessions,
                               phi_map={0: {(1, 3): 1.0, (2, 3): 1.0}})
    pots = np.array([[0.5, 0.5, 0.0]])
    blk = blocked_sets(top, sessions, state, pots)
    # equal potentials and no flow between 1 and 2: each blocks the other
    assert top.link_idx[(1, 2)] in blk.blocked[0][top.idx[1]]
    assert top.link_idx[(2, 1)] in blk.blocked[0][top.idx[2]]


def test_brt_no_change_on_equal_marginals():
    top, sessions, state, flow, radio = _diamond_setup()
    pot = node_potentials(top, sessions, state, flow, radio, MM1P0)
    dphi, _ = marginal_routing_costs(top, pot, flow, radio, MM1P0, sessions)
    blk = blocked_sets(top, sessions, state, pot)
    i = top.idx[1]
    row = brt_step(top, state.phi[0], dphi[0], 1.0, 0.1,
                   blk.allowed[0][i], blk.blocked[0][i])
    assert np.array_equal(row, state.phi[0])


def test_brt_shifts_toward_cheaper_branch_and_descends():
    # C_12 = 3 vs C_13 = 2: the branch through node 2 is cheaper
    top, sessions, state, flow, radio = _diamond_setup(caps=(3.0, 2.0, 3.0, 3.0))
    cost0 = total_cost(flow, radio, MM1P0, sessions)
    pot = node_potentials(top, sessions, state, flow, radio, MM1P0)
    dphi, _ = marginal_routing_costs(top, pot, flow, radio, MM1P0, sessions)
    blk = blocked_sets(top, sessions, state, pot)
    bounds = curvature_bounds(top, radio, MM1P0, HighSinrLog(1e5), cost0)
    i = top.idx[1]
    an = blk.allowed[0][i]
    heads = top.link_dst[an]
    from meshopt.marginals import hop_counts

    hops = hop_counts(top, sessions, blk.allowed)
    _, alpha = routing_scaling(bounds, an, hops[0, heads], 1.0)
    row = brt_step(top, state.phi[0], dphi[0], 1.0, alpha,
                   an, blk.blocked[0][i])
    e12, e13 = top.link_idx[(1, 2)], top.link_idx[(1, 3)]
    assert row[e12] > state.phi[0][e12]
    assert row[e13] < state.phi[0][e13]
    new_state = state.with_phi_row(0, row)
    new_flow = compute_flows(top, sessions, new_state)
    assert total_cost(new_flow, radio, MM1P0, sessions) < cost0
    # vanishing stepsize freezes the update
    tiny = brt_step(top, state.phi[0], dphi[0], 1.0, 1e-15,
                    an, blk.blocked[0][i])
    assert np.allclose(tiny, state.phi[0], atol=1e-12)


def test_grt_matches_brt_with_pseudo_diagonal():
    top, sessions, state, flow, radio = _diamond_setup(split=0.7,
                                                       caps=(3.0, 2.0, 2.5, 3.5))
    pot = node_potentials(top, sessions, state, flow, radio, MM1P0)
    dphi, _ = marginal_routing_costs(top, pot, flow, radio, MM1P0, sessions)
    blk = blocked_sets(top, sessions, state, pot)
    i = top.idx[1]
    an = blk.allowed[0][i]
    alpha, t_i = 0.05, 1.0
    m = np.full(len(an), t_i / alpha)
    m[int(np.argmin(dphi[0][an]))] = 0.0
    brt_row = brt_step(top, state.phi[0], dphi[0], t_i, alpha,
                       an, blk.blocked[0][i])
    grt_row = grt_step(top, state.phi[0], dphi[0], m, an,
                       blk.blocked[0][i], t_i)
    assert np.max(np.abs(brt_row - grt_row)) <= 1e-15


def test_grt_fixed_point_and_blocked_zero():
    top, sessions, state, flow, radio = _diamond_setup()
    pot = node_potentials(top, sessions, state, flow, radio, MM1P0)
    dphi, _ = marginal_routing_costs(top, pot, flow, radio, MM1P0, sessions)
    i = top.idx[1]
    an = top.out_links[i]
    row = grt_step(top, state.phi[0], dphi[0], np.ones(len(an)), an,
                   np.empty(0, dtype=np.intp), 1.0)
    assert np.allclose(row, state.phi[0], atol=1e-12)
    # force-block one branch: its fraction must land at exactly zero
    e13 = top.link_idx[(1, 3)]
    row = grt_step(top, state.phi[0], dphi[0], np.ones(1),
                   np.array([top.link_idx[(1, 2)]]), np.array([e13]), 1.0)
    assert row[e13] == 0.0
    assert row[top.link_idx[(1, 2)]] == pytest.approx(1.0)


def test_idle_reroute_moves_all_mass_to_cheapest():
    top, sessions, state, flow, radio = _diamond_setup(caps=(3.0, 2.0, 3.0, 2.0))
    pot = node_potentials(top, sessions, state, flow, radio, MM1P0)
    dphi, _ = marginal_routing_costs(top, pot, flow, radio, MM1P0, sessions)
    blk = blocked_sets(top, sessions, state, pot)
    i = top.idx[1]
    row = idle_reroute(top, state.phi[0], dphi[0], blk.allowed[0][i],
                       blk.blocked[0][i])
    an = blk.allowed[0][i]
    star = an[int(np.argmin(dphi[0][an]))]
    assert row[star] == 1.0


def test_pa_step_bpa_exact_shift():
    top = diamond_topology()
    i = top.idx[1]
    eta = NetworkState.build(top, []).eta.copy()
    delta = np.zeros(top.m)
    e12, e13 = top.link_idx[(1, 2)], top.link_idx[(1, 3)]
    delta[e12], delta[e13] = 2.0, 1.0
    new = pa_step(top, i, eta, delta, p_i=10.0, mode="bpa", beta=3.0)
    # shift = beta * b / P = 3 * 1 / 10 = 0.3 from link (1,2) onto (1,3)
    assert new[e12] == pytest.approx(0.2)
    assert new[e13] == pytest.approx(0.8)
    same = pa_step(top, i, eta, np.zeros(top.m), p_i=10.0, mode="bpa", beta=3.0)
    assert np.array_equal(same, eta)
    # single-out-link nodes have nothing to allocate
    assert pa_step(top, top.idx[2], eta, delta, 10.0, "bpa", beta=1.0) is None


def test_pa_step_gpa_reduces_cost():
    top = diamond_topology()
    sessions = diamond_session(rate=2.0)
    state = NetworkState.build(top, sessions, phi_map={
        0: {(1, 2): 0.5, (1, 3): 0.5, (2, 4): 1.0, (3, 4): 1.0}},
        eta_map={(1, 2): 0.8, (1, 3): 0.2})
    cap = HighSinrLog(1e5)
    cost_fn = MM1Delay()
    radio = compute_radio(top, cap, state)
    flow = compute_flows(top, sessions, state)
    cost0 = total_cost(flow, radio, cost_fn, sessions)
    assert np.isfinite(cost0)
    rep = compute_marginals(top, sessions, state, flow, radio, cost_fn, cap)
    i = top.idx[1]
    q, _ = pa_scaling(top, state, radio, flow, i, cost_fn, cap)
    new_eta = pa_step(top, i, state.eta, rep.delta_eta,
                      radio.node_power[i], "gpa", q_diag=q / (2 * radio.node_power[i]))
    new_state = state.with_eta(new_eta)
    cost1 = cost_of_state(top, sessions, cost_fn, cap, new_state)
    assert cost1 < cost0
    assert np.all(new_eta[top.out_links[i]] >= 1e-6 - 1e-15)


def test_pc_step_basics():
    top = chain_topology(2)
    gamma = np.array([1.0, 1.0])
    npow = np.array([10.0, 0.0])
    v = np.array([5.0, 5.0])
    out = pc_step(gamma, np.zeros(2), npow, v, HighSinrLog(1e5))
    assert np.array_equal(out, gamma)
    out = pc_step(gamma, np.array([-3.0, 0.0]), npow, v, HighSinrLog(1e5))
    assert out[0] == 1.0  # projection at the cap
    out = pc_step(gamma, np.array([2.0, 0.0]), npow, v, HighSinrLog(1e5))
    assert out[0] == pytest.approx(1.0 - 2.0 / 5.0)
    with pytest.raises(CapacityModelMismatch):
        pc_step(gamma, np.zeros(2), npow, v, PreciseLog(1e5))


def test_pc_step_descends_when_interference_dominates():
    # an isolated link always wants more power (delta_gamma <= 0 there); a
    # transmitter that mostly deafens another receiver has delta_gamma > 0,
    # and backing off its gamma reduces cost
    nodes = [1, 2, 3, 4]
    links = [(1, 2), (3, 4)]
    gain = {(1, 2): 1.0, (1, 4): 5.0, (3, 4): 1.0, (3, 2): 0.01}
    top = Topology(nodes, links, gain, {v: 0.1 for v in nodes},
                   {v: 100.0 for v in nodes})
    sessions = [Session(0, 1, 2, rate=0.01), Session(1, 3, 4, rate=3.0)]
    state = NetworkState.build(top, sessions, phi_map={
        0: {(1, 2): 1.0}, 1: {(3, 4): 1.0}})
    cap = HighSinrLog(1e5)
    cost_fn = MM1Delay()
    radio = compute_radio(top, cap, state)
    flow = compute_flows(top, sessions, state)
    cost0 = total_cost(flow, radio, cost_fn, sessions)
    assert np.isfinite(cost0)
    rep = compute_marginals(top, sessions, state, flow, radio, cost_fn, cap)
    i1 = top.idx[1]
    assert rep.delta_gamma[i1] > 0.0
    v = np.full(top.n, 1e4)
    new_gamma = pc_step(state.gamma, rep.delta_gamma, radio.node_power, v, cap)
    assert new_gamma[i1] < 1.0
    cost1 = cost_of_state(top, sessions, cost_fn, cap,
                          state.with_gamma(new_gamma))
    assert cost1 < cost0


def _elastic_single_link(phi_over=1.0, rate=2.0):
    top = chain_topology(2)
    sess = [Session(0, 1, 2, rate=rate, utility=LogUtility(weight=2.0, eps_u=0.05))]
    state = NetworkState.build(top, sess, phi_map={0: {(1, 2): 1.0 - phi_over}},
                               phi_over_map={0: phi_over})
    return top, sess, state


def test_cr_step_admits_iff_path_cheaper():
    top, sess, state = _elastic_single_link(phi_over=1.0)
    cap = HighSinrLog(1e5)
    cost_fn = MM1Delay()
    radio = compute_radio(top, cap, state)
    flow = compute_flows(top, sess, state)
    rep = compute_marginals(top, sess, state, flow, radio, cost_fn, cap)
    i = top.idx[1]
    allowed = top.out_links[i]
    # fully blocked start: the path marginal is far below B'(rbar)
    assert rep.delta_phi[0][allowed[0]] < rep.delta_phi_over[0]
    row, over = cr_step(top, state.phi[0], state.phi_over[0], rep.delta_phi[0],
                        rep.delta_phi_over[0], np.array([4.0]), 4.0, allowed,
                        np.empty(0, dtype=np.intp), flow.node_rate[0, i])
    assert row[allowed[0]] > 0.0 and over < 1.0
    assert row[allowed[0]] + over == pytest.approx(1.0)
    # overflow strictly cheapest: blocking grows
    state2 = _elastic_single_link(phi_over=0.2, rate=6.0)[2]
    radio2 = compute_radio(top, cap, state2)
    flow2 = compute_flows(top, sess, state2)
    rep2 = compute_marginals(top, sess, state2, flow2, radio2, cost_fn, cap)
    if rep2.delta_phi_over[0] < rep2.delta_phi[0][allowed[0]]:
        row2, over2 = cr_step(top, state2.phi[0], state2.phi_over[0],
                              rep2.delta_phi[0], rep2.delta_phi_over[0],
                              np.array([4.0]), 4.0, allowed,
                              np.empty(0, dtype=np.intp),
                              flow2.node_rate[0, i])
        assert over2 > state2.phi_over[0]


def test_interference_limited_check():
    top = chain_topology(2)
    from meshopt.model import RadioState

    radio = RadioState(np.array([1.0]), np.ones(2), np.array([1.0]),
                       np.array([1.0]), np.array([5.0]))
    assert not interference_limited_check(top, radio, 4.0)[0]  # 4 <= 2 fails
    radio_hi = RadioState(np.array([1.0]), np.ones(2), np.array([1e6]),
                          np.array([1e-6]), np.array([5.0]))
    assert interference_limited_check(top, radio_hi, 4.0)[0]


def test_residuals_symmetric_diamond_zero():
    top, sessions, state, flow, radio = _diamond_setup()
    cap = HighSinrLog(1e5)
    rep = compute_marginals(top, sessions, state, flow, radio, MM1P0, cap)
    blk = blocked_sets(top, sessions, state, rep.node_potential)
    res = optimality_residuals(top, sessions, state, rep, blk, radio)
    assert float(np.max(res.routing)) == 0.0
    # perturbing the split breaks the equal-marginal condition
    state2 = diamond_state(top, split=0.6)
    flow2 = compute_flows(top, sessions, state2)
    rep2 = compute_marginals(top, sessions, state2, flow2, radio, MM1P0, cap)
    blk2 = blocked_sets(top, sessions, state2, rep2.node_potential)
    res2 = optimality_residuals(top, sessions, state2, rep2, blk2, radio)
    assert res2.routing[0, top.idx[1]] > 1e-3