"""Distributed message-exchange simulation.

Nodes publish their routing potentials and power control messages only when
they iterate; consumers read the last published values (staleness), each
read corrupted by an independent multiplicative factor uniform on
[1-s, 1+s] (noise), with power control messages optionally restricted to
the k highest-gain producers (local scope).  Blocking decisions consume the
raw ledger snapshot: one consistent table per sweep, which is what keeps the
allowed graphs provably acyclic even under heavy noise.

A degenerate channel (no noise, fresh staleness, full scope) reproduces the
centralized trajectories bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .drivers import OptimizerConfig, Runtime, Trajectory, run_loop
from .marginals import (Staleness, marginal_power_control_costs,
                        session_potential)
from .model import Topology


@dataclass(frozen=True)
class ChannelModel:
    """Message corruption model; the seed fixes the whole trajectory."""

    noise_scale: float = 0.0
    staleness: Staleness = Staleness.FRESH
    msg_scope: object = "all"   # "all" or int k (nearest by gain)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.noise_scale < 1.0:
            raise ValueError("noise_scale must lie in [0, 1)")

    @property
    def degenerate(self) -> bool:
        return (self.noise_scale == 0.0
                and self.staleness is Staleness.FRESH
                and (self.msg_scope == "all" or self.msg_scope is None))


@dataclass(frozen=True)
class MessageLedger:
    """Last published value and publication sweep per producer and kind."""

    potential: dict   # (node_index, session_index) -> (value, iteration)
    msg: dict         # node_index -> (value, iteration)

    @classmethod
    def empty(cls):
        return cls(potential={}, msg={})


def publish(ledger: MessageLedger, node: int, iteration: int,
            potentials: dict | None = None,
            msg: float | None = None) -> MessageLedger:
    """Replace one producer's entries; everything else is untouched."""
    pot = dict(ledger.potential)
    msgs = dict(ledger.msg)
    if potentials:
        for w, value in potentials.items():
            pot[(node, w)] = (float(value), iteration)
    if msg is not None:
        msgs[node] = (float(msg), iteration)
    return MessageLedger(pot, msgs)


def deliver(ledger: MessageLedger, consumer: int, channel: ChannelModel,
            topology: Topology, rng) -> dict:
    """Consumer's corrupted view of every published value.

    Each value is scaled by an independent factor on [1-s, 1+s]; power
    control messages outside the consumer's top-k gain set read as zero.
    """
    s = channel.noise_scale

    def factor():
        return 1.0 if s == 0.0 else float(rng.uniform(1.0 - s, 1.0 + s))

    view_pot = {}
    for key in sorted(ledger.potential):
        view_pot[key] = ledger.potential[key][0] * factor()
    keep = _scope_set(topology, consumer, channel.msg_scope)
    view_msg = {}
    for n in sorted(ledger.msg):
        if n in keep:
            view_msg[n] = ledger.msg[n][0] * factor()
        else:
            view_msg[n] = 0.0
    return {"potential": view_pot, "msg": view_msg}


def _scope_set(topology: Topology, consumer: int, scope) -> set:
    if scope == "all" or scope is None:
        return set(range(topology.n))
    k = int(scope)
    if k > topology.n - 1:
        from .errors import ScopeTooLarge

        raise ScopeTooLarge(f"k={k} exceeds |N|-1={topology.n - 1}")
    gains = topology.gain_matrix[consumer]
    cand = np.flatnonzero(gains > 0.0)
    if len(cand) > k:
        cand = cand[np.lexsort((cand, -gains[cand]))][:k]
    return set(int(c) for c in cand)


class LedgerMessages:
    """Message environment backed by a ledger, a channel, and a seeded rng."""

    tolerant = True  # noise can break descent; record instead of aborting

    def __init__(self, channel: ChannelModel, topology: Topology, sessions):
        self.channel = channel
        self.top = topology
        self.sessions = sessions
        self.rng = np.random.default_rng(channel.seed)
        self.ledger = MessageLedger.empty()
        self.iteration = 0
        self._initialized = False
        self._route_views = {}

    # -- helpers -------------------------------------------------------------

    def _factor(self):
        s = self.channel.noise_scale
        return 1.0 if s == 0.0 else float(self.rng.uniform(1.0 - s, 1.0 + s))

    def _ensure_init(self, rt: Runtime):
        if self._initialized:
            return
        pots = rt.potentials()
        msgs = rt.msgs()
        led = self.ledger
        for i in range(self.top.n):
            led = publish(led, i, 0,
                          potentials={w: pots[w, i]
                                      for w in range(len(self.sessions))},
                          msg=float(msgs[i]))
        self.ledger = led
        self._initialized = True

    def _ledger_potentials(self) -> np.ndarray:
        out = np.zeros((len(self.sessions), self.top.n))
        for (i, w), (value, _) in self.ledger.potential.items():
            out[w, i] = value
        return out

    # -- driver interface ----------------------------------------------------

    def blocking_potentials(self, rt: Runtime) -> np.ndarray:
        self._ensure_init(rt)
        self.iteration += 1
        self._route_views.clear()
        if self.channel.staleness is Staleness.FRESH:
            return rt.potentials()
        return self._ledger_potentials()

    def session_potentials(self, rt: Runtime, node: int, w: int) -> np.ndarray:
        if self.channel.staleness is Staleness.FRESH:
            pot = session_potential(rt.top, rt.sessions, w, rt.snapshot(),
                                    rt.flow, rt.radio, rt.cost_fn)
        else:
            pot = self._ledger_potentials()[w].copy()
        if self.channel.noise_scale > 0.0:
            for e in self.top.out_links[node]:
                pot[self.top.link_dst[e]] *= self._factor()
        self._route_views[(node, w)] = pot
        return pot

    def publish_routing(self, rt: Runtime, node: int, w: int):
        view = self._route_views.get((node, w))
        if view is None:
            return
        # the node computes its own potential from fresh local marginals and
        # the same delivered downstream values it just acted on
        sess = rt.sessions[w]
        ddf = rt.ddf()
        acc = 0.0
        for e in self.top.out_links[node]:
            f = rt.phi[w, e]
            if f > 0.0:
                acc += f * (ddf[e] + view[self.top.link_dst[e]])
        if sess.elastic and node == self.top.idx[sess.origin] \
                and rt.phi_over[w] > 0.0:
            acc += rt.phi_over[w] * float(
                sess.utility.dloss(rt.flow.overflow[w], sess.rate))
        self.ledger = publish(self.ledger, node, self.iteration,
                              potentials={w: acc})

    def delta_gamma(self, rt: Runtime, scope) -> np.ndarray:
        self._ensure_init(rt)
        scope = self.channel.msg_scope
        if self.channel.staleness is Staleness.FRESH:
            base_msgs = rt.msgs()
        else:
            base_msgs = np.zeros(self.top.n)
            for n, (value, _) in self.ledger.msg.items():
                base_msgs[n] = value
        delta_eta = rt.delta_eta()
        out = np.zeros(self.top.n)
        for i in range(self.top.n):
            keep = _scope_set(self.top, i, scope)
            msgs_i = base_msgs.copy()
            if self.channel.noise_scale > 0.0:
                for n in range(self.top.n):
                    msgs_i[n] *= self._factor()
            for n in range(self.top.n):
                if n not in keep:
                    msgs_i[n] = 0.0
            row = marginal_power_control_costs(
                self.top, msgs_i, delta_eta, rt.snapshot(), rt.radio,
                scope="all")
            out[i] = row[i]
        return out

    def publish_msgs(self, rt: Runtime, nodes):
        msgs = rt.msgs()
        led = self.ledger
        for i in nodes:
            led = publish(led, int(i), self.iteration, msg=float(msgs[i]))
        self.ledger = led


def run_distributed(topology, sessions, initial, cost_fn, capacity_fn,
                    cfg: OptimizerConfig, channel: ChannelModel) -> Trajectory:
    """The centralized loop with every cross-node input routed through the
    ledger and channel; deterministic given (config, channel) seeds."""
    env = LedgerMessages(channel, topology, sessions)
    return run_loop(topology, sessions, initial, cost_fn, capacity_fn, cfg,
                    messages=env)
