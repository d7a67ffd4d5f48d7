"""Discrete-event simulation of complete DDBA and CDBA localizations.

Simulated time is kept in integer ticks (``protocol.TICKS_PER_SECOND`` per
second). Every hop is delayed by its straight-line length over the signal
speed plus the configured processing delay.
"""

from __future__ import annotations

import heapq
import itertools
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, MutableSequence, Sequence

import numpy as np

from . import geometry, protocol
from .exceptions import ConfigurationError, LocalizationError, ProtocolOrderError
from .geometry import Point, PropagationConstants
from .metrics import SUCCESS, LocalizationResult
from .protocol import (
    Message,
    Node,
    Phase,
    Scenario,
    bsc_node,
    bts_node,
    mobile_node,
    seconds,
    to_ticks,
)


# -- topology ---------------------------------------------------------------

@dataclass(frozen=True)
class Bts:
    id: int
    position: Point
    bsc_id: int
    neighbors: tuple[int, ...] | None = None


@dataclass(frozen=True)
class Bsc:
    id: int
    position: Point


@dataclass(frozen=True)
class Mobile:
    id: int
    position: Point
    query: bytes = b""
    serving_bts: int | None = None


@dataclass(frozen=True)
class Topology:
    btss: tuple[Bts, ...]
    bscs: tuple[Bsc, ...]
    mobiles: tuple[Mobile, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "btss", tuple(self.btss))
        object.__setattr__(self, "bscs", tuple(self.bscs))
        object.__setattr__(self, "mobiles", tuple(self.mobiles))
        self.validate()

    def validate(self) -> None:
        for kind, items in (("BTS", self.btss), ("BSC", self.bscs), ("mobile", self.mobiles)):
            seen = set()
            for item in items:
                if item.id in seen:
                    raise ConfigurationError(f"duplicate {kind} id {item.id}")
                seen.add(item.id)
        bsc_ids = {b.id for b in self.bscs}
        bts_ids = {b.id for b in self.btss}
        for b in self.btss:
            if b.bsc_id not in bsc_ids:
                raise ConfigurationError(f"BTS {b.id} references missing BSC {b.bsc_id}")
            for n in b.neighbors or ():
                if n == b.id:
                    raise ConfigurationError(f"BTS {b.id} lists itself as a neighbor")
                if n not in bts_ids:
                    raise ConfigurationError(f"BTS {b.id} references missing neighbor BTS {n}")
        for bsc in self.bscs:
            members = self.members(bsc.id)
            if len(members) < 3:
                raise ConfigurationError(
                    f"BSC {bsc.id} controls {len(members)} BTS(s); at least 3 are required")
        for m in self.mobiles:
            if m.serving_bts is not None and m.serving_bts not in bts_ids:
                raise ConfigurationError(
                    f"mobile {m.id} references missing serving BTS {m.serving_bts}")

    def members(self, bsc_id: int) -> tuple[int, ...]:
        return tuple(b.id for b in self.btss if b.bsc_id == bsc_id)

    def bts(self, bts_id: int) -> Bts:
        return self._lookup(self.btss, bts_id, "BTS")

    def bsc(self, bsc_id: int) -> Bsc:
        return self._lookup(self.bscs, bsc_id, "BSC")

    def mobile(self, mobile_id: int) -> Mobile:
        return self._lookup(self.mobiles, mobile_id, "mobile")

    @staticmethod
    def _lookup(items, key, kind):
        for item in items:
            if item.id == key:
                return item
        raise ConfigurationError(f"no {kind} with id {key}")

    def with_mobiles(self, mobiles: Iterable[Mobile]) -> Topology:
        return Topology(self.btss, self.bscs, tuple(mobiles))


# -- databases --------------------------------------------------------------

@dataclass(frozen=True)
class NeighborDb:
    """Per-BTS table of adjacent stations: bts_id -> ((neighbor_id, position), ...)."""

    entries: Mapping[int, tuple[tuple[int, Point], ...]]

    def view(self, bts_id: int) -> dict[int, Point]:
        return dict(self.entries.get(bts_id, ()))

    def entry_count(self) -> int:
        return sum(len(v) for v in self.entries.values())


@dataclass(frozen=True)
class CentralDb:
    """Per-BSC table of member stations and the BSC-to-BTS distances."""

    entries: Mapping[int, tuple[tuple[int, Point], ...]]
    distances: Mapping[int, Mapping[int, float]]

    def view(self, bsc_id: int) -> dict[int, Point]:
        return dict(self.entries.get(bsc_id, ()))

    def entry_count(self) -> int:
        return sum(len(v) for v in self.entries.values())


def build_neighbor_db(topology: Topology) -> NeighborDb:
    """Adjacency from explicit ``neighbors`` lists (made symmetric).

    If no station lists neighbors, every BTS is adjacent to the other members
    of its BSS.
    """
    adj: dict[int, set[int]] = {b.id: set() for b in topology.btss}
    if any(b.neighbors is not None for b in topology.btss):
        for b in topology.btss:
            for n in b.neighbors or ():
                adj[b.id].add(n)
                adj[n].add(b.id)
    else:
        for b in topology.btss:
            adj[b.id].update(m for m in topology.members(b.bsc_id) if m != b.id)
    pos = {b.id: b.position for b in topology.btss}
    return NeighborDb({i: tuple((n, pos[n]) for n in sorted(ns)) for i, ns in adj.items()})


def build_central_db(topology: Topology) -> CentralDb:
    entries, distances = {}, {}
    for bsc in topology.bscs:
        members = [topology.bts(i) for i in topology.members(bsc.id)]
        entries[bsc.id] = tuple((b.id, b.position) for b in members)
        distances[bsc.id] = {b.id: geometry.euclidean_distance(bsc.position, b.position)
                             for b in members}
    return CentralDb(entries, distances)


def db_entry_count(topology: Topology, scenario: Scenario) -> int:
    if Scenario(scenario) is Scenario.DDBA:
        return build_neighbor_db(topology).entry_count()
    return build_central_db(topology).entry_count()


# -- configuration ----------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    scenario: Scenario = Scenario.DDBA
    consts: PropagationConstants = field(default_factory=PropagationConstants)
    timing_noise_sigma: float = 0.0
    processing_delay: float = 0.0
    rng_seed: int = 0
    eq9_literal: bool = False

    def __post_init__(self):
        try:
            object.__setattr__(self, "scenario", Scenario(self.scenario))
        except ValueError:
            raise ConfigurationError(f"unknown scenario {self.scenario!r}") from None
        if not (math.isfinite(self.timing_noise_sigma) and self.timing_noise_sigma >= 0):
            raise ConfigurationError(
                f"timing_noise_sigma must be >= 0, got {self.timing_noise_sigma}")
        if not (math.isfinite(self.processing_delay) and self.processing_delay >= 0):
            raise ConfigurationError(
                f"processing_delay must be >= 0, got {self.processing_delay}")
        if self.rng_seed < 0:
            raise ConfigurationError(f"rng_seed must be >= 0, got {self.rng_seed}")


# -- station selection ------------------------------------------------------

def select_serving_bts(mobile: Mobile, topology: Topology) -> int:
    """Nearest BTS to the mobile's true position, lowest id on ties."""
    if not topology.btss:
        raise ConfigurationError("topology has no BTS")
    return min(topology.btss,
               key=lambda b: (geometry.euclidean_distance(mobile.position, b.position), b.id)).id


def select_slaves(serving: int, db: NeighborDb | CentralDb,
                  topology: Topology) -> tuple[int, int]:
    """Two stations nearest ``serving`` that are not collinear with it.

    Candidates come from the serving station's neighbor table, or from its
    BSS when ``db`` is a :class:`CentralDb`.
    """
    station = topology.bts(serving)
    if isinstance(db, CentralDb):
        candidates = db.view(station.bsc_id)
    else:
        candidates = db.view(serving)
    return geometry.choose_slaves(serving, station.position, candidates.items())


# -- event engine -----------------------------------------------------------

@dataclass(frozen=True)
class SimEvent:
    deliver_at: int
    message: Message | DistanceReport
    src: Node
    dst: Node
    sent_at: int
    route: tuple[Node, ...] = ()

    @property
    def deliver_at_s(self) -> float:
        return seconds(self.deliver_at)


class EventQueue:
    """Min-heap on delivery time; equal times pop in insertion order."""

    def __init__(self):
        self._heap = []
        self._seq = itertools.count()

    def __len__(self):
        return len(self._heap)

    def push(self, event: SimEvent) -> None:
        if event.deliver_at < event.sent_at:
            raise ValueError("event delivered before it was sent")
        heapq.heappush(self._heap, (event.deliver_at, next(self._seq), event))

    def pop(self) -> SimEvent:
        return heapq.heappop(self._heap)[2]


def deliver(queue: EventQueue) -> tuple[Node, Message, int]:
    """Pop the next event as (destination, message, arrival tick)."""
    ev = queue.pop()
    return ev.dst, ev.message, ev.deliver_at


def hop_ticks(src: Point, dst: Point, config: SimConfig) -> int:
    return (to_ticks(geometry.euclidean_distance(src, dst) / config.consts.c)
            + to_ticks(config.processing_delay))


class NodeClock:
    """Local clock: true time plus a constant offset, plus read noise if given."""

    def __init__(self, offset: int = 0, sigma_ticks: float = 0.0,
                 rng: np.random.Generator | None = None):
        self.offset = offset
        self.sigma_ticks = sigma_ticks
        self.rng = rng

    def read(self, true_ticks: int) -> int:
        t = true_ticks + self.offset
        if self.sigma_ticks > 0:
            t += round(self.rng.normal(0.0, self.sigma_ticks))
        return t


@dataclass(frozen=True)
class DistanceReport:
    """Master-to-BSC report of the three measured distances (DDBA, uncounted)."""

    mobile_id: int
    master_id: int
    distances: tuple[float, float, float]

    _FORMAT = struct.Struct("<II3d")
    msg_type_name = "DISTANCE_REPORT"

    def encode(self) -> bytes:
        return self._FORMAT.pack(self.mobile_id, self.master_id, *self.distances)


@dataclass(frozen=True)
class TraceRecord:
    time: int
    src: Node
    dst: Node
    msg_type: str
    nbytes: int

    def format(self) -> str:
        return f"{seconds(self.time)!r}, {self.src}, {self.dst}, {self.msg_type}, {self.nbytes}"


def _record(ev: SimEvent) -> TraceRecord:
    if isinstance(ev.message, DistanceReport):
        return TraceRecord(ev.deliver_at, ev.src, ev.dst, ev.message.msg_type_name,
                           len(ev.message.encode()))
    return TraceRecord(ev.deliver_at, ev.src, ev.dst, ev.message.msg_type.name,
                       ev.message.msg_length)


# -- orchestration ----------------------------------------------------------

def _rng_for(config: SimConfig, mobile_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([config.rng_seed, mobile_id]))


class _Run:
    """State of one localization: node states, clocks and the event queue."""

    def __init__(self, config: SimConfig, topology: Topology, mobile: Mobile,
                 clock_offsets: Mapping[Node, float], trace: MutableSequence | None):
        self.config = config
        self.topology = topology
        self.mobile = mobile
        self.trace = trace
        self.queue = EventQueue()
        self.messages = 0
        self.now = 0

        scenario = config.scenario
        serving = (mobile.serving_bts if mobile.serving_bts is not None
                   else select_serving_bts(mobile, topology))
        self.serving = topology.bts(serving)
        self.positions: dict[Node, Point] = {mobile_node(mobile.id): mobile.position}
        self.states: dict[Node, object] = {mobile_node(mobile.id): protocol.MobileIdle(mobile.id)}
        self.handlers: dict[Node, Callable] = {mobile_node(mobile.id): protocol.handle_mobile}
        for b in topology.btss:
            self.positions[bts_node(b.id)] = b.position
        for c in topology.bscs:
            self.positions[bsc_node(c.id)] = c.position

        if scenario is Scenario.DDBA:
            ndb = build_neighbor_db(topology)
            for b in topology.btss:
                node = bts_node(b.id)
                if b.id == serving:
                    self.states[node] = protocol.MasterState(b.id, b.position)
                    view = ndb.view(b.id)
                    self.handlers[node] = (
                        lambda s, m, t, _v=view: protocol.handle_master_bts(s, m, t, _v))
                else:
                    self.states[node] = protocol.SlaveIdle(b.id)
                    self.handlers[node] = protocol.handle_slave_bts
            self.measuring = bts_node(serving)
        else:
            cdb = build_central_db(topology)
            for b in topology.btss:
                node = bts_node(b.id)
                self.states[node] = protocol.CdbaBtsIdle(b.id, b.bsc_id)
                self.handlers[node] = protocol.handle_cdba_bts
            bsc = topology.bsc(self.serving.bsc_id)
            self.measuring = bsc_node(bsc.id)
            self.states[self.measuring] = protocol.BscState(bsc.id, bsc.position)
            view = cdb.view(bsc.id)
            self.handlers[self.measuring] = (
                lambda s, m, t, _v=view: protocol.handle_bsc(s, m, t, _v))

        rng = _rng_for(config, mobile.id)
        sigma_ticks = config.timing_noise_sigma * protocol.TICKS_PER_SECOND
        self.clocks = {node: NodeClock(to_ticks(clock_offsets.get(node, 0.0)))
                       for node in self.positions}
        self.clocks[self.measuring] = NodeClock(
            to_ticks(clock_offsets.get(self.measuring, 0.0)), sigma_ticks, rng)

    def send(self, message, src: Node, hops: Sequence[Node]) -> None:
        dst = hops[0]
        delay = hop_ticks(self.positions[src], self.positions[dst], self.config)
        self.queue.push(SimEvent(self.now + delay, message, src, dst, self.now,
                                 tuple(hops[1:])))

    def step(self) -> SimEvent:
        ev = self.queue.pop()
        self.now = ev.deliver_at
        if self.trace is not None:
            self.trace.append(_record(ev))
        if ev.route:
            # transparent relay, same logical message
            self.send(ev.message, ev.dst, ev.route)
            return ev
        if isinstance(ev.message, DistanceReport):
            return ev
        node = ev.dst
        if node not in self.handlers:
            raise ProtocolOrderError(f"message delivered to unknown node {node}")
        local = self.clocks[node].read(self.now)
        new_state, outgoing = self.handlers[node](self.states[node], ev.message, local)
        self.states[node] = new_state
        for out in outgoing:
            self.messages += 1
            self.send(out.message, node, (*out.via, out.to))
        return ev

    def run(self) -> LocalizationResult:
        m = self.mobile
        self.messages = 1
        self.send(protocol.make_hello(m.id, m.query), mobile_node(m.id),
                  (bts_node(self.serving.id),))
        try:
            done = None
            while self.queue:
                ev = self.step()
                if ev.dst == self.measuring and self.states[self.measuring].phase is Phase.DONE:
                    done = self.now
                    break
            if done is None:
                raise ProtocolOrderError("protocol stalled before the third phase closed")
            state = self.states[self.measuring]
            radii = protocol.compute_distances(
                state.samples, state.known_distances(), self.config.consts,
                self.config.scenario, eq9_literal=self.config.eq9_literal,
                processing_delay=self.config.processing_delay)
            if self.config.scenario is Scenario.DDBA:
                report = DistanceReport(m.id, self.serving.id, radii)
                self.send(report, self.measuring, (bsc_node(self.serving.bsc_id),))
                while self.queue:
                    self.step()
            circles = [geometry.CircleConstraint(c, r) for c, r in zip(state.centers, radii)]
            estimate = geometry.trilaterate(*circles)
        except LocalizationError as exc:
            return self._result(exc.kind, detail=str(exc))
        return LocalizationResult(
            mobile_id=m.id, true_position=m.position, status=SUCCESS, estimated=estimate,
            logical_messages=self.messages, elapsed_sim_time=seconds(done),
            residual=geometry.residual_sum(estimate, circles),
            scenario=self.config.scenario)

    def _result(self, status: str, detail: str) -> LocalizationResult:
        return LocalizationResult(
            mobile_id=self.mobile.id, true_position=self.mobile.position, status=status,
            logical_messages=self.messages, elapsed_sim_time=seconds(self.now),
            scenario=self.config.scenario, detail=detail)


def run_localization(config: SimConfig, topology: Topology, mobile_id: int, *,
                     trace: MutableSequence | None = None,
                     clock_offsets: Mapping[Node, float] | None = None) -> LocalizationResult:
    """Simulate one mobile's localization from its Hello at t=0.

    Failures (degenerate geometry, inconsistent timing, protocol errors) come
    back as a result whose ``status`` is the error kind. Pass a list as
    ``trace`` to collect one :class:`TraceRecord` per delivered hop.
    ``clock_offsets`` maps nodes to constant local-clock offsets in seconds.
    """
    mobile = topology.mobile(mobile_id)
    return _Run(config, topology, mobile, clock_offsets or {}, trace).run()


def check_runnable(config: SimConfig, topology: Topology) -> None:
    """Raise :class:`ConfigurationError` for problems that would hit every run."""
    ndb = build_neighbor_db(topology) if config.scenario is Scenario.DDBA else None
    for m in topology.mobiles:
        serving = m.serving_bts if m.serving_bts is not None else select_serving_bts(m, topology)
        if ndb is not None and len(ndb.view(serving)) < 2:
            raise ConfigurationError(
                f"BTS {serving} (serving mobile {m.id}) has fewer than 2 neighbors")


def run_scenario(config: SimConfig, topology: Topology, *,
                 trace: MutableSequence | None = None) -> list[LocalizationResult]:
    check_runnable(config, topology)
    return [run_localization(config, topology, m.id, trace=trace) for m in topology.mobiles]
