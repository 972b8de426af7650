"""Runs one dissemination protocol over a mobility history."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, TextIO

from . import dissemination as dis
from .dissemination import AutoCastParams, DataUnit, Message, NodeProtocolState
from .kernel import Simulator, rng_stream
from .radio import ChannelRecord, Medium, Packet, RadioParams
from .topology import NetworkView

log = logging.getLogger(__name__)


@dataclass
class ProtocolParams:
    protocol: str = "autocast"
    update_interval: float = 2.0
    max_payload: int = 1200
    flood_jitter_max: float = 0.010
    fill_units: int = 0
    autocast: AutoCastParams = field(default_factory=AutoCastParams)

    def validate(self) -> None:
        if self.protocol not in dis.PROTOCOLS:
            raise ValueError(f"protocol must be one of {', '.join(dis.PROTOCOLS)}; got {self.protocol!r}")
        if self.update_interval <= 0 or self.max_payload <= 0:
            raise ValueError("update_interval and max_payload must be positive")
        if self.fill_units < 0:
            raise ValueError("fill_units must be >= 0")
        self.autocast.validate()


@dataclass
class UnitPlan:
    """Periodic generation: the node closest to ``center`` creates a unit."""

    concurrent: int = 2
    lifetime: float = 50.0
    payload_size: int = 100
    target_span: float = 5000.0
    start: float = 10.0
    center: Optional[float] = None  # defaults to mid-road

    @property
    def period(self) -> float:
        return self.lifetime / self.concurrent


@dataclass
class DeliveryEvent:
    unit_id: int
    node: int
    position: float
    time: float


@dataclass
class RunResult:
    protocol: str
    units: list[DataUnit]
    deliveries: list[DeliveryEvent]
    channel_log: list[ChannelRecord]
    duration: float
    road_length: float
    packets: int = 0
    collisions: int = 0
    payload_units_sent: int = 0


class DisseminationNetwork:
    def __init__(self, view: NetworkView, params: ProtocolParams, radio: RadioParams,
                 plan: UnitPlan, seed: int, road_length: float,
                 event_log: Optional[TextIO] = None):
        params.validate()
        radio.validate()
        self.view = view
        self.params = params
        self.radio = radio
        self.plan = plan
        self.seed = seed
        self.road_length = road_length
        self.sim = Simulator(log=event_log)
        self.medium = Medium(self.sim, radio, self._snapshot, self._deliver)
        self.states: dict[int, NodeProtocolState] = {}
        self.rngs = {}
        self.units: list[DataUnit] = []
        self.deliveries: list[DeliveryEvent] = []
        self._delivered: set[tuple[int, int]] = set()
        self.payload_units_sent = 0
        dt = view.dt
        self.span = {n: (float(view.times[a]), float(view.times[b]) + dt)
                     for n, (a, b) in view.lifetimes().items()}
        self.duration = float(view.times[-1]) + dt if len(view.times) else 0.0

    # -- helpers
    def _snapshot(self, t: float):
        return self.view.at_time(t)

    def rng(self, node: int):
        r = self.rngs.get(node)
        if r is None:
            r = self.rngs[node] = rng_stream(self.seed, "node", node)
        return r

    # -- run
    def run(self) -> RunResult:
        proto = self.params.protocol
        if proto == "oracle":
            return self._run_oracle()
        for node in sorted(self.span, key=lambda n: (self.span[n][0], n)):
            self.sim.schedule(self.span[node][0], "join", self._join, target=node)
        t = self.plan.start
        i = 0
        last = self.duration - self.plan.lifetime
        while t <= last + 1e-9:
            self.sim.schedule(t, "generate", self._generate, payload=i)
            i += 1
            t = self.plan.start + i * self.plan.period
        self.sim.run_until(self.duration - 1e-9)
        return RunResult(proto, self.units, self.deliveries, list(self.medium.channel_log),
                         self.duration, self.road_length, self.medium.sent_packets,
                         self.medium.collided, self.payload_units_sent)

    def _join(self, ev) -> None:
        node = ev.target
        self.states[node] = NodeProtocolState(node)
        proto = self.params.protocol
        if proto in ("mile", "mile_od", "autocast"):
            first = self.sim.now + self.rng(node).uniform(0.0, self.params.update_interval)
            self._arm(node, first)

    def _arm(self, node: int, at: float) -> None:
        if at < self.span[node][1]:
            self.sim.schedule(at, "timer", self._timer, target=node)

    def _alive_state(self, node: int) -> Optional[NodeProtocolState]:
        st = self.states.get(node)
        if st is None:
            return None
        if self.sim.now >= self.span[node][1]:
            del self.states[node]
            return None
        return st

    def _generate(self, ev) -> None:
        now = self.sim.now
        nodes, pos = self.view.at_time(now)
        nodes = [n for n in nodes.tolist() if n in self.states]
        if not nodes:
            log.debug("no node present to generate unit %s at %.2f", ev.payload, now)
            return
        center = self.road_length / 2 if self.plan.center is None else self.plan.center
        where = {n: self.view.position_of(n, now) for n in nodes}
        origin = min(nodes, key=lambda n: (abs(where[n] - center), n))
        payload = f"unit-{self.seed}-{ev.payload}".encode().ljust(self.plan.payload_size, b"\0")
        unit = DataUnit(origin, where[origin], now, self.plan.lifetime, payload,
                        self.plan.target_span)
        self.units.append(unit)
        st = self.states[origin]
        st.store(unit, now)
        self._record(origin, unit, now)
        proto = self.params.protocol
        if proto in ("flooding", "autocast"):
            jitter = self.rng(origin).uniform(0.0, self.params.flood_jitter_max)
            self.sim.schedule_in(jitter, "send", self._send, target=origin,
                                 payload=Message((unit,)))

    def _record(self, node: int, unit: DataUnit, now: float) -> None:
        key = (node, unit.id)
        if key in self._delivered:
            return
        self._delivered.add(key)
        self.deliveries.append(DeliveryEvent(unit.id, node, self.view.position_of(node, now), now))

    def _timer(self, ev) -> None:
        node = ev.target
        st = self._alive_state(node)
        if st is None:
            return
        now = self.sim.now
        p = self.params
        rng = self.rng(node)
        if p.protocol == "autocast":
            msg, nxt = dis.autocast_on_timer(st, p.autocast, p.max_payload, now, rng, p.fill_units)
            self._transmit(node, msg)
            self._arm(node, nxt)
            return
        mode = "plain" if p.protocol == "mile" else "on_demand"
        msg = dis.mile_on_timer(st, mode, p.max_payload, now, rng, p.fill_units)
        if msg is not None:
            self._transmit(node, msg)
        self._arm(node, now + p.update_interval)

    def _send(self, ev) -> None:
        node = ev.target
        st = self._alive_state(node)
        if st is None:
            return
        now = self.sim.now
        msg: Message = ev.payload
        units = tuple(u for u in msg.units if u.alive(now))
        if not units:
            return
        self._transmit(node, Message(units, msg.ids))

    def _transmit(self, node: int, msg: Message) -> None:
        now = self.sim.now
        self.payload_units_sent += len(msg.units)
        self.medium.transmit(Packet(node, now, msg.size(self.radio.header_bytes), msg))

    def _deliver(self, receiver: int, packet: Packet) -> None:
        st = self._alive_state(receiver)
        if st is None:
            return
        now = self.sim.now
        msg = packet.payload
        p = self.params
        rng = self.rng(receiver)
        if p.protocol == "flooding":
            dis.note_sender(st, packet.sender, now)
            stored = []
            for unit in msg.units:
                for act in dis.flooding_on_receive(st, unit, now, rng, p.flood_jitter_max):
                    stored.append(unit)
                    self._schedule_send(receiver, act)
        elif p.protocol == "autocast":
            stored, acts = dis.autocast_on_receive(st, msg, p.autocast, now, rng, packet.sender)
            for act in acts:
                self._schedule_send(receiver, act)
        else:
            mode = "plain" if p.protocol == "mile" else "on_demand"
            stored = dis.mile_on_receive(st, msg, mode, now, packet.sender)
        for unit in stored:
            self._record(receiver, unit, now)

    def _schedule_send(self, node: int, act: dis.Send) -> None:
        self.sim.schedule_in(act.delay, "send", self._send, target=node,
                             payload=Message(act.units, act.ids))

    # -- theoretical benchmark
    def _run_oracle(self) -> RunResult:
        """Same unit plan as the packet protocols, delivered by the oracle."""
        for node in sorted(self.span, key=lambda n: (self.span[n][0], n)):
            self.sim.schedule(self.span[node][0], "join", self._join, target=node)
        t, i = self.plan.start, 0
        last = self.duration - self.plan.lifetime
        while t <= last + 1e-9:
            self.sim.schedule(t, "generate", self._generate, payload=i)
            i += 1
            t = self.plan.start + i * self.plan.period
        self.sim.run_until(self.duration - 1e-9)
        result = dis.oracle_deliveries(self.view, self.units, self.radio.R)
        by_id = {u.id: u for u in self.units}
        deliveries = []
        for (node, uid), t in sorted(result.deliveries.items(), key=lambda kv: (kv[1], kv[0])):
            deliveries.append(DeliveryEvent(uid, node, self.view.position_of(node, t), t))
        log_ = []
        for t, node, uid in result.broadcasts:
            size = self.radio.header_bytes + by_id[uid].wire_size
            log_.append(ChannelRecord(t, self.view.position_of(node, t), size * 8))
        return RunResult("oracle", self.units, deliveries, log_, self.duration,
                         self.road_length, len(log_), 0, len(log_))


def run_protocol(view: NetworkView, params: ProtocolParams, radio: RadioParams, plan: UnitPlan,
                 seed: int, road_length: float, event_log: Optional[TextIO] = None) -> RunResult:
    return DisseminationNetwork(view, params, radio, plan, seed, road_length, event_log).run()


def oracle_for(result: RunResult, view: NetworkView, R: float) -> dict[tuple[int, int], float]:
    """Oracle delivery times for the units a packet-level run generated."""
    return dis.oracle_deliveries(view, result.units, R).deliveries
