"""Hovering Data Clouds at the back and front of a traffic jam.

Every equipped vehicle runs the same per-processor state machine. Time is
split into alternating slots: in the smData slot processors announce
themselves within their congestion radius, in the Data slot slow
processors broadcast ``(id, loc, v, p, q)`` within R. From the data
messages each processor derives the jam boundaries ``back`` and
``front``; processors close to a boundary carry the corresponding HDC.

Handlers mutate :class:`HdcVars` in place and return a list of actions
(:class:`Broadcast`, :class:`SetTimer`) for the driver. Positions are
travel coordinates: they grow in the driving direction, so the back of a
jam has the smallest coordinate.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, fields
from typing import Optional, TextIO

import numpy as np

from .kernel import EventHandle, SchedulingError, Simulator, next_multiple
from .radio import Medium, Packet, RadioParams, Scope

IDLE, JOINING, ACTIVE = "idle", "joining", "active"
_ALLOWED = {(IDLE, JOINING), (IDLE, ACTIVE), (JOINING, ACTIVE), (ACTIVE, IDLE)}

MESSAGE_KINDS = ("smdata", "data", "Congestion", "hdcdistance")
# payload bytes per kind, on top of the radio header
MESSAGE_BYTES = {"smdata": 20, "data": 22, "Congestion": 24, "hdcdistance": 8}

TIMERS = ("smData", "Data", "Information", "AheadInfo")


@dataclass
class HdcParams:
    R: float = 250.0
    r_hdc: float = 250.0
    d: float = 0.05
    t_data: float = 1.0
    t_smdata: float = 0.2
    t_information: float = 1.0
    t_aheadinfo: float = 1.0
    t_ab: float = 0.01
    cr_floor: float = 15.0  # m
    cr_headway: float = 2.0  # s
    cv_headway: float = 2.0  # s
    cv_cap: float = 16.7  # m/s
    cv_max: float = 16.7  # m/s
    min_distance: float = 7.5  # m, bumper-to-bumper pitch of a stopped queue
    v0_back: bytes = b"hdc-back"
    v0_front: bytes = b"hdc-front"

    def validate(self) -> None:
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, float) and not val > 0:
                raise ValueError(f"{f.name} must be positive, got {val}")
        if not self.d < self.t_smdata:
            raise ValueError("latency bound d must be below t_smdata")

    def CR(self, v: float) -> float:
        """Congestion radius for own speed *v*: two-second rule, floored."""
        return max(self.cr_floor, self.cr_headway * v)

    def CV(self, dist: float) -> float:
        """Speed below which a gap of *dist* metres counts as congested."""
        return min(dist / self.cv_headway, self.cv_cap)

    @property
    def env_capacity(self) -> int:
        return 3 * math.ceil(2 * self.R / self.min_distance)


@dataclass(frozen=True)
class HdcMessage:
    kind: str
    ident: Optional[int] = None
    l: Optional[float] = None
    g: Optional[float] = None
    p: Optional[int] = None
    q: Optional[int] = None
    hdc_front: Optional[float] = None  # Congestion: front location as known at the back
    L_front: Optional[float] = None  # hdcdistance

    _REQUIRED = {
        "smdata": ("ident", "l", "g"),
        "data": ("ident", "l", "g", "p", "q"),
        "Congestion": ("l", "hdc_front", "g"),
        "hdcdistance": ("L_front",),
    }

    def __post_init__(self):
        if self.kind not in MESSAGE_KINDS:
            raise ValueError(f"unknown HDC message kind {self.kind!r}")
        missing = [n for n in self._REQUIRED[self.kind] if getattr(self, n) is None]
        if missing:
            raise ValueError(f"{self.kind} message lacks {', '.join(missing)}")

    @property
    def size(self) -> int:
        return MESSAGE_BYTES[self.kind]

    def describe(self) -> str:
        vals = " ".join(f"{n}={_num(getattr(self, n))}" for n in self._REQUIRED[self.kind])
        return f"{self.kind} {vals}"


def _num(x) -> str:
    return f"{x:.6f}" if isinstance(x, float) else str(x)


@dataclass(frozen=True)
class EnvEntry:
    ident: int
    l: float
    g: float
    p: int
    q: int


@dataclass
class HdcVars:
    ident: int
    status_back: str = IDLE
    status_front: str = IDLE
    location_back: float = 0.0
    location_front: float = 0.0
    back: float = math.inf
    front: float = 0.0
    back_id: int = -1
    front_id: int = -1
    back_p: int = 0  # flags of back_id
    back_q: int = 0
    front_p: int = 0  # flags of front_id
    front_q: int = 0
    p: int = 0
    q: int = 0
    p_before: int = 0
    q_before: int = 0
    congestion_counter: int = 0
    participant: int = 0
    participant_before: int = 0
    s: int = 0
    ahead: int = 0
    hdc_front_location: float = 0.0
    t: float = 0.0
    state: bytes = b""
    env: deque = field(default_factory=deque)
    buffer: list = field(default_factory=list)  # [(message, arrival clock)]
    relayed: dict = field(default_factory=dict)  # message -> last relay clock

    @classmethod
    def fresh(cls, ident: int, params: HdcParams) -> "HdcVars":
        return cls(ident, env=deque(maxlen=params.env_capacity))

    def flags_of(self, ident: int) -> tuple[int, int]:
        if ident == self.ident:
            return self.p, self.q
        for e in reversed(self.env):
            if e.ident == ident:
                return e.p, e.q
        return 0, 0

    def observable(self) -> tuple:
        """Everything but the transient buffer and relay memory, for trace comparison."""
        skip = {"buffer", "relayed"}
        out = []
        for f in fields(self):
            if f.name in skip:
                continue
            val = getattr(self, f.name)
            out.append(tuple(val) if f.name == "env" else val)
        return tuple(out)


# -------------------------------------------------------------- actions


@dataclass(frozen=True)
class Broadcast:
    message: HdcMessage
    radius: Optional[float] = None  # None means the radio range R


@dataclass(frozen=True)
class SetTimer:
    name: str
    at: float


# -------------------------------------------------------------- handlers


def on_timer_smdata(vs: HdcVars, loc: float, v: float, clock: float, params: HdcParams) -> list:
    vs.q_before = vs.back_q
    vs.p_before = vs.front_p
    vs.back, vs.front = math.inf, 0.0
    vs.back_p = vs.back_q = vs.front_p = vs.front_q = 0
    vs.p = vs.q = 0
    out = [Broadcast(HdcMessage("smdata", ident=vs.ident, l=loc, g=v), radius=params.CR(v)),
           SetTimer("Data", next_multiple(params.t_data, clock))]
    vs.s = 0
    return out


def on_timer_data(vs: HdcVars, loc: float, v: float, clock: float, params: HdcParams) -> list:
    vs.t = clock
    vs.congestion_counter = 0
    if vs.participant == 1 or (vs.participant_before == 1 and (vs.p == 1 or vs.q == 1)):
        vs.participant_before = 1
    else:
        vs.participant = 0
        vs.p_before = vs.q_before = 0
    if vs.status_back == ACTIVE and vs.participant == 0:
        vs.status_back = IDLE
        vs.ahead = 0
    if vs.status_front == ACTIVE and vs.participant == 0:
        vs.status_front = IDLE
    out = []
    smdata = SetTimer("smData", next_multiple(params.t_smdata, clock))
    if ((vs.participant == 0 and v <= params.cv_max)
            or vs.status_back == ACTIVE or vs.status_front == ACTIVE):
        out.append(Broadcast(HdcMessage("data", ident=vs.ident, l=loc, g=v, p=vs.p, q=vs.q)))
    out.append(smdata)
    vs.participant_before = vs.participant
    vs.participant = 0
    vs.env.clear()
    return out


def lbrecv(vs: HdcVars, m: HdcMessage, clock: float, params: HdcParams) -> list:
    vs.buffer.append((m, clock))
    return [SetTimer("NewMessage", clock + params.d)]


def _take(vs: HdcVars, clock: float, d: float) -> HdcMessage:
    for i, (m, arrival) in enumerate(vs.buffer):
        if arrival + d <= clock + 1e-9:
            del vs.buffer[i]
            return m
    raise SchedulingError(f"NewMessage at {clock} for {vs.ident} with no due message")


def _set_back(vs: HdcVars, a: float, a_id: int, b: float, b_id: int) -> None:
    vs.back = min(vs.back, a, b)
    if vs.back == a:
        vs.back_id = a_id
    if vs.back == b:
        vs.back_id = b_id
    vs.back_p, vs.back_q = vs.flags_of(vs.back_id)
    vs.front = max(vs.front, a, b)
    if vs.front == a:
        vs.front_id = a_id
    if vs.front == b:
        vs.front_id = b_id
    vs.front_p, vs.front_q = vs.flags_of(vs.front_id)


def _relay(vs: HdcVars, m: HdcMessage, clock: float, params: HdcParams) -> list:
    last = vs.relayed.get(m)
    if last is not None and clock - last < params.t_information:
        return []
    vs.relayed[m] = clock
    return [Broadcast(m)]


def on_new_message(vs: HdcVars, loc: float, v: float, clock: float, params: HdcParams) -> list:
    m = _take(vs, clock, params.d)
    out: list = []
    if m.kind == "data":
        prior = list(vs.env)
        vs.env.append(EnvEntry(m.ident, m.l, m.g, m.p, m.q))
        gap = abs(loc - m.l)
        if gap < params.CR(v) and v < params.CV(gap):
            _set_back(vs, loc, vs.ident, m.l, m.ident)
            vs.congestion_counter += 1
            vs.s = 1
            vs.participant = 1
        for e in prior:
            gap = abs(m.l - e.l)
            if gap < params.CR(m.g) and m.g < params.CV(gap):
                _set_back(vs, e.l, e.ident, m.l, m.ident)
                if vs.s == 0:
                    vs.congestion_counter += 1
                    vs.s = 1
        settled = clock >= vs.t + params.t_ab + params.d
        if (vs.congestion_counter > 0 and abs(vs.back - loc) < params.r_hdc
                and vs.back_p == 0 and settled):
            out += congestion(vs, clock, params)
            vs.participant = 1
        if (vs.congestion_counter > 0 and abs(vs.front - loc) < params.r_hdc
                and vs.front_q == 0 and settled):
            out += congestion_ahead(vs, clock, params)
            vs.participant = 1
        if vs.ahead == 0:
            vs.hdc_front_location = vs.front
    elif m.kind == "Congestion":
        if m.l > loc:
            out += _relay(vs, m, clock, params)
        if abs(m.l - loc) < params.r_hdc and vs.status_back == IDLE:
            vs.status_back = JOINING
    elif m.kind == "hdcdistance":
        if vs.status_back == ACTIVE:
            vs.hdc_front_location = m.L_front
            vs.ahead = 1
        elif vs.participant == 1:
            out += _relay(vs, m, clock, params)
    elif m.kind == "smdata":
        if m.l < loc:
            vs.p = 1
        if m.l > loc:
            vs.q = 1
    return out


def congestion(vs: HdcVars, clock: float, params: HdcParams) -> list:
    timer = SetTimer("Information", next_multiple(params.t_information, clock))
    if vs.status_back == ACTIVE:
        vs.location_back = vs.back
        return [timer]
    if vs.status_back == JOINING:
        vs.status_back = ACTIVE
        vs.location_back = vs.back
        return [timer]
    if vs.q_before == 0:
        vs.location_back = vs.back
        vs.state = params.v0_back
        vs.status_back = ACTIVE
        return [timer]
    vs.status_back = JOINING  # collect the HDC state before taking over
    return []


def congestion_ahead(vs: HdcVars, clock: float, params: HdcParams) -> list:
    timer = SetTimer("AheadInfo", next_multiple(params.t_aheadinfo, clock))
    if vs.status_front == ACTIVE:
        vs.location_front = vs.front
        return [timer]
    if vs.status_front == JOINING:
        vs.status_front = ACTIVE
        vs.location_front = vs.front
        return [timer]
    if vs.p_before == 0:
        vs.location_front = vs.front
        vs.state = params.v0_front
        vs.status_front = ACTIVE
        return [timer]
    vs.status_front = JOINING
    return []


def on_timer_information(vs: HdcVars, loc: float, v: float, clock: float,
                         params: HdcParams) -> list:
    if vs.status_back != ACTIVE:
        return []
    out = [Broadcast(HdcMessage("Congestion", l=vs.location_back,
                                hdc_front=vs.hdc_front_location, g=v)),
           SetTimer("Information", next_multiple(params.t_information, clock))]
    if abs(loc - vs.location_back) > params.r_hdc:
        vs.status_back = IDLE
        vs.ahead = 0
    return out


def on_timer_aheadinfo(vs: HdcVars, loc: float, clock: float, params: HdcParams) -> list:
    out = []
    if vs.status_front == ACTIVE:
        # re-armed like Information, so the front keeps reporting while active
        out.append(Broadcast(HdcMessage("hdcdistance", L_front=vs.location_front)))
        out.append(SetTimer("AheadInfo", next_multiple(params.t_aheadinfo, clock)))
    if abs(loc - vs.location_front) > params.r_hdc:
        vs.status_front = IDLE
    return out


# -------------------------------------------------------------- kinematics


class Kinematics:
    """Where radios are: ``at(t)`` gives ``(nodes, positions, speeds)``."""

    spans: dict[int, tuple[float, float]]

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        raise NotImplementedError


class StaticKinematics(Kinematics):
    """Fixed cars, optionally at constant speed ``v`` (positions advance as x0 + v t)."""

    def __init__(self, positions, speeds, moving: bool = False, until: float = math.inf):
        self.x0 = np.asarray(positions, dtype=float)
        self.v = np.asarray(speeds, dtype=float)
        self.nodes = np.arange(len(self.x0))
        self.moving = moving
        self.spans = {int(n): (0.0, until) for n in self.nodes}

    def at(self, t):
        x = self.x0 + self.v * t if self.moving else self.x0
        return self.nodes, x, self.v


class HistoryKinematics(Kinematics):
    """Equipped vehicles of a one-direction, open-boundary history."""

    def __init__(self, history, equipped: Optional[np.ndarray] = None):
        if np.any(history.lanes < 0):
            raise ValueError("HDC runs on one driving direction")
        n = len(history.ids)
        self.history = history
        self.equipped = np.ones(n, bool) if equipped is None else np.asarray(equipped, bool)
        present = ~np.isnan(history.positions) & self.equipped[None, :]
        self.present = present
        self.spans = {}
        dt = history.dt
        for j in np.flatnonzero(present.any(axis=0)):
            ks = np.flatnonzero(present[:, j])
            # a vehicle that leaves and re-enters would need a new identity
            if ks[-1] - ks[0] + 1 != len(ks):
                raise ValueError(f"vehicle column {j} is not contiguous in time")
            self.spans[int(j)] = (float(history.times[ks[0]]), float(history.times[ks[-1]]) + dt)
        self._cache: dict = {}

    def at(self, t):
        k = self.history.index_at(t)
        hit = self._cache.get(k)
        if hit is None:
            sel = self.present[k]
            hit = (np.flatnonzero(sel), self.history.positions[k][sel], self.history.speeds[k][sel])
            self._cache[k] = hit
        return hit


# -------------------------------------------------------------- driver


@dataclass
class TraceStep:
    time: float
    node: int
    event: str
    vars: tuple


class HdcNetwork:
    """Runs the HDC state machine of every radio over a kernel and a medium."""

    def __init__(self, kinematics: Kinematics, params: Optional[HdcParams] = None,
                 radio: Optional[RadioParams] = None, event_log: Optional[TextIO] = None,
                 record: bool = False):
        self.params = params or HdcParams()
        self.params.validate()
        self.radio = radio or RadioParams(R=self.params.R, collisions=False)
        self.radio.validate()
        self.kin = kinematics
        self.sim = Simulator()
        self.medium = Medium(self.sim, self.radio, self._snapshot, self._deliver)
        self.vars: dict[int, HdcVars] = {}
        self.timers: dict[tuple[int, str], EventHandle] = {}
        self.log = event_log
        self.record = record
        self.trace: list[TraceStep] = []
        self.transitions: list[tuple[float, int, str, str, str, float]] = []
        self._last_status: dict[int, tuple[str, str]] = {}
        self._started = False

    def _snapshot(self, t):
        nodes, pos, _ = self.kin.at(t)
        return nodes, pos

    def _here(self, node: int, t: float) -> tuple[float, float]:
        nodes, pos, spd = self.kin.at(t)
        i = np.searchsorted(nodes, node)
        if i >= len(nodes) or nodes[i] != node:
            raise KeyError(f"node {node} absent at t={t}")
        return float(pos[i]), float(spd[i])

    def _alive(self, node: int) -> bool:
        a, b = self.kin.spans[node]
        return node in self.vars and a <= self.sim.now < b

    # -- scheduling
    def start(self) -> None:
        for node in sorted(self.kin.spans, key=lambda n: (self.kin.spans[n][0], n)):
            self.sim.schedule(self.kin.spans[node][0], "hdc-join", self._join, target=node)
        self._started = True

    def advance(self, t: float) -> None:
        if not self._started:
            self.start()
        self.sim.run_until(t)

    def run(self, t_end: float) -> None:
        self.advance(t_end)

    def _join(self, ev) -> None:
        node = ev.target
        self.vars[node] = HdcVars.fresh(node, self.params)
        self._step(node, "init", [SetTimer("smData", self.sim.now)])

    def _set_timer(self, node: int, name: str, at: float) -> None:
        if name == "NewMessage":
            self.sim.schedule(at, "hdc-NewMessage", self._fire, target=node, payload=name)
            return
        old = self.timers.pop((node, name), None)
        if old is not None:
            old.cancel()
        self.timers[(node, name)] = self.sim.schedule(at, f"hdc-{name}", self._fire,
                                                      target=node, payload=name)

    def _fire(self, ev) -> None:
        node, name = ev.target, ev.payload
        if not self._alive(node):
            return
        if name != "NewMessage":
            self.timers.pop((node, name), None)
        vs = self.vars[node]
        now = self.sim.now
        loc, v = self._here(node, now)
        p = self.params
        if name == "smData":
            acts = on_timer_smdata(vs, loc, v, now, p)
        elif name == "Data":
            acts = on_timer_data(vs, loc, v, now, p)
        elif name == "Information":
            acts = on_timer_information(vs, loc, v, now, p)
        elif name == "AheadInfo":
            acts = on_timer_aheadinfo(vs, loc, now, p)
        else:
            acts = on_new_message(vs, loc, v, now, p)
        self._step(node, name, acts)

    def _deliver(self, receiver: int, packet: Packet) -> None:
        if not self._alive(receiver):
            return
        vs = self.vars[receiver]
        self._step(receiver, "LBrecv", lbrecv(vs, packet.payload, self.sim.now, self.params))

    def _step(self, node: int, event: str, acts: list) -> None:
        vs = self.vars[node]
        now = self.sim.now
        for act in acts:
            if isinstance(act, SetTimer):
                self._set_timer(node, act.name, act.at)
            else:
                m = act.message
                scope = Scope.R if act.radius is None else Scope.CR
                size = self.radio.header_bytes + m.size
                self.medium.transmit(Packet(node, now, size, m, scope, act.radius))
                self._emit(now, node, f"send_{m.kind}", m.describe())
        self._track(node, now)
        if self.record:
            self.trace.append(TraceStep(now, node, event, vs.observable()))

    def _track(self, node: int, now: float) -> None:
        vs = self.vars[node]
        prev = self._last_status.get(node, (IDLE, IDLE))
        for side, old, new, where in (("back", prev[0], vs.status_back, vs.location_back),
                                      ("front", prev[1], vs.status_front, vs.location_front)):
            if old != new:
                if (old, new) not in _ALLOWED:
                    raise AssertionError(f"illegal {side} transition {old}->{new} at {node}")
                self.transitions.append((now, node, side, old, new, where))
                self._emit(now, node, f"status_{side}", f"{old}->{new} location={where:.6f}")
        self._last_status[node] = (vs.status_back, vs.status_front)

    def _emit(self, t: float, node: int, event: str, detail: str) -> None:
        if self.log is not None:
            self.log.write(f"{t:.6f} {node} {event} {detail}\n")

    # -- queries
    def active(self, side: str = "back") -> dict[int, float]:
        """Radios carrying an HDC right now, with their HDC location."""
        out = {}
        for n, vs in self.vars.items():
            if not self._alive(n):
                continue
            if side == "back" and vs.status_back == ACTIVE:
                out[n] = vs.location_back
            elif side == "front" and vs.status_front == ACTIVE:
                out[n] = vs.location_front
        return out
