"""Data dissemination protocols as per-node state machines.

Handlers mutate a :class:`NodeProtocolState` and return actions for the
driver (:mod:`vanetsim.network`) to execute; they never touch the radio or
the clock directly, so each one is a pure function of
``(state, event, rng)``.
"""
from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .topology import NetworkView, components

PROTOCOLS = ("flooding", "mile", "mile_od", "autocast", "oracle")

UNIT_DESCRIPTOR_BYTES = 40
ID_BYTES = 8


@dataclass(frozen=True)
class DataUnit:
    origin: int
    origin_position: float
    created_at: float
    lifetime: float = 50.0
    payload: bytes = b""
    target_span: float = 5000.0
    id: int = field(init=False, compare=False)

    def __post_init__(self):
        if self.lifetime <= 0:
            raise ValueError("lifetime must be positive")
        object.__setattr__(self, "id", data_unit_id(self))

    @property
    def payload_size(self) -> int:
        return len(self.payload)

    @property
    def expires_at(self) -> float:
        return self.created_at + self.lifetime

    @property
    def wire_size(self) -> int:
        return UNIT_DESCRIPTOR_BYTES + self.payload_size

    def alive(self, now: float) -> bool:
        return now <= self.expires_at


def data_unit_id(unit: DataUnit) -> int:
    """64-bit BLAKE2b digest over a canonical little-endian encoding."""
    head = struct.pack("<qdddd", unit.origin, unit.origin_position, unit.created_at,
                       unit.lifetime, unit.target_span)
    digest = hashlib.blake2b(head + struct.pack("<I", len(unit.payload)) + unit.payload,
                             digest_size=8, person=b"vanet-unit-v1").digest()
    return int.from_bytes(digest, "big")


@dataclass(frozen=True)
class Message:
    """Protocol payload of one broadcast packet.

    ``ids`` is ``None`` for packets that carry no advertisement (flooding).
    """

    units: tuple[DataUnit, ...] = ()
    ids: Optional[tuple[int, ...]] = None

    def size(self, header_bytes: int) -> int:
        n_ids = len(self.ids) if self.ids is not None else 0
        return header_bytes + ID_BYTES * n_ids + sum(u.wire_size for u in self.units)

    def describe(self) -> str:
        n_ids = "-" if self.ids is None else str(len(self.ids))
        return f"units={len(self.units)} ids={n_ids}"


@dataclass(frozen=True)
class Send:
    """Broadcast ``units`` (and optionally an ID list) after ``delay`` seconds."""

    delay: float
    units: tuple[DataUnit, ...] = ()
    ids: Optional[tuple[int, ...]] = None


@dataclass
class AutoCastParams:
    p_ref: float = 5.4
    fwd_target: float = 2.0
    novelty_fraction: float = 0.4
    flood_jitter_max: float = 0.010
    min_wait: float = 0.25
    ema_alpha: float = 0.5

    def validate(self) -> None:
        if self.p_ref <= 0:
            raise ValueError("p_ref must be positive")
        if not 0 < self.novelty_fraction <= 1:
            raise ValueError("novelty_fraction must lie in (0, 1]")
        if self.flood_jitter_max < 0 or self.min_wait <= 0:
            raise ValueError("flood_jitter_max must be >= 0 and min_wait > 0")


@dataclass
class NodeProtocolState:
    node: int
    known: dict[int, DataUnit] = field(default_factory=dict)
    known_ids: dict[int, float] = field(default_factory=dict)  # id -> first heard
    pending_supply: set[int] = field(default_factory=set)
    heard: dict[int, float] = field(default_factory=dict)  # sender -> last heard
    neighbor_estimate: float = 0.0
    next_update_at: float = 0.0
    last_wait: float = 0.0
    estimates: int = 0
    malformed: int = 0

    def neighbors(self) -> float:
        """Smoothed neighbour count; raw distinct senders before the first update."""
        return self.neighbor_estimate if self.estimates else float(len(self.heard))

    def purge(self, now: float, id_memory: float = 50.0) -> None:
        dead = [uid for uid, u in self.known.items() if not u.alive(now)]
        for uid in dead:
            del self.known[uid]
            self.pending_supply.discard(uid)
        if self.known_ids:
            stale = [uid for uid, t in self.known_ids.items()
                     if uid not in self.known and now - t > id_memory]
            for uid in stale:
                del self.known_ids[uid]
        self.pending_supply &= self.known.keys()

    def alive_units(self, now: float) -> list[DataUnit]:
        self.purge(now)
        return [self.known[k] for k in sorted(self.known)]

    def store(self, unit: DataUnit, now: float) -> bool:
        """Keep *unit* if alive and new; True iff it was stored."""
        if not unit.alive(now) or unit.id in self.known:
            return False
        self.known[unit.id] = unit
        self.known_ids.setdefault(unit.id, now)
        return True


# ------------------------------------------------------------------ formulas


def forwarding_probability(n: float, params: AutoCastParams) -> float:
    """Chance of re-flooding a new unit so that about ``fwd_target`` neighbours do."""
    if n < 0:
        raise ValueError("neighbour count must be non-negative")
    denom = n * params.novelty_fraction
    if denom == 0:
        return 1.0
    return min(max(params.fwd_target / denom, 0.0), 1.0)


def rebroadcast_wait(n: float, params: AutoCastParams) -> float:
    """Seconds until the next periodic update: ``n / p_ref``, floored."""
    if n < 0:
        raise ValueError("neighbour count must be non-negative")
    return max(n / params.p_ref, params.min_wait)


# ------------------------------------------------------------------ handlers


def _valid(msg) -> bool:
    if not isinstance(msg, Message) or not isinstance(msg.units, tuple):
        return False
    if not all(isinstance(u, DataUnit) for u in msg.units):
        return False
    return msg.ids is None or (isinstance(msg.ids, tuple) and all(isinstance(i, int) for i in msg.ids))


def note_sender(state: NodeProtocolState, sender: int, now: float) -> None:
    state.heard[sender] = now


def update_neighbor_estimate(state: NodeProtocolState, now: float, alpha: float,
                             window: float) -> float:
    """EMA of distinct senders heard during the last *window* seconds."""
    cutoff = now - window
    for s in [s for s, t in state.heard.items() if t < cutoff]:
        del state.heard[s]
    sample = len(state.heard)
    if state.estimates == 0:
        state.neighbor_estimate = float(sample)
    else:
        state.neighbor_estimate = (1 - alpha) * state.neighbor_estimate + alpha * sample
    state.estimates += 1
    return state.neighbor_estimate


def flooding_on_receive(state: NodeProtocolState, unit: DataUnit, now: float,
                        rng: random.Random, jitter_max: float = 0.010) -> list[Send]:
    if not state.store(unit, now):
        return []
    return [Send(rng.uniform(0.0, jitter_max), (unit,))]


def _fill(candidates: Sequence[DataUnit], budget: int, rng: random.Random,
          limit: Optional[int] = None) -> list[DataUnit]:
    pool = list(candidates)
    rng.shuffle(pool)
    chosen: list[DataUnit] = []
    for u in pool:
        if limit is not None and len(chosen) >= limit:
            break
        if u.wire_size <= budget:
            chosen.append(u)
            budget -= u.wire_size
    return chosen


def on_demand_message(state: NodeProtocolState, max_payload: int, now: float,
                      rng: random.Random, fill_units: int = 0) -> Message:
    """Full alive ID list, owed units first, then up to ``fill_units`` random ones."""
    alive = state.alive_units(now)
    ids = tuple(u.id for u in alive)
    budget = max_payload - ID_BYTES * len(ids)
    units: list[DataUnit] = []
    for uid in sorted(state.pending_supply):
        u = state.known[uid]
        if u.wire_size <= budget:
            units.append(u)
            budget -= u.wire_size
    state.pending_supply.difference_update(u.id for u in units)
    if fill_units > 0:
        rest = [u for u in alive if u not in units]
        units.extend(_fill(rest, budget, rng, fill_units))
    return Message(tuple(units), ids)


def mile_on_timer(state: NodeProtocolState, mode: str, max_payload: int, now: float,
                  rng: random.Random, fill_units: int = 0) -> Optional[Message]:
    if mode == "plain":
        alive = state.alive_units(now)
        if not alive:
            return None
        return Message(tuple(_fill(alive, max_payload, rng)))
    if mode == "on_demand":
        return on_demand_message(state, max_payload, now, rng, fill_units)
    raise ValueError(f"unknown MILE mode {mode!r}")


def _merge(state: NodeProtocolState, msg: Message, now: float, advertise: bool) -> list[DataUnit]:
    stored = [u for u in msg.units if state.store(u, now)]
    # a neighbour already supplied these
    state.pending_supply.difference_update(u.id for u in msg.units)
    if advertise and msg.ids is not None:
        theirs = set(msg.ids)
        for uid in msg.ids:
            if uid not in state.known:
                state.known_ids.setdefault(uid, now)
        state.purge(now)
        state.pending_supply.update(uid for uid in state.known if uid not in theirs)
    return stored


def mile_on_receive(state: NodeProtocolState, msg, mode: str, now: float,
                    sender: Optional[int] = None) -> list[DataUnit]:
    """Merge a MILE packet; returns the units stored for the first time."""
    if not _valid(msg):
        state.malformed += 1
        return []
    if sender is not None:
        note_sender(state, sender, now)
    return _merge(state, msg, now, advertise=(mode == "on_demand"))


def autocast_on_receive(state: NodeProtocolState, msg, params: AutoCastParams, now: float,
                        rng: random.Random, sender: Optional[int] = None
                        ) -> tuple[list[DataUnit], list[Send]]:
    """Merge like MILE on-demand; re-flood new units with probability p(n).

    Only units that arrived in a flood packet (no ID list) are re-flooded.
    Units supplied through the periodic exchange are elder data and keep
    spreading by that mechanism alone.
    """
    if not _valid(msg):
        state.malformed += 1
        return [], []
    if sender is not None:
        note_sender(state, sender, now)
    stored = _merge(state, msg, now, advertise=True)
    if msg.ids is not None:
        return stored, []
    p = forwarding_probability(state.neighbors(), params)
    actions = [Send(rng.uniform(0.0, params.flood_jitter_max), (u,))
               for u in stored if rng.random() < p]
    return stored, actions


def autocast_on_timer(state: NodeProtocolState, params: AutoCastParams, max_payload: int,
                      now: float, rng: random.Random, fill_units: int = 0
                      ) -> tuple[Message, float]:
    """Periodic ID exchange; re-arms itself after ``rebroadcast_wait(n)``."""
    window = max(1.0, 2 * state.last_wait)
    n = update_neighbor_estimate(state, now, params.ema_alpha, window)
    msg = on_demand_message(state, max_payload, now, rng, fill_units)
    wait = rebroadcast_wait(n, params)
    state.last_wait = wait
    state.next_update_at = now + wait
    return msg, state.next_update_at


# ------------------------------------------------------------------ oracle


@dataclass
class OracleResult:
    deliveries: dict[tuple[int, int], float]  # (node, unit id) -> time
    broadcasts: list[tuple[float, int, int]]  # (time, node, unit id)


def oracle_deliveries(view: NetworkView, units: Iterable[DataUnit], R: float,
                      dt: Optional[float] = None) -> OracleResult:
    """Earliest possible delivery under instantaneous multi-hop spreading.

    At the unit's creation and at every later snapshot in its lifetime,
    information fills the whole connected component of any informed node;
    between snapshots it rides its carriers. ``dt`` defaults to the
    history cadence, which is the only cadence positions exist at.
    """
    dt = view.dt if dt is None else dt
    if dt <= 0:
        raise ValueError("dt must be positive")
    if abs(dt - view.dt) > 1e-12:
        raise ValueError("oracle dt must equal the mobility dt")
    out: dict[tuple[int, int], float] = {}
    bcasts: list[tuple[float, int, int]] = []
    times = view.times
    for unit in units:
        k0 = view.history.index_at(unit.created_at)
        informed: dict[int, float] = {}
        k = k0
        while k < len(times):
            t = unit.created_at if k == k0 else float(times[k])
            if t > unit.expires_at:
                break
            nodes, pos = view.at(k)
            if k == k0:
                if unit.origin not in set(nodes.tolist()):
                    raise KeyError(f"origin {unit.origin} absent at creation")
                informed[unit.origin] = t
            present_informed = [n for n in nodes.tolist() if n in informed]
            if present_informed:
                for comp in components(nodes, pos, R):
                    if not any(n in informed for n in comp):
                        continue
                    fresh = [n for n in comp if n not in informed]
                    if not fresh:
                        continue
                    bcasts.extend((t, s, unit.id) for s in _senders(comp, informed, nodes, pos, R))
                    for n in fresh:
                        informed[n] = t
            k += 1
        for n, t in informed.items():
            out[(n, unit.id)] = t
    return OracleResult(out, bcasts)


def _senders(comp: list[int], informed: dict, nodes: np.ndarray, pos: np.ndarray,
             R: float) -> list[int]:
    """Broadcasters of a breadth-first flood from the informed members."""
    where = {int(n): float(p) for n, p in zip(nodes, pos)}
    have = {n for n in comp if n in informed}
    frontier = sorted(have)
    senders = []
    while frontier:
        nxt = []
        for s in frontier:
            hear = [n for n in comp if n not in have and abs(where[n] - where[s]) <= R]
            if hear:
                senders.append(s)
                have.update(hear)
                nxt.extend(hear)
        frontier = sorted(nxt)
    return senders
