"""Range-limited broadcast medium with airtime accounting.

Propagation is an ideal unit disk on the road axis. Collisions follow a
no-capture overlap rule: a receiver loses every packet whose reception
interval overlaps another reception at that receiver.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .kernel import Simulator


@dataclass
class RadioParams:
    R: float = 250.0
    bandwidth: float = 1_000_000.0
    tx_delay: float = 0.010
    header_bytes: int = 25
    collisions: bool = True

    def validate(self) -> None:
        for name in ("R", "bandwidth", "tx_delay", "header_bytes"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


class Scope(enum.Enum):
    R = "R"
    CR = "CR"


@dataclass(frozen=True)
class Packet:
    sender: int
    sent_at: float
    size: int
    payload: Any
    scope: Scope = Scope.R
    radius: Optional[float] = None  # required for Scope.CR

    def describe(self) -> str:
        return f"from={self.sender} size={self.size} scope={self.scope.value}"


def in_range(a: float, b: float, range_: float) -> bool:
    return abs(a - b) <= range_


def airtime(size: float, bandwidth: float) -> float:
    if size <= 0 or bandwidth <= 0:
        raise ValueError("size and bandwidth must be positive")
    return size * 8 / bandwidth


def broadcast(packet: Packet, nodes: np.ndarray, positions: np.ndarray,
              params: RadioParams) -> list[tuple[int, float]]:
    """Receivers of *packet* in the snapshot ``(nodes, positions)``.

    Returns ``(receiver, deliver_at)`` pairs in ascending receiver order.
    """
    where = np.flatnonzero(nodes == packet.sender)
    if not len(where):
        raise KeyError(f"sender {packet.sender} not in snapshot")
    origin = positions[where[0]]
    radius = params.R if packet.scope is Scope.R else packet.radius
    if radius is None:
        raise ValueError("CR-scoped packet needs a radius")
    hit = (np.abs(positions - origin) <= radius) & (nodes != packet.sender)
    deliver_at = packet.sent_at + params.tx_delay + airtime(packet.size, params.bandwidth)
    return [(int(r), deliver_at) for r in np.sort(nodes[hit])]


@dataclass
class ChannelRecord:
    time: float
    sender_position: float
    bits: int


@dataclass
class _Reception:
    start: float
    end: float
    seq: int


@dataclass
class Medium:
    """Executes broadcasts on a kernel.

    ``snapshot(t)`` returns ``(node_ids, positions)`` of the radios present
    at time ``t``; ``deliver(receiver, packet)`` is called for every
    successful reception.
    """

    sim: Simulator
    params: RadioParams
    snapshot: Callable[[float], tuple[np.ndarray, np.ndarray]]
    deliver: Callable[[int, Packet], None]
    channel_log: list[ChannelRecord] = field(default_factory=list)
    sent_packets: int = 0
    delivered: int = 0
    collided: int = 0
    _receptions: dict[int, list[_Reception]] = field(default_factory=dict)
    _seq: int = 0

    def transmit(self, packet: Packet) -> list[tuple[int, float]]:
        nodes, positions = self.snapshot(packet.sent_at)
        receivers = broadcast(packet, nodes, positions, self.params)
        sender_pos = float(positions[np.flatnonzero(nodes == packet.sender)[0]])
        self.channel_log.append(ChannelRecord(packet.sent_at, sender_pos, packet.size * 8))
        self.sent_packets += 1
        if not receivers:
            return receivers
        end = receivers[0][1]
        start = end - airtime(packet.size, self.params.bandwidth)
        seq = self._seq
        self._seq += 1
        if self.params.collisions:
            for r, _ in receivers:
                lst = self._receptions.setdefault(r, [])
                if len(lst) > 32:
                    lst[:] = [x for x in lst if x.end > start - 1.0]
                lst.append(_Reception(start, end, seq))
        self.sim.schedule(end, "rx", self._on_arrival, target=packet.sender,
                          payload=(packet, receivers, start, end, seq))
        return receivers

    def _on_arrival(self, event) -> None:
        packet, receivers, start, end, seq = event.payload
        for r, _ in receivers:
            if self.params.collisions and self._overlapped(r, start, end, seq):
                self.collided += 1
                continue
            self.delivered += 1
            self.deliver(r, packet)

    def _overlapped(self, receiver: int, start: float, end: float, seq: int) -> bool:
        for other in self._receptions.get(receiver, ()):
            if other.seq != seq and other.start < end and start < other.end:
                return True
        return False

    def bits_between(self, t0: float, t1: float) -> int:
        return sum(rec.bits for rec in self.channel_log if t0 <= rec.time < t1)
