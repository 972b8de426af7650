"""Channel usage, dissemination speed, delivery ratio and partitions."""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .dissemination import DataUnit
from .radio import ChannelRecord
from .topology import NetworkView, components


def channel_usage_per_km(channel_log: Iterable[ChannelRecord], window: float,
                         road_length_km: float, start: float = 0.0) -> float:
    """kbit/s/km over ``[start, start + window)``."""
    if window <= 0:
        raise ValueError("window must be positive")
    bits = sum(rec.bits for rec in channel_log if start <= rec.time < start + window)
    return bits / window / road_length_km / 1000


def delivery_speeds(deliveries, origin_position: float, origin_time: float) -> list[float]:
    """Per-delivery speed in km/h; instantaneous deliveries are skipped."""
    out = []
    for d in deliveries:
        dt = d.time - origin_time
        if dt <= 0:
            continue
        out.append(abs(d.position - origin_position) / dt * 3.6)
    return out


def dissemination_speed(deliveries, origin_position: float, origin_time: float) -> Optional[float]:
    speeds = delivery_speeds(deliveries, origin_position, origin_time)
    return sum(speeds) / len(speeds) if speeds else None


def protocol_speed(units: Sequence[DataUnit], deliveries, eligible=None) -> Optional[float]:
    """Mean over units of the mean over that unit's deliveries."""
    per_unit = defaultdict(list)
    for d in deliveries:
        if eligible is not None and (d.node, d.unit_id) not in eligible:
            continue
        per_unit[d.unit_id].append(d)
    values = []
    for u in units:
        s = dissemination_speed(per_unit.get(u.id, ()), u.origin_position, u.created_at)
        if s is not None:
            values.append(s)
    return sum(values) / len(values) if values else None


def delivery_ratio(delivered: Iterable[tuple[int, int]], eligible: set) -> Optional[float]:
    if not eligible:
        return None
    return len(set(delivered) & eligible) / len(eligible)


def partitions(nodes, positions, R: float) -> list[list[int]]:
    return components(np.asarray(nodes), np.asarray(positions, dtype=float), R)


def eligible_pairs(view: NetworkView, units: Iterable[DataUnit]) -> set[tuple[int, int]]:
    """``(node, unit id)`` for nodes within target span of the origin at any
    snapshot of the unit's lifetime (creation snapshot included)."""
    out: set[tuple[int, int]] = set()
    for u in units:
        k0 = view.history.index_at(u.created_at)
        k = k0
        while k < len(view.times) and (k == k0 or view.times[k] <= u.expires_at):
            nodes, pos = view.at(k)
            near = np.abs(pos - u.origin_position) <= u.target_span
            out.update((int(n), u.id) for n in nodes[near] if n != u.origin)
            k += 1
    return out


@dataclass
class MetricSeries:
    protocol: str
    penetration: float
    concurrent_units: int
    channel_kbit_s_km: float
    speed_kmh: Optional[float]
    delivery_ratio: Optional[float]


@dataclass
class RunMetrics:
    protocol: str
    penetration: float
    concurrent_units: int
    seed: int
    channel_kbit_s_km: float
    speed_kmh: Optional[float]
    delivery_ratio: Optional[float]
    units: int
    eligible: int
    delivered: int
    packets: int
    collisions: int


def evaluate(result, view: NetworkView, penetration: float, concurrent: int, seed: int) -> RunMetrics:
    eligible = eligible_pairs(view, result.units)
    got = {(d.node, d.unit_id) for d in result.deliveries}
    return RunMetrics(
        protocol=result.protocol,
        penetration=penetration,
        concurrent_units=concurrent,
        seed=seed,
        channel_kbit_s_km=channel_usage_per_km(result.channel_log, result.duration,
                                               result.road_length / 1000),
        speed_kmh=protocol_speed(result.units, result.deliveries, eligible),
        delivery_ratio=delivery_ratio(got, eligible),
        units=len(result.units),
        eligible=len(eligible),
        delivered=len(got & eligible),
        packets=result.packets,
        collisions=result.collisions,
    )


def aggregate(runs: Sequence[RunMetrics]) -> list[MetricSeries]:
    groups: dict[tuple, list[RunMetrics]] = defaultdict(list)
    for r in runs:
        groups[(r.protocol, r.penetration, r.concurrent_units)].append(r)
    out = []
    for (proto, pen, conc), rs in groups.items():
        out.append(MetricSeries(proto, pen, conc,
                                _mean([r.channel_kbit_s_km for r in rs]),
                                _mean([r.speed_kmh for r in rs]),
                                _mean([r.delivery_ratio for r in rs])))
    return out


def _mean(values) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_rows(path, rows: Sequence) -> None:
    fields = list(asdict(rows[0]).keys()) if rows else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(v) for v in asdict(r).values()])
