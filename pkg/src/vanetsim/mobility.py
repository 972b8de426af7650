"""Highway kinematics: Krauss-style car following on a multi-lane road.

Vehicles keep their lane. Positive lanes travel rightward (increasing
position), negative lanes leftward. Internally every lane is advanced in
its own travel coordinate ``x`` (increasing along the driving direction);
``position = x`` for rightward lanes and ``road_length - x`` otherwise.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np


def kmh_to_mps(kmh) -> float:
    """Exact rational km/h -> m/s, rounded once."""
    return float(Fraction(kmh) * Fraction(1000, 3600))


V_105_KMH = kmh_to_mps(105)
V_100_KMH = kmh_to_mps(100)


@dataclass(frozen=True)
class VehicleState:
    id: int
    lane: int
    position: float
    speed: float
    length: float = 5.0

    @property
    def direction(self) -> int:
        return 1 if self.lane > 0 else -1


@dataclass
class MobilityParams:
    road_length: float = 10_000.0
    lanes_per_direction: int = 2
    v_max: float = V_105_KMH
    mean_density: float = 36.0  # vehicles/km, all lanes and both directions
    accel: float = 2.6
    decel: float = 4.5
    driver_imperfection: float = 0.5
    dt: float = 1.0
    reaction_time: float = 1.0
    min_gap: float = 2.5
    vehicle_length: float = 5.0
    boundary: str = "ring"  # or "open"
    directions: int = 2  # 1 = rightward lanes only

    def validate(self) -> None:
        for name in ("road_length", "v_max", "mean_density", "accel", "decel", "dt",
                     "reaction_time", "vehicle_length"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lanes_per_direction < 1:
            raise ValueError("lanes_per_direction must be >= 1")
        if not 0.0 <= self.driver_imperfection <= 1.0:
            raise ValueError("driver_imperfection must lie in [0, 1]")
        if self.min_gap < 0:
            raise ValueError("min_gap must be non-negative")
        if self.boundary not in ("ring", "open"):
            raise ValueError(f"boundary must be 'ring' or 'open', got {self.boundary!r}")
        if self.directions not in (1, 2):
            raise ValueError("directions must be 1 or 2")

    def lanes(self) -> list[int]:
        right = list(range(1, self.lanes_per_direction + 1))
        if self.directions == 1:
            return right
        return right + [-k for k in right]


@dataclass(frozen=True)
class Perturbation:
    """Cap one vehicle's speed at ``speed`` during ``[start, start+duration)``."""

    vehicle_id: int
    start: float
    duration: float
    speed: float = 0.0


def expected_neighborhood(density: float, rate: float, R: float) -> float:
    """Mean one-hop neighbourhood size on a line: ``density * 2R/1000 * rate``."""
    if density < 0 or R < 0 or not 0.0 <= rate <= 1.0:
        raise ValueError("density and R must be non-negative, rate in [0, 1]")
    return density * 2 * R * rate / 1000


def sample_penetration(vehicles: Iterable[int], rate: float, rng: random.Random) -> set[int]:
    """Equip each vehicle independently with probability *rate*."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"penetration rate must lie in [0, 1], got {rate}")
    return {vid for vid in sorted(vehicles) if rng.random() < rate}


# ---------------------------------------------------------------- dynamics


class Road:
    """Array-backed state of all vehicles on the road."""

    def __init__(self, params: MobilityParams, ids, lanes, x, v, lengths):
        self.params = params
        self.ids = np.asarray(ids, dtype=np.int64)
        self.lanes = np.asarray(lanes, dtype=np.int64)
        self.x = np.asarray(x, dtype=float)
        self.v = np.asarray(v, dtype=float)
        self.lengths = np.asarray(lengths, dtype=float)
        self.next_id = int(self.ids.max()) + 1 if len(self.ids) else 0

    @classmethod
    def populate(cls, params: MobilityParams, rng: np.random.Generator, jitter: float = 0.25,
                 initial_speed: Optional[float] = None) -> "Road":
        """Evenly spaced vehicles per lane with random offsets and jitter."""
        params.validate()
        lanes = params.lanes()
        per_lane = params.mean_density / len(lanes) * params.road_length / 1000
        n = int(round(per_lane))
        if n * (params.vehicle_length + params.min_gap) > params.road_length:
            raise ValueError("density too high for vehicle length")
        ids, lane_of, xs = [], [], []
        spacing = params.road_length / n if n else 0.0
        vid = 0
        for lane in lanes:
            offset = rng.uniform(0, spacing) if n else 0.0
            for j in range(n):
                ids.append(vid)
                lane_of.append(lane)
                xs.append((offset + (j + rng.uniform(-jitter, jitter)) * spacing) % params.road_length)
                vid += 1
        v0 = params.v_max if initial_speed is None else initial_speed
        return cls(params, ids, lane_of, xs, [v0] * len(ids), [params.vehicle_length] * len(ids))

    @property
    def positions(self) -> np.ndarray:
        return np.where(self.lanes > 0, self.x, self.params.road_length - self.x)

    def states(self) -> list[VehicleState]:
        pos = self.positions
        return [VehicleState(int(i), int(l), float(p), float(s), float(n))
                for i, l, p, s, n in zip(self.ids, self.lanes, pos, self.v, self.lengths)]

    def step(self, rng: np.random.Generator, caps: Optional[np.ndarray] = None) -> None:
        p = self.params
        n = len(self.ids)
        if n == 0:
            self._inflow(rng)
            return
        order = np.lexsort((self.x, self.lanes))
        lanes = self.lanes[order]
        x = self.x[order]
        v = self.v[order]
        length = self.lengths[order]

        # leader index (within sorted arrays) and bumper gap
        nxt = np.arange(1, n + 1)
        nxt[-1] = 0
        last_in_lane = np.append(lanes[1:] != lanes[:-1], True)
        first_idx = np.searchsorted(lanes, lanes, side="left")
        nxt = np.where(last_in_lane, first_idx, nxt)
        lead_x = x[nxt]
        lead_len = length[nxt]
        lead_v = v[nxt]
        gap = lead_x - lead_len - x
        if p.boundary == "ring":
            gap = np.where(last_in_lane, gap + p.road_length, gap)
        else:
            gap = np.where(last_in_lane, np.inf, gap)
        alone = nxt == np.arange(n)
        gap = np.where(alone, np.inf, gap)

        g = np.maximum(gap - p.min_gap, 0.0)
        v_bar = (v + lead_v) / 2
        with np.errstate(invalid="ignore"):
            v_safe = lead_v + (g - lead_v * p.reaction_time) / (v_bar / p.decel + p.reaction_time)
        v_safe = np.where(np.isinf(gap), np.inf, v_safe)
        vmax = np.full(n, p.v_max)
        if caps is not None:
            vmax = np.minimum(vmax, caps[order])
        v_des = np.minimum(np.minimum(v + p.accel * p.dt, vmax), v_safe)
        # capped vehicles brake at most at comfortable deceleration
        v_des = np.maximum(v_des, np.minimum(v - p.decel * p.dt, v_safe))
        dawdle = rng.random(n) < p.driver_imperfection
        cut = rng.random(n) * p.accel * p.dt
        v_new = np.maximum(np.where(dawdle, v_des - cut, v_des), 0.0)
        v_new = np.minimum(v_new, p.v_max)

        # enforce non-negative bumper gaps against the leaders' new speeds
        finite = np.isfinite(gap)
        for _ in range(n + 1):
            bound = np.where(finite, gap / p.dt + v_new[nxt], np.inf)
            bad = v_new > bound + 1e-12
            if not bad.any():
                break
            v_new = np.where(bad, np.maximum(bound, 0.0), v_new)

        x_new = x + v_new * p.dt
        inv = np.empty(n, dtype=np.int64)
        inv[order] = np.arange(n)
        self.v = v_new[inv]
        self.x = x_new[inv]
        if p.boundary == "ring":
            self.x = np.mod(self.x, p.road_length)
        else:
            keep = self.x <= p.road_length
            self.ids, self.lanes, self.x, self.v, self.lengths = (
                a[keep] for a in (self.ids, self.lanes, self.x, self.v, self.lengths))
            self._inflow(rng)

    def _inflow(self, rng: np.random.Generator) -> None:
        """Open boundary: insert at x=0 with the target lane density."""
        p = self.params
        if p.boundary != "open":
            return
        lanes = p.lanes()
        rate = p.mean_density / len(lanes) / 1000 * p.v_max * p.dt  # expected arrivals per step
        for lane in lanes:
            if rng.random() >= min(rate, 1.0):
                continue
            in_lane = self.lanes == lane
            rear = self.x[in_lane].min() if in_lane.any() else math.inf
            speed = p.v_max
            if rear - p.vehicle_length - p.min_gap < speed * p.reaction_time:
                continue
            self.ids = np.append(self.ids, self.next_id)
            self.lanes = np.append(self.lanes, lane)
            self.x = np.append(self.x, 0.0)
            self.v = np.append(self.v, speed)
            self.lengths = np.append(self.lengths, p.vehicle_length)
            self.next_id += 1


def _check_sorted(world: Sequence[VehicleState]) -> None:
    last: dict[int, float] = {}
    for veh in world:
        prev = last.get(veh.lane)
        if prev is not None and veh.position < prev:
            raise ValueError(f"vehicles of lane {veh.lane} are not sorted by position (id {veh.id})")
        last[veh.lane] = veh.position


def step(world: Sequence[VehicleState], params: MobilityParams, rng: np.random.Generator,
         caps: Optional[dict[int, float]] = None) -> list[VehicleState]:
    """Advance a list of vehicles by one timestep.

    The input must list each lane's vehicles in ascending position order;
    the output keeps the input order.
    """
    _check_sorted(world)
    if not world:
        return []
    L = params.road_length
    x = [w.position if w.lane > 0 else L - w.position for w in world]
    road = Road(params, [w.id for w in world], [w.lane for w in world], x,
                [w.speed for w in world], [w.length for w in world])
    cap_arr = None
    if caps:
        cap_arr = np.array([caps.get(w.id, math.inf) for w in world])
    road.step(rng, cap_arr)
    by_id = {s.id: s for s in road.states()}
    return [by_id[w.id] for w in world if w.id in by_id]


# ---------------------------------------------------------------- history


@dataclass
class History:
    """Snapshots at a fixed cadence; NaN marks a vehicle absent from a snapshot."""

    dt: float
    times: np.ndarray
    ids: np.ndarray
    lanes: np.ndarray
    positions: np.ndarray  # (T, N)
    speeds: np.ndarray  # (T, N)
    lengths: np.ndarray = field(default=None)
    road_length: Optional[float] = None

    def __post_init__(self):
        if self.lengths is None:
            self.lengths = np.full(len(self.ids), 5.0)

    @classmethod
    def empty(cls, dt: float = 1.0) -> "History":
        return cls(dt, np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                   np.zeros((0, 0)), np.zeros((0, 0)))

    def __len__(self) -> int:
        return len(self.times)

    def snapshot(self, k: int) -> list[VehicleState]:
        pos, spd = self.positions[k], self.speeds[k]
        return [VehicleState(int(i), int(l), float(p), float(s), float(n))
                for i, l, p, s, n in zip(self.ids, self.lanes, pos, spd, self.lengths)
                if not math.isnan(p)]

    def index_at(self, t: float) -> int:
        """Snapshot in effect at time *t* (sample-and-hold)."""
        if not len(self.times):
            raise IndexError("empty history")
        k = int(math.floor((t - self.times[0]) / self.dt + 1e-9))
        return min(max(k, 0), len(self.times) - 1)

    def window(self, start: float, stop: float) -> "History":
        sel = (self.times >= start - 1e-9) & (self.times <= stop + 1e-9)
        return replace(self, times=self.times[sel] - start, positions=self.positions[sel],
                       speeds=self.speeds[sel])

    def equals(self, other: "History") -> bool:
        if len(self) == 0 and len(other) == 0:
            return True
        return (self.dt == other.dt
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.lanes, other.lanes)
                and np.array_equal(self.positions, other.positions, equal_nan=True)
                and np.array_equal(self.speeds, other.speeds, equal_nan=True))


def simulate(params: MobilityParams, duration: float, seed: int, warmup: float = 600.0,
             perturbations: Sequence[Perturbation] = (), road: Optional[Road] = None) -> History:
    """Run warm-up, then record ``duration`` seconds of snapshots.

    Snapshot times start at 0 after warm-up; perturbation times are on the
    same recorded axis.
    """
    params.validate()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4D0B]))
    if road is None:
        road = Road.populate(params, rng)
    for _ in range(int(round(warmup / params.dt))):
        road.step(rng)
    steps = int(round(duration / params.dt))
    frames = []
    t = 0.0
    for k in range(steps + 1):
        t = k * params.dt
        frames.append((road.ids.copy(), road.lanes.copy(), road.positions.copy(),
                       road.v.copy(), road.lengths.copy()))
        if k == steps:
            break
        caps = None
        active = [pt for pt in perturbations if pt.start <= t < pt.start + pt.duration]
        if active:
            caps = np.full(len(road.ids), np.inf)
            for pt in active:
                caps[road.ids == pt.vehicle_id] = pt.speed
        road.step(rng, caps)
    return _frames_to_history(frames, params.dt, params.road_length)


def _frames_to_history(frames, dt: float, road_length: Optional[float]) -> History:
    all_ids: dict[int, tuple[int, float]] = {}
    for ids, lanes, _, _, lengths in frames:
        for i, l, n in zip(ids, lanes, lengths):
            all_ids.setdefault(int(i), (int(l), float(n)))
    order = sorted(all_ids)
    col = {vid: j for j, vid in enumerate(order)}
    T, N = len(frames), len(order)
    pos = np.full((T, N), np.nan)
    spd = np.full((T, N), np.nan)
    for k, (ids, _, p, s, _) in enumerate(frames):
        cols = [col[int(i)] for i in ids]
        pos[k, cols] = p
        spd[k, cols] = s
    return History(dt, np.arange(T) * dt, np.array(order, dtype=np.int64),
                   np.array([all_ids[i][0] for i in order], dtype=np.int64), pos, spd,
                   np.array([all_ids[i][1] for i in order]), road_length)


def relabel_laps(history: History) -> tuple[np.ndarray, np.ndarray]:
    """Network node identity per snapshot.

    A vehicle wrapping around a ring road re-enters as a fresh node: the
    node id is ``vehicle_index + lap * N``. Returns ``(node_ids, laps)``
    arrays of shape (T, N); absent vehicles get -1.
    """
    T, N = history.positions.shape
    laps = np.zeros((T, N), dtype=np.int64)
    if T > 1:
        x = np.where(history.lanes > 0, history.positions, -history.positions)
        back = np.diff(x, axis=0) < 0
        back &= ~np.isnan(np.diff(x, axis=0))
        laps[1:] = np.cumsum(back, axis=0)
    nodes = np.arange(N)[None, :] + laps * N
    nodes = np.where(np.isnan(history.positions), -1, nodes)
    return nodes, laps


# ---------------------------------------------------------------- trace I/O

TRACE_HEADER = "# vanet-trace v1 dt={dt}"


class TraceFormatError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def export_trace(history: History, path) -> None:
    lines = [TRACE_HEADER.format(dt=repr(float(history.dt))), "time,id,lane,position_m,speed_mps"]
    for k, t in enumerate(history.times):
        for j, vid in enumerate(history.ids):
            p = history.positions[k, j]
            if math.isnan(p):
                continue
            lines.append(f"{float(t)!r},{int(vid)},{int(history.lanes[j])},{float(p)!r},"
                         f"{float(history.speeds[k, j])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def import_trace(path, vehicle_length: float = 5.0) -> History:
    text = Path(path).read_text(encoding="utf-8")
    dt = 1.0
    rows: list[tuple[float, int, int, float, float]] = []
    last_key: Optional[tuple[float, int]] = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith("# vanet-trace"):
                parts = dict(p.split("=", 1) for p in line.split()[3:] if "=" in p)
                if line.split()[2] != "v1":
                    raise TraceFormatError(no, f"unsupported trace version {line.split()[2]!r}")
                try:
                    dt = float(parts["dt"])
                except (KeyError, ValueError):
                    raise TraceFormatError(no, "header lacks a numeric dt") from None
            continue
        if line.startswith("time,"):
            continue
        fields = line.split(",")
        if len(fields) != 5:
            raise TraceFormatError(no, f"expected 5 fields, got {len(fields)}")
        try:
            rec = (float(fields[0]), int(fields[1]), int(fields[2]), float(fields[3]), float(fields[4]))
        except ValueError as exc:
            raise TraceFormatError(no, str(exc)) from None
        key = (rec[0], rec[1])
        if last_key is not None:
            if rec[0] < last_key[0]:
                raise TraceFormatError(no, f"time {rec[0]} decreases (previous {last_key[0]})")
            if key <= last_key:
                raise TraceFormatError(no, f"records not sorted by (time, id) at id {rec[1]}")
        last_key = key
        rows.append(rec)
    if not rows:
        return History.empty(dt)
    times = sorted({r[0] for r in rows})
    for a, b in zip(times, times[1:]):
        if not math.isclose(b - a, dt, rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError(f"snapshot spacing {b - a} differs from dt={dt}")
    tindex = {t: k for k, t in enumerate(times)}
    lanes = {}
    for r in rows:
        lanes.setdefault(r[1], r[2])
    ids = sorted(lanes)
    col = {vid: j for j, vid in enumerate(ids)}
    pos = np.full((len(times), len(ids)), np.nan)
    spd = np.full_like(pos, np.nan)
    for t, vid, _, p, s in rows:
        pos[tindex[t], col[vid]] = p
        spd[tindex[t], col[vid]] = s
    return History(dt, np.array(times), np.array(ids, dtype=np.int64),
                   np.array([lanes[i] for i in ids], dtype=np.int64), pos, spd,
                   np.full(len(ids), vehicle_length))
