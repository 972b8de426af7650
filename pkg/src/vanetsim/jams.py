"""Ground-truth jam detection, cluster tracking and jam-type labels.

A jam is a connected run of same-direction vehicles, all slower than
``v_thresh``, with at least one stopped vehicle. Runs are tracked across
snapshots by spatial overlap; each track is then labelled with one of
five congestion types from the motion of its upstream end, the trend of
its extent, the oscillation of its speed and its neighbours.

All positions here are travel coordinates (growing in driving direction);
the back of a jam is its smallest coordinate.
"""
from __future__ import annotations

import csv
import enum
import math
import re
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .mobility import V_105_KMH, History, VehicleState


class JamType(enum.Enum):
    PLC = "PLC"
    OCT = "OCT"
    SGW = "SGW"
    HCT = "HCT"
    MLC = "MLC"
    INSUFFICIENT = "insufficient"


@dataclass
class JamParams:
    v_max: float = V_105_KMH
    v_thresh: Optional[float] = None  # defaults to v_max / 2
    stop_speed: float = 1.0
    connect_gap: float = 50.0
    wave_speed_ref: float = 15.0  # km/h, upstream
    window: float = 120.0
    stationary_kmh: float = 2.0
    growth_min: float = 0.20
    crossings_per_10min: float = 3.0
    oscillation_amplitude: float = 0.25  # fraction of v_thresh, peak to trough
    neighbor_radius: float = 5000.0
    amplitude_factor: float = 2.0
    overlap_tolerance: Optional[float] = None  # defaults to connect_gap
    max_missing: int = 0  # snapshots a track may vanish and still continue

    def __post_init__(self):
        if self.v_thresh is None:
            self.v_thresh = self.v_max / 2
        if self.overlap_tolerance is None:
            self.overlap_tolerance = self.connect_gap

    def validate(self) -> None:
        if not 0 <= self.stop_speed < self.v_thresh < self.v_max:
            raise ValueError("need 0 <= stop_speed < v_thresh < v_max")
        if self.connect_gap <= 0 or self.window <= 0:
            raise ValueError("connect_gap and window must be positive")


@dataclass(frozen=True)
class JamCluster:
    direction: int
    back: float
    front: float
    members: tuple[int, ...]
    speeds: tuple[float, ...]


@dataclass(frozen=True)
class ClusterObservation:
    time: float
    back: float
    front: float
    speeds: tuple[float, ...]
    cluster_id: int
    direction: int = 1

    @property
    def extent(self) -> float:
        return self.front - self.back


def travel_coordinate(state: VehicleState, road_length: Optional[float] = None) -> float:
    if state.lane > 0:
        return state.position
    return (road_length - state.position) if road_length is not None else -state.position


def detect_jams(snapshot: Sequence[VehicleState], params: JamParams,
                road_length: Optional[float] = None) -> list[JamCluster]:
    """Maximal slow connected runs that contain a stopped vehicle."""
    out = []
    for direction in (1, -1):
        cars = sorted((travel_coordinate(s, road_length), s.id, s.speed)
                      for s in snapshot if (s.lane > 0) == (direction > 0))
        run: list[tuple[float, int, float]] = []
        for car in cars + [None]:
            extend = (car is not None and car[2] < params.v_thresh
                      and (not run or car[0] - run[-1][0] <= params.connect_gap))
            if extend:
                run.append(car)
                continue
            if run and min(c[2] for c in run) <= params.stop_speed:
                out.append(JamCluster(direction, run[0][0], run[-1][0],
                                      tuple(c[1] for c in run), tuple(c[2] for c in run)))
            run = [car] if car is not None and car[2] < params.v_thresh else []
    return out


def _overlap(a: JamCluster, b: JamCluster, tol: float) -> bool:
    return a.direction == b.direction and a.back - tol <= b.front and b.back - tol <= a.front


def track_clusters(frames: Iterable[tuple[float, Sequence[JamCluster]]],
                   params: JamParams) -> list[list[ClusterObservation]]:
    """Link per-snapshot jams into tracks.

    A track continues only through one-to-one overlaps; a split or a merge
    ends every involved track and starts new ones.
    """
    tol = params.overlap_tolerance
    tracks: list[list[ClusterObservation]] = []
    live: list[tuple[int, JamCluster, int]] = []  # (track index, last cluster, missed)
    for t, clusters in frames:
        clusters = list(clusters)
        links_prev = {i: [j for j, c in enumerate(clusters) if _overlap(lc, c, tol)]
                      for i, (_, lc, _) in enumerate(live)}
        links_cur = {j: [i for i in links_prev if j in links_prev[i]] for j in range(len(clusters))}
        nxt: list[tuple[int, JamCluster, int]] = []
        taken = set()
        for i, (ti, lc, missed) in enumerate(live):
            js = links_prev[i]
            if len(js) == 1 and len(links_cur[js[0]]) == 1:
                j = js[0]
                c = clusters[j]
                tracks[ti].append(_obs(t, c, tracks[ti][0].cluster_id))
                nxt.append((ti, c, 0))
                taken.add(j)
            elif not js and missed < params.max_missing:
                nxt.append((ti, lc, missed + 1))
        for j, c in enumerate(clusters):
            if j in taken:
                continue
            tracks.append([_obs(t, c, len(tracks))])
            nxt.append((len(tracks) - 1, c, 0))
        live = nxt
    return tracks


def _obs(t: float, c: JamCluster, cid: int) -> ClusterObservation:
    return ClusterObservation(float(t), c.back, c.front, c.speeds, cid, c.direction)


def history_frames(history: History, params: JamParams, equipped=None):
    """``(time, clusters)`` for each snapshot; all vehicles unless *equipped* masks them."""
    for k in range(len(history)):
        snap = history.snapshot(k)
        if equipped is not None:
            snap = [s for s in snap if s.id in equipped]
        yield float(history.times[k]), detect_jams(snap, params, history.road_length)


# ------------------------------------------------------------ classification


def _slope(t: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    if len(t) < 2 or np.ptp(t) == 0:
        return 0.0, float(y.mean()) if len(y) else 0.0
    a, b = np.polyfit(t, y, 1)
    return float(a), float(b)


def back_velocity_kmh(series: Sequence[ClusterObservation]) -> float:
    t = np.array([o.time for o in series])
    return _slope(t, np.array([o.back for o in series]))[0] * 3.6


def extent_growth(series: Sequence[ClusterObservation]) -> tuple[float, float]:
    """Extent slope (m/s) and relative growth of the fitted extent over the series."""
    t = np.array([o.time for o in series])
    a, b = _slope(t, np.array([o.extent for o in series]))
    start, end = a * t[0] + b, a * t[-1] + b
    rel = (end - start) / start if start > 0 else (math.inf if end > start else 0.0)
    return a, rel


def mean_speed_profile(series: Sequence[ClusterObservation]) -> np.ndarray:
    return np.array([np.mean(o.speeds) if o.speeds else np.nan for o in series])


def is_oscillating(series: Sequence[ClusterObservation], params: JamParams) -> bool:
    t = np.array([o.time for o in series])
    v = mean_speed_profile(series)
    ok = ~np.isnan(v)
    if ok.sum() < 3:
        return False
    t, v = t[ok], v[ok]
    a, b = _slope(t, v)
    resid = v - (a * t + b)
    signs = np.sign(resid[resid != 0])
    crossings = int(np.count_nonzero(np.diff(signs)))
    span = t[-1] - t[0]
    rate = crossings / span * 600 if span > 0 else 0.0
    return rate >= params.crossings_per_10min and np.ptp(resid) >= params.oscillation_amplitude * params.v_thresh


def amplitude(series: Sequence[ClusterObservation], params: JamParams) -> float:
    """Speed drop inside the cluster: ``v_max`` minus mean member speed."""
    v = mean_speed_profile(series)
    v = v[~np.isnan(v)]
    return params.v_max - (float(v.mean()) if len(v) else 0.0)


def _near(a: Sequence[ClusterObservation], b: Sequence[ClusterObservation], radius: float) -> bool:
    bt = {round(o.time, 6): o for o in b if o.direction == a[0].direction}
    d = [abs(o.back - bt[round(o.time, 6)].back) for o in a if round(o.time, 6) in bt]
    return bool(d) and float(np.mean(d)) <= radius


def classify(series: Sequence[ClusterObservation], neighbors: Sequence[Sequence[ClusterObservation]],
             params: JamParams) -> JamType:
    if not series or series[-1].time - series[0].time < params.window:
        return JamType.INSUFFICIENT
    if abs(back_velocity_kmh(series)) <= params.stationary_kmh:
        return JamType.PLC
    slope, rel = extent_growth(series)
    if slope > 0 and rel >= params.growth_min:
        return JamType.OCT if is_oscillating(series, params) else JamType.HCT
    amp = amplitude(series, params)
    for other in neighbors:
        if other is series or not other or other[0].cluster_id == series[0].cluster_id:
            continue
        if not _near(series, other, params.neighbor_radius):
            continue
        amp_o = amplitude(other, params)
        if amp_o > 0 and amp > 0 and max(amp, amp_o) / min(amp, amp_o) <= params.amplitude_factor:
            return JamType.SGW
    return JamType.MLC


@dataclass
class ReportRow:
    cluster_id: int
    first_seen: float
    last_seen: float
    label: str
    back_velocity_kmh: float
    extent_trend: float  # extent slope, m/s


def classify_all(tracks: Sequence[Sequence[ClusterObservation]], params: JamParams) -> list[ReportRow]:
    rows = []
    for s in tracks:
        label = classify(s, tracks, params)
        slope = extent_growth(s)[0] if len(s) > 1 else 0.0
        rows.append(ReportRow(s[0].cluster_id, s[0].time, s[-1].time, label.value,
                              back_velocity_kmh(s) if len(s) > 1 else 0.0, slope))
    return rows


def write_report(path, rows: Sequence[ReportRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster_id", "first_seen", "last_seen", "label", "back_velocity_kmh",
                    "extent_trend"])
        for r in rows:
            w.writerow([r.cluster_id, f"{r.first_seen:.6f}", f"{r.last_seen:.6f}", r.label,
                        f"{r.back_velocity_kmh:.6f}", f"{r.extent_trend:.6f}"])


# ------------------------------------------------------------ HDC logs

_FIELD = re.compile(r"(\w+)=(\S+)")


def series_from_hdc_log(lines: Iterable[str], bin_width: float = 1.0) -> list[ClusterObservation]:
    """One observation per time bin from an HDC event log.

    ``back`` is the mean location in the bin's Congestion broadcasts.
    ``front`` is the mean location the front-HDC carriers announce in
    hdcdistance messages, falling back to the front the back carriers
    last heard of. Member speeds come from data messages sent between
    them in the same bin.
    """
    congestion: dict[int, list[tuple[float, float]]] = {}
    data: dict[int, list[tuple[float, float]]] = {}
    fronts: dict[int, list[float]] = {}
    for line in lines:
        parts = line.split(maxsplit=3)
        if len(parts) < 4:
            continue
        t, event, detail = float(parts[0]), parts[2], parts[3]
        kv = dict(_FIELD.findall(detail))
        b = int(math.floor(t / bin_width + 1e-9))
        if event == "send_Congestion":
            congestion.setdefault(b, []).append((float(kv["l"]), float(kv["hdc_front"])))
        elif event == "send_hdcdistance":
            fronts.setdefault(b, []).append(float(kv["L_front"]))
        elif event == "send_data":
            data.setdefault(b, []).append((float(kv["l"]), float(kv["g"])))
    out = []
    for b in sorted(congestion):
        back = float(np.mean([c[0] for c in congestion[b]]))
        heard = fronts.get(b) or [c[1] for c in congestion[b]]
        front = max(back, float(np.mean(heard)))
        speeds = tuple(g for l, g in data.get(b, ()) if back <= l <= front)
        out.append(ClusterObservation(b * bin_width, back, front, speeds, 0))
    return out
