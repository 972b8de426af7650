"""Runs scenarios end to end and writes their CSV outputs."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .hdc import HdcNetwork, HistoryKinematics
from .jams import (JamParams, classify_all, detect_jams, history_frames, series_from_hdc_log,
                   classify, track_clusters, write_report)
from .kernel import rng_stream
from .metrics import RunMetrics, aggregate, eligible_pairs, evaluate, protocol_speed, write_rows
from .mobility import History, Perturbation, kmh_to_mps, sample_penetration, simulate
from .network import RunResult, run_protocol
from .scenario import Scenario
from .topology import NetworkView

log = logging.getLogger(__name__)


def mobility_for(scn: Scenario, seed: int, v_max: Optional[float] = None) -> History:
    mob = scn.mobility if v_max is None else replace(scn.mobility, v_max=v_max)
    perts = ()
    pt = scn.perturbation
    if scn.kind in ("speedlimit", "hdc"):
        vid = pt.vehicle
        if vid < 0:
            first = simulate(mob, 0.0, seed, warmup=scn.run.warmup)
            vid = int(first.ids[np.nanargmin(np.abs(first.positions[0] - pt.position))])
        perts = (Perturbation(vid, pt.start, pt.duration, pt.speed),)
    return simulate(mob, scn.run.duration, seed, warmup=scn.run.warmup, perturbations=perts)


def equipped_view(history: History, penetration: float, seed: int) -> NetworkView:
    # nested equipped sets across rates for one seed
    eq = sample_penetration(history.ids.tolist(), penetration, rng_stream(seed, "equip"))
    return NetworkView.from_vehicle_ids(history, eq)


def run_one(scn: Scenario, history: History, protocol: str, penetration: float, concurrent: int,
            seed: int, event_log=None) -> tuple[RunResult, NetworkView]:
    view = equipped_view(history, penetration, seed)
    params = replace(scn.protocol, protocol=protocol)
    plan = replace(scn.units, concurrent=concurrent)
    result = run_protocol(view, params, scn.radio, plan, seed, scn.mobility.road_length, event_log)
    return result, view


@dataclass
class UnitRow:
    protocol: str
    penetration: float
    concurrent_units: int
    seed: int
    unit_id: str
    origin: int
    created_at: float
    eligible: int
    delivered: int
    speed_kmh: Optional[float]


def _unit_rows(result: RunResult, view: NetworkView, pen: float, conc: int, seed: int) -> list[UnitRow]:
    eligible = eligible_pairs(view, result.units)
    got = {(d.node, d.unit_id) for d in result.deliveries}
    rows = []
    for u in result.units:
        el = {k for k in eligible if k[1] == u.id}
        rows.append(UnitRow(result.protocol, pen, conc, seed, f"{u.id:016x}", u.origin, u.created_at,
                            len(el), len(el & got), protocol_speed([u], result.deliveries, eligible)))
    return rows


def run_matrix(scn: Scenario, out_dir: str, event_log: bool = False) -> list[RunMetrics]:
    """Every (protocol, penetration, concurrent units, seed) combination."""
    os.makedirs(out_dir, exist_ok=True)
    runs: list[RunMetrics] = []
    units: list[UnitRow] = []
    for seed in scn.run.seeds:
        history = mobility_for(scn, seed)
        for proto in scn.run.protocols:
            for pen in scn.run.penetrations:
                for conc in scn.run.concurrent:
                    tag = f"{proto}-p{pen:g}-u{conc}-s{seed}"
                    fh = open(os.path.join(out_dir, f"events-{tag}.log"), "w") if event_log else None
                    try:
                        result, view = run_one(scn, history, proto, pen, conc, seed, fh)
                    finally:
                        if fh is not None:
                            fh.close()
                    runs.append(evaluate(result, view, pen, conc, seed))
                    units.extend(_unit_rows(result, view, pen, conc, seed))
                    log.info("%s done: %d units, %d packets", tag, len(result.units), result.packets)
    write_rows(os.path.join(out_dir, "results.csv"), aggregate(runs))
    write_rows(os.path.join(out_dir, "runs.csv"), runs)
    write_rows(os.path.join(out_dir, "units.csv"), units)
    return runs


# ------------------------------------------------------------ traffic jams


@dataclass
class SpeedLimitRow:
    v_max_kmh: float
    seed: int
    jam_detected: bool
    first_jam_time: Optional[float]
    max_jam_vehicles: int


def jam_params(scn: Scenario, v_max: float) -> JamParams:
    return replace(scn.jams, v_max=v_max, v_thresh=v_max / 2)


def speedlimit_run(scn: Scenario, seed: int, v_kmh: float) -> tuple[SpeedLimitRow, list]:
    v = kmh_to_mps(v_kmh)
    history = mobility_for(scn, seed, v_max=v)
    jp = jam_params(scn, v)
    frames = list(history_frames(history, jp))
    hits = [(t, cs) for t, cs in frames if cs]
    first = hits[0][0] if hits else None
    biggest = max((len(c.members) for _, cs in hits for c in cs), default=0)
    tracks = track_clusters(frames, jp)
    return SpeedLimitRow(v_kmh, seed, bool(hits), first, biggest), classify_all(tracks, jp)


def run_speedlimit(scn: Scenario, out_dir: str) -> list[SpeedLimitRow]:
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for seed in scn.run.seeds:
        for v_kmh in scn.speedlimit.v_max_values:
            row, report = speedlimit_run(scn, seed, v_kmh)
            rows.append(row)
            write_report(os.path.join(out_dir, f"jams-v{v_kmh:g}-s{seed}.csv"), report)
    write_rows(os.path.join(out_dir, "speedlimit.csv"), rows)
    return rows


@dataclass
class HdcRow:
    seed: int
    jam_seconds: float
    active_back_seconds: float
    localization_fraction: Optional[float]
    max_active_gap: float
    carriers_back: int
    transitions: int
    hdc_label: str
    truth_label: str


class _Tee:
    def __init__(self, fh):
        self.fh = fh
        self.lines: list[str] = []

    def write(self, s: str) -> None:
        self.lines.append(s)
        if self.fh is not None:
            self.fh.write(s)


def hdc_run(scn: Scenario, seed: int, sample_dt: float = 0.05, event_log=None):
    """HDC over the jam scenario, sampled every *sample_dt* seconds.

    Returns the network, the summary row and the ground-truth tracks.
    """
    history = mobility_for(scn, seed)
    jp = jam_params(scn, scn.mobility.v_max)
    hdc_params = replace(scn.hdc, R=scn.radio.R)
    tee = _Tee(event_log)
    net = HdcNetwork(HistoryKinematics(history), hdc_params, scn.radio, tee)
    net.start()
    steps = int(round(scn.run.duration / sample_dt))
    jams_at = {}
    good = total = 0
    jam_samples = active_samples = 0
    gap = max_gap = 0.0
    seen_active = False
    carriers = set()
    for i in range(1, steps + 1):
        t = round(i * sample_dt, 9)
        net.advance(t)
        k = history.index_at(t)
        if k not in jams_at:
            jams_at[k] = detect_jams(history.snapshot(k), jp, history.road_length)
        jams = jams_at[k]
        act = net.active("back")
        carriers.update(act)
        if not jams:
            gap = 0.0
            continue
        jam_samples += 1
        if act:
            active_samples += 1
            seen_active = True
            gap = 0.0
            for loc in act.values():
                truth = min(jams, key=lambda c: abs(c.back - loc)).back
                total += 1
                good += abs(loc - truth) <= hdc_params.r_hdc
        elif seen_active:
            gap += sample_dt
            max_gap = max(max_gap, gap)
    frames = [(t, cs) for t, cs in history_frames(history, jp)]
    tracks = track_clusters(frames, jp)
    hdc_series = series_from_hdc_log(tee.lines)
    truth_label = "none"
    if tracks:
        longest = max(tracks, key=len)
        truth_label = classify(longest, tracks, jp).value
    hdc_label = classify(hdc_series, [], jp).value if hdc_series else "none"
    row = HdcRow(seed, jam_samples * sample_dt, active_samples * sample_dt,
                 good / total if total else None, max_gap, len(carriers), len(net.transitions),
                 hdc_label, truth_label)
    return net, row, tracks


def run_hdc(scn: Scenario, out_dir: str, event_log: bool = False) -> list[HdcRow]:
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    jp = jam_params(scn, scn.mobility.v_max)
    for seed in scn.run.seeds:
        fh = open(os.path.join(out_dir, f"hdc-s{seed}.log"), "w") if event_log else None
        try:
            _, row, tracks = hdc_run(scn, seed, event_log=fh)
        finally:
            if fh is not None:
                fh.close()
        rows.append(row)
        write_report(os.path.join(out_dir, f"jams-s{seed}.csv"), classify_all(tracks, jp))
    write_rows(os.path.join(out_dir, "hdc.csv"), rows)
    return rows


def run_scenario(scn: Scenario, out_dir: str, event_log: bool = False):
    if scn.kind == "dissemination":
        return run_matrix(scn, out_dir, event_log)
    if scn.kind == "speedlimit":
        return run_speedlimit(scn, out_dir)
    return run_hdc(scn, out_dir, event_log)
