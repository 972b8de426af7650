"""Scenario files: a versioned INI schema, presets, load and dump.

Every key of every section the scenario kind uses must be present; a
missing or unknown key is an error naming the key and the line of its
section header. ``dump`` writes every value, so defaults round-trip.
Speeds named ``v_max`` are km/h in files and m/s in memory.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields
from typing import Any, Optional

from .dissemination import PROTOCOLS
from .hdc import HdcParams
from .jams import JamParams
from .mobility import MobilityParams, kmh_to_mps
from .network import ProtocolParams, UnitPlan
from .radio import RadioParams

HEADER = "# vanetsim scenario v1"
KINDS = ("dissemination", "speedlimit", "hdc")


class ScenarioError(ValueError):
    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.key = key
        self.line = line


@dataclass
class RunSpec:
    duration: float = 300.0
    warmup: float = 600.0
    seeds: tuple[int, ...] = (1,)
    penetrations: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0)
    protocols: tuple[str, ...] = PROTOCOLS
    concurrent: tuple[int, ...] = (10,)


@dataclass
class PerturbationSpec:
    """Speed cap on one vehicle; ``vehicle = -1`` picks the one nearest ``position`` at t=0."""

    vehicle: int = 0
    position: float = 0.0
    start: float = 30.0
    duration: float = 10.0
    speed: float = 8.5


@dataclass
class SpeedLimitSpec:
    v_max_values: tuple[float, ...] = (105.0, 100.0)  # km/h


@dataclass
class Scenario:
    name: str = "desk"
    kind: str = "dissemination"
    mobility: MobilityParams = field(default_factory=MobilityParams)
    radio: RadioParams = field(default_factory=RadioParams)
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    units: UnitPlan = field(default_factory=UnitPlan)
    run: RunSpec = field(default_factory=RunSpec)
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    speedlimit: SpeedLimitSpec = field(default_factory=SpeedLimitSpec)
    hdc: HdcParams = field(default_factory=HdcParams)
    jams: JamParams = field(default_factory=JamParams)

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ScenarioError(f"kind must be one of {', '.join(KINDS)}", "kind")
        self.mobility.validate()
        self.radio.validate()
        self.protocol.validate()
        self.hdc.validate()
        self.jams.validate()
        bad = [p for p in self.run.protocols if p not in PROTOCOLS]
        if bad:
            raise ScenarioError(f"unknown protocol {bad[0]!r}", "protocols")
        if any(not 0 <= p <= 1 for p in self.run.penetrations):
            raise ScenarioError("penetrations must lie in [0, 1]", "penetrations")
        if any(c < 1 for c in self.run.concurrent):
            raise ScenarioError("concurrent must be >= 1", "concurrent")
        if self.run.duration <= 0 or self.run.warmup < 0:
            raise ScenarioError("duration must be positive and warmup non-negative", "duration")
        if not self.run.seeds:
            raise ScenarioError("at least one seed is required", "seeds")


# ------------------------------------------------------------ schema

# section -> (attribute on Scenario, skipped fields)
_SECTIONS = {
    "mobility": ("mobility", ()),
    "radio": ("radio", ()),
    "protocol": ("protocol", ("protocol", "autocast")),
    "autocast": ("protocol.autocast", ("flood_jitter_max",)),
    "units": ("units", ("concurrent",)),
    "run": ("run", ()),
    "perturbation": ("perturbation", ()),
    "speedlimit": ("speedlimit", ()),
    "hdc": ("hdc", ("R",)),  # the radio range
    "jams": ("jams", ("v_max", "v_thresh")),  # from the mobility speed limit
}
_BY_KIND = {
    "dissemination": ("mobility", "radio", "protocol", "autocast", "units", "run"),
    "speedlimit": ("mobility", "run", "perturbation", "speedlimit", "jams"),
    "hdc": ("mobility", "radio", "run", "perturbation", "hdc", "jams"),
}
_KMH_KEYS = {("mobility", "v_max")}


def _target(scn: Scenario, path: str):
    obj = scn
    for part in path.split("."):
        obj = getattr(obj, part)
    return obj


def _keys(scn: Scenario, section: str) -> list[str]:
    path, skip = _SECTIONS[section]
    return [f.name for f in fields(_target(scn, path)) if f.name not in skip]


def _fmt(section: str, key: str, value: Any) -> str:
    if (section, key) in _KMH_KEYS:
        value = round(value * 3.6, 9)
    if isinstance(value, tuple):
        return ", ".join(_fmt(section, "", v) for v in value)
    if isinstance(value, bytes):
        return value.decode("ascii")
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(section: str, key: str, text: str, current: Any, line: int):
    try:
        if (section, key) in _KMH_KEYS:
            return kmh_to_mps(text.strip())
        if isinstance(current, bool):
            low = text.strip().lower()
            if low not in ("true", "false"):
                raise ValueError("expected true or false")
            return low == "true"
        if isinstance(current, tuple):
            items = [s.strip() for s in text.split(",") if s.strip()]
            kind = type(current[0]) if current else str
            return tuple(kind(s) for s in items)
        if isinstance(current, bytes):
            return text.strip().encode("ascii")
        if current is None:
            return float(text) if text.strip() else None
        return type(current)(text.strip())
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"[{section}] {key}: cannot parse {text!r}: {exc}", key, line) from None


def dumps(scn: Scenario) -> str:
    out = io.StringIO()
    out.write(f"{HEADER}\n\n[scenario]\nname = {scn.name}\nkind = {scn.kind}\n")
    for section in _BY_KIND[scn.kind]:
        obj = _target(scn, _SECTIONS[section][0])
        out.write(f"\n[{section}]\n")
        for key in _keys(scn, section):
            unit = "  ; km/h" if (section, key) in _KMH_KEYS else ""
            out.write(f"{key} = {_fmt(section, key, getattr(obj, key))}{unit}\n")
    return out.getvalue()


def _section_lines(text: str) -> dict[str, int]:
    lines = {}
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            lines.setdefault(s[1:-1].strip(), i)
    return lines


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    out, section = {}, None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif "=" in s and section and not s.startswith((";", "#")):
            out[(section, s.split("=", 1)[0].strip())] = i
    return out


def loads(text: str) -> Scenario:
    first = text.lstrip("﻿").splitlines()[0].strip() if text.strip() else ""
    if first != HEADER:
        raise ScenarioError(f"first line must be {HEADER!r}", None, 1)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";",), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(f"malformed scenario file: {exc}", None, getattr(exc, "lineno", None)) from None
    sec_line = _section_lines(text)
    key_line = _key_lines(text)
    if not cp.has_section("scenario"):
        raise ScenarioError("missing [scenario] section", "scenario")
    scn = Scenario()
    for key in cp["scenario"]:
        if key not in ("name", "kind"):
            raise ScenarioError(f"[scenario] unknown key {key!r}", key, key_line.get(("scenario", key)))
    for key in ("name", "kind"):
        if key not in cp["scenario"]:
            raise ScenarioError(f"[scenario] missing key {key!r}", key, sec_line["scenario"])
    scn.name = cp["scenario"]["name"].strip()
    scn.kind = cp["scenario"]["kind"].strip()
    if scn.kind not in KINDS:
        raise ScenarioError(f"kind must be one of {', '.join(KINDS)}", "kind",
                            key_line.get(("scenario", "kind")))
    wanted = _BY_KIND[scn.kind]
    for section in cp.sections():
        if section != "scenario" and section not in wanted:
            raise ScenarioError(f"section [{section}] is not used by kind {scn.kind}", section,
                                sec_line.get(section))
    for section in wanted:
        if not cp.has_section(section):
            raise ScenarioError(f"missing section [{section}]", section)
        obj = _target(scn, _SECTIONS[section][0])
        known = _keys(scn, section)
        for key in cp[section]:
            if key not in known:
                raise ScenarioError(f"[{section}] unknown key {key!r}", key, key_line.get((section, key)))
        for key in known:
            if key not in cp[section]:
                raise ScenarioError(f"[{section}] missing key {key!r}", key, sec_line.get(section))
            val = _parse(section, key, cp[section][key], getattr(obj, key), key_line.get((section, key)))
            setattr(obj, key, val)
    sync(scn)
    try:
        scn.validate()
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    return scn


def sync(scn: Scenario) -> Scenario:
    """Propagate values that one section owns into the parameter sets that copy them."""
    scn.protocol.autocast.flood_jitter_max = scn.protocol.flood_jitter_max
    scn.hdc.R = scn.radio.R
    scn.jams.v_max = scn.mobility.v_max
    scn.jams.v_thresh = scn.mobility.v_max / 2
    return scn


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def dump_scenario(scn: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(scn))


# ------------------------------------------------------------ presets


def _desk() -> Scenario:
    return Scenario(
        name="desk",
        mobility=MobilityParams(road_length=2000.0),
        units=UnitPlan(lifetime=50.0, payload_size=100, target_span=1000.0, start=10.0),
        run=RunSpec(duration=300.0, warmup=600.0, concurrent=(10,)),
    )


def _paper_dissemination() -> Scenario:
    return Scenario(
        name="paper-dissemination",
        mobility=MobilityParams(road_length=10_000.0),
        units=UnitPlan(lifetime=50.0, payload_size=100, target_span=5000.0, start=10.0),
        run=RunSpec(duration=960.0, warmup=600.0,
                    penetrations=tuple(round(0.1 * k, 1) for k in range(1, 11)),
                    concurrent=(2, 5, 10, 20, 50)),
    )


def _paper_speedlimit() -> Scenario:
    # 200 vehicles on a single-lane ring at 30 veh/km
    mob = MobilityParams(road_length=200 / 30 * 1000, lanes_per_direction=1, directions=1,
                         mean_density=30.0, driver_imperfection=0.1, min_gap=0.0)
    return Scenario(
        name="paper-speedlimit", kind="speedlimit", mobility=mob,
        run=RunSpec(duration=900.0, warmup=300.0, seeds=(1,), penetrations=(1.0,),
                    protocols=("autocast",), concurrent=(1,)),
        perturbation=PerturbationSpec(vehicle=0, start=30.0, duration=10.0, speed=8.5),
        speedlimit=SpeedLimitSpec((105.0, 100.0)),
    )


def _hdc_jam() -> Scenario:
    mob = MobilityParams(road_length=5000.0, lanes_per_direction=1, directions=1,
                         mean_density=30.0, driver_imperfection=0.1, min_gap=0.0,
                         boundary="open")
    return Scenario(
        name="hdc-jam", kind="hdc", mobility=mob,
        radio=RadioParams(collisions=False),
        run=RunSpec(duration=300.0, warmup=300.0, seeds=(3,), penetrations=(1.0,),
                    protocols=("autocast",), concurrent=(1,)),
        perturbation=PerturbationSpec(vehicle=-1, position=3500.0, start=10.0,
                                      duration=60.0, speed=0.0),
    )


PRESETS = {
    "desk": _desk,
    "paper-dissemination": _paper_dissemination,
    "paper-speedlimit": _paper_speedlimit,
    "hdc-jam": _hdc_jam,
}


def preset(name: str) -> Scenario:
    try:
        scn = PRESETS[name]()
    except KeyError:
        raise ScenarioError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    sync(scn)
    scn.validate()
    return scn
