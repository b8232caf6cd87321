"""Deterministic scenario runner: stations, traces, channel, event log.

A scenario is an INI-style text file:

    [scenario]
    duration_s = 10
    gnss_period_ms = 100          ; update grid for static stations

    [channel]
    model = free_space            ; or two_ray
    ; h_tx_m / h_rx_m / reflection_coeff apply to two_ray only
    tx_antenna_gain_dbi = 3.9
    rx_antenna_gain_dbi = 3.9
    cable_loss_db = 0
    sensitivity_dbm = -85
    shadowing_sigma_db = 0
    seed = 1
    fc_hz = 5.9e9

    [station 1]
    role = rsu
    position = 44.6500000,10.9000000
    tx_power_dbm = 26
    forced_period_ms = 100

    [station 2]
    role = obu
    trace = drive.csv             ; relative to the scenario file
    tx_power_dbm = 26
    ; no forced_period_ms -> dynamic ETSI trigger rules

The run is a single-task discrete-event loop over the merged per-station
GNSS timelines. Trace timestamps are shifted so each trace starts at
t = 0; static stations get synthetic updates on the gnss_period_ms grid.
At each timestamp all state updates land first, then stations transmit
in ascending id order, so every receiver is seen at its current
position. Same config and seed give a byte-identical event log.

Event log CSV (fixed formatting, one header line):

    time_ms,event,sender_id,receiver_id,tx_lat,tx_lon,rx_lat,rx_lon,p_rx_dbm

TX rows leave receiver_id, rx_lat, rx_lon and p_rx_dbm empty.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

from .cam_service import CamService, CamTriggerConfig
from .channel import (
    FreeSpace,
    LinkBudgetConfig,
    PropagationModel,
    TwoRay,
    Link,
)
from .core import GeoPosition, KinematicState, distance_m
from .gnss import load_trace

EVENT_LOG_COLUMNS = ("time_ms", "event", "sender_id", "receiver_id",
                     "tx_lat", "tx_lon", "rx_lat", "rx_lon", "p_rx_dbm")


@dataclass(frozen=True)
class StationSpec:
    station_id: int
    role: str = "obu"
    position: GeoPosition | None = None
    trace_path: str | None = None
    tx_power_dbm: float = 26.0
    forced_period_ms: int | None = None

    def __post_init__(self) -> None:
        if (self.position is None) == (self.trace_path is None):
            raise ValueError(
                f"station {self.station_id}: exactly one of position or "
                "trace must be given")
        if self.role not in ("obu", "rsu"):
            raise ValueError(f"station {self.station_id}: bad role "
                             f"{self.role!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    duration_s: float
    link: LinkBudgetConfig
    model: PropagationModel
    stations: list[StationSpec] = field(default_factory=list)
    gnss_period_ms: int = 100

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError("duration_s must be > 0")
        if self.gnss_period_ms <= 0:
            raise ValueError("gnss_period_ms must be > 0")
        ids = [s.station_id for s in self.stations]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate station ids")
        if len(ids) < 1:
            raise ValueError("at least one station required")


@dataclass(frozen=True)
class ScenarioEvent:
    """One TX or RX log row. Receiver fields are None on TX rows."""

    time_ms: int
    event: str
    sender_id: int
    tx_lat: float
    tx_lon: float
    receiver_id: int | None = None
    rx_lat: float | None = None
    rx_lon: float | None = None
    p_rx_dbm: float | None = None


def load_scenario(path: str) -> ScenarioConfig:
    """Parse a scenario INI file. Trace paths resolve relative to it."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = parser.read(path)
    if not read:
        raise ValueError(f"cannot read scenario file: {path}")
    if "scenario" not in parser or "channel" not in parser:
        raise ValueError(f"{path}: [scenario] and [channel] are required")

    scen = parser["scenario"]
    chan = parser["channel"]
    base_dir = os.path.dirname(os.path.abspath(path))

    model_name = chan.get("model", "free_space").strip().lower()
    if model_name == "free_space":
        model: PropagationModel = FreeSpace()
    elif model_name == "two_ray":
        model = TwoRay(
            h_tx_m=chan.getfloat("h_tx_m", 1.5),
            h_rx_m=chan.getfloat("h_rx_m", 1.5),
            reflection_coeff=chan.getfloat("reflection_coeff", -1.0))
    else:
        raise ValueError(f"{path}: unknown channel model {model_name!r}")

    if "sensitivity_dbm" not in chan:
        raise ValueError(f"{path}: [channel] sensitivity_dbm is required")
    link = LinkBudgetConfig(
        sensitivity_dbm=chan.getfloat("sensitivity_dbm"),
        tx_antenna_gain_dbi=chan.getfloat("tx_antenna_gain_dbi", 3.9),
        rx_antenna_gain_dbi=chan.getfloat("rx_antenna_gain_dbi", 3.9),
        cable_loss_db=chan.getfloat("cable_loss_db", 0.0),
        fc_hz=chan.getfloat("fc_hz", 5.9e9),
        shadowing_sigma_db=chan.getfloat("shadowing_sigma_db", 0.0),
        rng_seed=chan.getint("seed", 0))

    stations: list[StationSpec] = []
    for section in parser.sections():
        if not section.startswith("station"):
            continue
        parts = section.split()
        if len(parts) != 2 or not parts[1].isdigit():
            raise ValueError(f"{path}: bad station section [{section}]; "
                             "expected [station <id>]")
        sec = parser[section]
        position = None
        trace_path = None
        if "position" in sec:
            coords = [float(v) for v in sec.get("position").split(",")]
            if len(coords) not in (2, 3):
                raise ValueError(f"{path}: [{section}] position must be "
                                 "lat,lon or lat,lon,alt")
            position = GeoPosition(*coords)
        if "trace" in sec:
            trace_path = os.path.join(base_dir, sec.get("trace"))
        forced = sec.getint("forced_period_ms", fallback=None)
        stations.append(StationSpec(
            station_id=int(parts[1]),
            role=sec.get("role", "obu").strip().lower(),
            position=position,
            trace_path=trace_path,
            tx_power_dbm=sec.getfloat("tx_power_dbm", 26.0),
            forced_period_ms=forced))

    stations.sort(key=lambda s: s.station_id)
    return ScenarioConfig(
        duration_s=scen.getfloat("duration_s"),
        gnss_period_ms=scen.getint("gnss_period_ms", 100),
        link=link, model=model, stations=stations)


def _station_timeline(spec: StationSpec, duration_ms: int,
                      grid_ms: int) -> list[KinematicState]:
    """Per-station GNSS updates over [0, duration), trace start at 0."""
    if spec.position is not None:
        return [KinematicState(position=spec.position, speed_mps=0.0,
                               heading_deg=0.0, timestamp_ms=t)
                for t in range(0, duration_ms, grid_ms)]
    states = load_trace(spec.trace_path)
    t0 = states[0].timestamp_ms
    shifted = [KinematicState(position=s.position, speed_mps=s.speed_mps,
                              heading_deg=s.heading_deg,
                              timestamp_ms=s.timestamp_ms - t0)
               for s in states]
    return [s for s in shifted if s.timestamp_ms < duration_ms]


def run_scenario(cfg: ScenarioConfig) -> list[ScenarioEvent]:
    """Run the discrete-event loop and return all TX/RX events in order."""
    duration_ms = int(round(cfg.duration_s * 1000))
    link = Link(cfg.link, cfg.model)

    services: dict[int, CamService] = {}
    tx_power: dict[int, float] = {}
    timelines: dict[int, list[KinematicState]] = {}
    current: dict[int, KinematicState] = {}
    for spec in cfg.stations:
        trigger = CamTriggerConfig(forced_period_ms=spec.forced_period_ms)
        services[spec.station_id] = CamService(spec.station_id, trigger)
        tx_power[spec.station_id] = spec.tx_power_dbm
        timelines[spec.station_id] = _station_timeline(
            spec, duration_ms, cfg.gnss_period_ms)

    merged: list[tuple[int, int, KinematicState]] = []
    for sid, states in timelines.items():
        merged.extend((s.timestamp_ms, sid, s) for s in states)
    merged.sort(key=lambda item: (item[0], item[1]))

    events: list[ScenarioEvent] = []
    i = 0
    while i < len(merged):
        t = merged[i][0]
        batch = []
        while i < len(merged) and merged[i][0] == t:
            batch.append(merged[i])
            i += 1
        # phase 1: everyone lands on their new position for this tick
        for _, sid, state in batch:
            current[sid] = state
        # phase 2: transmissions in ascending station id order
        for _, sid, state in sorted(batch, key=lambda item: item[1]):
            payload = services[sid].update(state)
            if payload is None:
                continue
            tx_pos = state.position
            events.append(ScenarioEvent(
                time_ms=t, event="TX", sender_id=sid,
                tx_lat=tx_pos.lat_deg, tx_lon=tx_pos.lon_deg))
            for rx_sid in sorted(current):
                if rx_sid == sid:
                    continue
                rx_pos = current[rx_sid].position
                d = distance_m(tx_pos, rx_pos)
                if d <= 0.0:
                    d = 0.001  # co-located stations: clamp, loss formula is singular
                received, p_rx = link.try_receive(d, tx_power[sid])
                if received:
                    events.append(ScenarioEvent(
                        time_ms=t, event="RX", sender_id=sid,
                        receiver_id=rx_sid,
                        tx_lat=tx_pos.lat_deg, tx_lon=tx_pos.lon_deg,
                        rx_lat=rx_pos.lat_deg, rx_lon=rx_pos.lon_deg,
                        p_rx_dbm=p_rx))
    return events


def format_event_row(e: ScenarioEvent) -> str:
    """Fixed decimal formatting so identical runs yield identical bytes."""
    if e.event == "TX":
        return (f"{e.time_ms},TX,{e.sender_id},,"
                f"{e.tx_lat:.7f},{e.tx_lon:.7f},,,")
    rx_lat = f"{e.rx_lat:.7f}" if e.rx_lat is not None else ""
    rx_lon = f"{e.rx_lon:.7f}" if e.rx_lon is not None else ""
    p_rx = f"{e.p_rx_dbm:.3f}" if e.p_rx_dbm is not None else ""
    return (f"{e.time_ms},RX,{e.sender_id},{e.receiver_id},"
            f"{e.tx_lat:.7f},{e.tx_lon:.7f},{rx_lat},{rx_lon},{p_rx}")


def write_event_log(path: str, events: list[ScenarioEvent]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(EVENT_LOG_COLUMNS) + "\n")
        for e in events:
            fh.write(format_event_row(e) + "\n")


def load_event_log(path: str) -> list[ScenarioEvent]:
    """Inverse of write_event_log."""
    events: list[ScenarioEvent] = []
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        if header != ",".join(EVENT_LOG_COLUMNS):
            raise ValueError(f"{path}: unexpected header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(EVENT_LOG_COLUMNS):
                raise ValueError(f"{path}:{lineno}: bad column count")
            if parts[1] == "TX":
                events.append(ScenarioEvent(
                    time_ms=int(parts[0]), event="TX",
                    sender_id=int(parts[2]),
                    tx_lat=float(parts[4]), tx_lon=float(parts[5])))
            elif parts[1] == "RX":
                events.append(ScenarioEvent(
                    time_ms=int(parts[0]), event="RX",
                    sender_id=int(parts[2]), receiver_id=int(parts[3]),
                    tx_lat=float(parts[4]), tx_lon=float(parts[5]),
                    rx_lat=float(parts[6]) if parts[6] else None,
                    rx_lon=float(parts[7]) if parts[7] else None,
                    p_rx_dbm=float(parts[8]) if parts[8] else None))
            else:
                raise ValueError(f"{path}:{lineno}: bad event {parts[1]!r}")
    return events
