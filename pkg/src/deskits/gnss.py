"""Positioning ingestion: NMEA 0183, gpsd JSON reports, trace replay.

Three input paths produce the same thing, a stream of fixes a station
can turn into kinematic state:

  * raw NMEA text (RMC for the fix, GGA for altitude enrichment),
  * gpsd-style JSON lines (TPV reports),
  * recorded trace CSVs replayed against wall or virtual clock.
"""

from __future__ import annotations

import csv
import json
import socket
import time
from dataclasses import dataclass
from datetime import datetime, timezone

from .core import KNOT_MPS, GeoPosition, KinematicState

TRACE_COLUMNS = ("timestamp_ms", "lat_deg", "lon_deg",
                 "speed_mps", "heading_deg")


@dataclass(frozen=True)
class FixUpdate:
    """One positioning update. When valid is false the position fields
    are placeholders and consumers must not emit CAMs from it."""

    position: GeoPosition
    fix_time_ms: int
    valid: bool
    speed_mps: float | None = None
    heading_deg: float | None = None


@dataclass(frozen=True)
class GgaFix:
    """Altitude enrichment pulled from a GGA sentence."""

    alt_m: float | None
    fix_quality: int


def validate_nmea_checksum(line: str) -> bool:
    """True iff the XOR of characters between '$' and '*' matches the
    two hex digits after '*'. Malformed lines are simply false."""
    line = line.strip()
    if not line.startswith("$"):
        return False
    star = line.rfind("*")
    if star < 0 or len(line) < star + 3:
        return False
    try:
        declared = int(line[star + 1:star + 3], 16)
    except ValueError:
        return False
    computed = 0
    for ch in line[1:star]:
        computed ^= ord(ch)
    return computed == declared


def _parse_ddmm(value: str, hemisphere: str) -> float:
    """NMEA ddmm.mmmm (or dddmm.mmmm) to signed decimal degrees."""
    v = float(value)
    degrees = int(v // 100)
    minutes = v - degrees * 100.0
    out = degrees + minutes / 60.0
    if hemisphere in ("S", "W"):
        out = -out
    elif hemisphere not in ("N", "E"):
        raise ValueError(f"bad hemisphere flag: {hemisphere!r}")
    return out


def format_ddmm(deg: float, is_lat: bool) -> tuple[str, str]:
    """Inverse of _parse_ddmm: decimal degrees to (field, hemisphere).

    Five decimal places of minutes keep the roundtrip within 2e-7 deg.
    """
    if is_lat:
        hemi = "S" if deg < 0 else "N"
        width = 2
    else:
        hemi = "W" if deg < 0 else "E"
        width = 3
    mag = abs(deg)
    whole = int(mag)
    minutes = (mag - whole) * 60.0
    if minutes >= 59.999995:
        minutes = 0.0
        whole += 1
    return f"{whole:0{width}d}{minutes:08.5f}", hemi


def _nmea_fields(line: str, expected_type: str) -> list[str]:
    line = line.strip()
    star = line.rfind("*")
    body = line[1:star] if star >= 0 else line[1:]
    fields = body.split(",")
    talker = fields[0]
    # talker id varies (GP/GN/GL...); match on the sentence type suffix
    if len(talker) < 5 or talker[2:] != expected_type:
        raise ValueError(f"not a {expected_type} sentence: {talker}")
    return fields


def _nmea_time_ms(hhmmss: str, ddmmyy: str) -> int:
    """UTC epoch ms from RMC time and date fields; 0 if either is empty."""
    if not hhmmss or not ddmmyy:
        return 0
    hours = int(hhmmss[0:2])
    minutes = int(hhmmss[2:4])
    seconds = float(hhmmss[4:])
    day = int(ddmmyy[0:2])
    month = int(ddmmyy[2:4])
    yy = int(ddmmyy[4:6])
    year = 2000 + yy if yy < 80 else 1900 + yy
    whole = int(seconds)
    dt = datetime(year, month, day, hours, minutes, whole,
                  tzinfo=timezone.utc)
    return int(dt.timestamp() * 1000) + round((seconds - whole) * 1000)


def parse_nmea_rmc(line: str) -> FixUpdate:
    """Parse an RMC sentence (checksum assumed already validated).

    Status 'V' yields valid=False with placeholder position. Empty
    speed/course fields map to None.
    """
    fields = _nmea_fields(line, "RMC")
    if len(fields) < 12:
        raise ValueError(f"RMC needs >= 12 fields, got {len(fields)}")
    status = fields[2]
    fix_time = _nmea_time_ms(fields[1], fields[9])
    if status != "A":
        return FixUpdate(position=GeoPosition(0.0, 0.0),
                         fix_time_ms=fix_time, valid=False)
    lat = _parse_ddmm(fields[3], fields[4])
    lon = _parse_ddmm(fields[5], fields[6])
    speed = float(fields[7]) * KNOT_MPS if fields[7] else None
    heading = float(fields[8]) % 360.0 if fields[8] else None
    return FixUpdate(position=GeoPosition(lat, lon), fix_time_ms=fix_time,
                     valid=True, speed_mps=speed, heading_deg=heading)


def parse_nmea_gga(line: str) -> GgaFix:
    """Pull altitude and fix quality from a GGA sentence."""
    fields = _nmea_fields(line, "GGA")
    if len(fields) < 15:
        raise ValueError(f"GGA needs >= 15 fields, got {len(fields)}")
    quality = int(fields[6]) if fields[6] else 0
    alt = float(fields[9]) if fields[9] else None
    return GgaFix(alt_m=alt, fix_quality=quality)


class NmeaFixSource:
    """Feeds raw NMEA lines, emits FixUpdates on each valid RMC.

    GGA altitude is remembered and stamped onto subsequent RMC fixes.
    Lines that fail the checksum, belong to other sentence types, or do
    not parse are silently dropped: real serial streams contain junk.
    """

    def __init__(self) -> None:
        self.last_alt_m: float | None = None

    def feed(self, line: str) -> FixUpdate | None:
        if not validate_nmea_checksum(line):
            return None
        try:
            fields = line.strip().split(",", 1)[0]
            kind = fields[3:] if len(fields) >= 6 else ""
            if kind == "GGA":
                gga = parse_nmea_gga(line)
                if gga.fix_quality > 0 and gga.alt_m is not None:
                    self.last_alt_m = gga.alt_m
                return None
            if kind == "RMC":
                fix = parse_nmea_rmc(line)
                if fix.valid and self.last_alt_m is not None:
                    pos = GeoPosition(fix.position.lat_deg,
                                      fix.position.lon_deg,
                                      self.last_alt_m)
                    return FixUpdate(position=pos,
                                     fix_time_ms=fix.fix_time_ms,
                                     valid=True, speed_mps=fix.speed_mps,
                                     heading_deg=fix.heading_deg)
                return fix
        except ValueError:
            return None
        return None


def parse_gpsd_tpv(json_line: str) -> FixUpdate | None:
    """Map one gpsd JSON line to a FixUpdate.

    Non-TPV classes return None (no update). TPV with mode < 2, or with
    position fields missing, is an invalid fix. Malformed JSON raises.
    """
    obj = json.loads(json_line)
    if not isinstance(obj, dict) or obj.get("class") != "TPV":
        return None
    fix_time = _iso_to_epoch_ms(obj.get("time"))
    mode = obj.get("mode", 0)
    if mode < 2 or "lat" not in obj or "lon" not in obj:
        return FixUpdate(position=GeoPosition(0.0, 0.0),
                         fix_time_ms=fix_time, valid=False)
    alt = obj.get("alt", obj.get("altHAE", 0.0))
    heading = obj.get("track")
    return FixUpdate(
        position=GeoPosition(float(obj["lat"]), float(obj["lon"]),
                             float(alt)),
        fix_time_ms=fix_time,
        valid=True,
        speed_mps=float(obj["speed"]) if "speed" in obj else None,
        heading_deg=float(heading) % 360.0 if heading is not None else None,
    )


def _iso_to_epoch_ms(stamp: str | None) -> int:
    if not stamp:
        return 0
    # Python 3.10 fromisoformat does not accept a trailing Z
    if stamp.endswith("Z"):
        stamp = stamp[:-1] + "+00:00"
    try:
        return int(datetime.fromisoformat(stamp).timestamp() * 1000)
    except ValueError:
        return 0


def gpsd_fixes(host: str, port: int = 2947, timeout_s: float = 10.0):
    """Connect to a gpsd daemon and yield FixUpdates until EOF.

    Sends the standard WATCH enable command, then maps every TPV line.
    """
    with socket.create_connection((host, port), timeout=timeout_s) as sock:
        sock.sendall(b'?WATCH={"enable":true,"json":true};\n')
        buf = b""
        while True:
            chunk = sock.recv(4096)
            if not chunk:
                return
            buf += chunk
            while b"\n" in buf:
                raw, buf = buf.split(b"\n", 1)
                line = raw.decode("utf-8", errors="replace").strip()
                if not line:
                    continue
                try:
                    fix = parse_gpsd_tpv(line)
                except (ValueError, json.JSONDecodeError):
                    continue
                if fix is not None:
                    yield fix


def fix_to_state(fix: FixUpdate) -> KinematicState:
    """FixUpdate to KinematicState, defaulting missing motion to zero."""
    return KinematicState(
        position=fix.position,
        speed_mps=fix.speed_mps if fix.speed_mps is not None else 0.0,
        heading_deg=fix.heading_deg if fix.heading_deg is not None else 0.0,
        timestamp_ms=fix.fix_time_ms,
    )


def load_trace(path: str) -> list[KinematicState]:
    """Load a trace CSV: timestamp_ms,lat_deg,lon_deg,speed_mps,heading_deg.

    A header line matching the column names is allowed and skipped.
    Timestamps must be non-decreasing.
    """
    states: list[KinematicState] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for i, row in enumerate(reader):
            if not row or (i == 0 and row[0].strip() == TRACE_COLUMNS[0]):
                continue
            if len(row) != len(TRACE_COLUMNS):
                raise ValueError(
                    f"{path}:{i + 1}: expected {len(TRACE_COLUMNS)} columns, "
                    f"got {len(row)}")
            ts = int(row[0])
            state = KinematicState(
                position=GeoPosition(float(row[1]), float(row[2])),
                speed_mps=float(row[3]),
                heading_deg=float(row[4]) % 360.0,
                timestamp_ms=ts,
            )
            if states and ts < states[-1].timestamp_ms:
                raise ValueError(
                    f"{path}:{i + 1}: timestamps out of order "
                    f"({ts} after {states[-1].timestamp_ms})")
            states.append(state)
    if not states:
        raise ValueError(f"{path}: empty trace")
    return states


def save_trace(path: str, states: list[KinematicState]) -> None:
    """Write a trace CSV with header, inverse of load_trace."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for s in states:
            writer.writerow([s.timestamp_ms,
                             f"{s.position.lat_deg:.7f}",
                             f"{s.position.lon_deg:.7f}",
                             f"{s.speed_mps:.3f}",
                             f"{s.heading_deg:.1f}"])


def replay_trace(states: list[KinematicState], speed_factor: float = 1.0,
                 sleep=time.sleep):
    """Yield trace states at their recorded pacing.

    Inter-arrival times are divided by speed_factor; speed_factor 0
    replays as fast as possible (virtual clock, timestamps preserved).
    """
    if speed_factor < 0:
        raise ValueError(f"speed_factor must be >= 0: {speed_factor}")
    prev_ms: int | None = None
    for state in states:
        if speed_factor > 0 and prev_ms is not None:
            delta_s = (state.timestamp_ms - prev_ms) / 1000.0
            if delta_s > 0:
                sleep(delta_s / speed_factor)
        prev_ms = state.timestamp_ms
        yield state
