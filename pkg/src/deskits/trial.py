"""Drive-test log analysis: clustering, PDR windows, range, GeoJSON.

Input is an RX log CSV, either the bare form

    rx_time_ms,sender_id,tx_lat,tx_lon,rx_lat,rx_lon[,p_rx_dbm]

or a full scenario event log, from which the RX rows are taken. The
products mirror what a drive-test report needs: per-sender clusters of
received-message positions, per-second reception ratios along the
receiver's path, an estimated maximum communication range, and GeoJSON
for map rendering.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .core import GeoPosition, KinematicState, haversine_m
from .scenario import EVENT_LOG_COLUMNS

RX_LOG_COLUMNS = ("rx_time_ms", "sender_id", "tx_lat", "tx_lon",
                  "rx_lat", "rx_lon")

MAX_PDR_COLOR = 0x64  # dark green at full delivery, black at zero


@dataclass(frozen=True)
class RxLogRecord:
    rx_time_ms: int
    sender_id: int
    tx_lat: float
    tx_lon: float
    rx_lat: float
    rx_lon: float
    p_rx_dbm: float | None = None


@dataclass(frozen=True)
class SenderCluster:
    """Mean TX position of one block of consecutively received messages."""

    sender_id: int
    mean_position: GeoPosition
    first_flag: bool
    size: int


@dataclass(frozen=True)
class PdrWindow:
    """Reception count over one fixed window of receiver time."""

    window_start_ms: int
    received_count: int
    expected_count: int
    mean_rx_position: GeoPosition | None
    distance_m: float | None

    def __post_init__(self) -> None:
        if not 0 <= self.received_count <= self.expected_count:
            raise ValueError(
                f"received {self.received_count} outside "
                f"[0, {self.expected_count}]")


@dataclass(frozen=True)
class RangeEstimate:
    max_rx_distance_m: float
    # (bin_start_m, mean_pdr) over 10 m distance bins
    distance_pdr_curve: tuple[tuple[float, float], ...]


def load_rx_log(path: str) -> list[RxLogRecord]:
    """Load an RX log, accepting both supported CSV shapes.

    A scenario event log is recognized by its header and reduced to its
    RX rows. The bare RX form may carry an optional header and an
    optional trailing p_rx_dbm column. Timestamps must be non-decreasing.
    """
    with open(path, newline="") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty log")

    records: list[RxLogRecord] = []
    if lines[0] == ",".join(EVENT_LOG_COLUMNS):
        for lineno, line in enumerate(lines[1:], start=2):
            parts = line.split(",")
            if len(parts) != len(EVENT_LOG_COLUMNS):
                raise ValueError(f"{path}:{lineno}: bad column count")
            if parts[1] != "RX":
                continue
            records.append(RxLogRecord(
                rx_time_ms=int(parts[0]), sender_id=int(parts[2]),
                tx_lat=float(parts[4]), tx_lon=float(parts[5]),
                rx_lat=float(parts[6]), rx_lon=float(parts[7]),
                p_rx_dbm=float(parts[8]) if parts[8] else None))
    else:
        start = 0
        if lines[0].split(",")[0].strip() == RX_LOG_COLUMNS[0]:
            start = 1
        for lineno, line in enumerate(lines[start:], start=start + 1):
            parts = line.split(",")
            if len(parts) not in (6, 7):
                raise ValueError(
                    f"{path}:{lineno}: expected 6 or 7 columns, "
                    f"got {len(parts)}")
            p_rx = float(parts[6]) if len(parts) == 7 and parts[6] else None
            records.append(RxLogRecord(
                rx_time_ms=int(parts[0]), sender_id=int(parts[1]),
                tx_lat=float(parts[2]), tx_lon=float(parts[3]),
                rx_lat=float(parts[4]), rx_lon=float(parts[5]),
                p_rx_dbm=p_rx))

    for prev, cur in zip(records, records[1:]):
        if cur.rx_time_ms < prev.rx_time_ms:
            raise ValueError(
                f"{path}: rx times out of order "
                f"({cur.rx_time_ms} after {prev.rx_time_ms})")
    return records


def cluster_by_sender(records: list[RxLogRecord],
                      group_size: int = 10) -> list[SenderCluster]:
    """Group each sender's messages, in arrival order, into blocks of
    group_size and average their TX positions.

    The trailing partial block is dropped. The first block per sender is
    flagged (where that sender was first heard). Output sorted by
    sender_id, blocks in arrival order.
    """
    if group_size < 1:
        raise ValueError(f"group_size must be >= 1: {group_size}")
    by_sender: dict[int, list[RxLogRecord]] = {}
    for rec in records:
        by_sender.setdefault(rec.sender_id, []).append(rec)

    clusters: list[SenderCluster] = []
    for sid in sorted(by_sender):
        recs = by_sender[sid]
        for block_idx in range(len(recs) // group_size):
            block = recs[block_idx * group_size:(block_idx + 1) * group_size]
            lat = sum(r.tx_lat for r in block) / len(block)
            lon = sum(r.tx_lon for r in block) / len(block)
            clusters.append(SenderCluster(
                sender_id=sid, mean_position=GeoPosition(lat, lon),
                first_flag=block_idx == 0, size=len(block)))
    return clusters


def _interpolate_position(trace: list[KinematicState],
                          t_ms: float) -> GeoPosition:
    """Linear interpolation along a receiver trace, clamped at the ends."""
    if t_ms <= trace[0].timestamp_ms:
        return trace[0].position
    if t_ms >= trace[-1].timestamp_ms:
        return trace[-1].position
    for a, b in zip(trace, trace[1:]):
        if a.timestamp_ms <= t_ms <= b.timestamp_ms:
            span = b.timestamp_ms - a.timestamp_ms
            frac = 0.0 if span == 0 else (t_ms - a.timestamp_ms) / span
            lat = a.position.lat_deg \
                + frac * (b.position.lat_deg - a.position.lat_deg)
            lon = a.position.lon_deg \
                + frac * (b.position.lon_deg - a.position.lon_deg)
            return GeoPosition(lat, lon)
    return trace[-1].position


def window_pdr(records: list[RxLogRecord], tx_position: GeoPosition,
               tx_period_ms: int = 100, window_ms: int = 1000,
               receiver_trace: list[KinematicState] | None = None
               ) -> list[PdrWindow]:
    """Per-window reception counts for ONE sender's records.

    Windows are consecutive [k*w, (k+1)*w) receiver-clock bins anchored
    at the first record's floor-second. expected = window / period. The
    window position is the mean of its records' RX positions; an empty
    window takes the trace position interpolated at the window midpoint
    when a receiver trace is supplied, else carries no position. With a
    trace, windows extend to the trace end, so silence after the last
    reception still shows up as 0-count windows.
    """
    if tx_period_ms <= 0 or window_ms <= 0:
        raise ValueError("periods must be positive")
    if window_ms % tx_period_ms != 0:
        raise ValueError(
            f"tx_period_ms={tx_period_ms} must divide window_ms={window_ms}")
    senders = {r.sender_id for r in records}
    if len(senders) > 1:
        raise ValueError(f"records from multiple senders: {sorted(senders)}")
    if not records and receiver_trace is None:
        return []

    expected = window_ms // tx_period_ms
    if records:
        anchor = (records[0].rx_time_ms // window_ms) * window_ms
        last_ms = records[-1].rx_time_ms
    else:
        anchor = (receiver_trace[0].timestamp_ms // window_ms) * window_ms
        last_ms = receiver_trace[0].timestamp_ms
    if receiver_trace is not None:
        last_ms = max(last_ms, receiver_trace[-1].timestamp_ms)
    n_windows = (last_ms - anchor) // window_ms + 1

    bins: dict[int, list[RxLogRecord]] = {}
    for rec in records:
        bins.setdefault((rec.rx_time_ms - anchor) // window_ms, []).append(rec)

    windows: list[PdrWindow] = []
    for k in range(n_windows):
        start = anchor + k * window_ms
        members = bins.get(k, [])
        if members:
            lat = sum(r.rx_lat for r in members) / len(members)
            lon = sum(r.rx_lon for r in members) / len(members)
            pos: GeoPosition | None = GeoPosition(lat, lon)
        elif receiver_trace is not None:
            pos = _interpolate_position(receiver_trace,
                                        start + window_ms / 2.0)
        else:
            pos = None
        dist = None
        if pos is not None:
            dist = haversine_m(pos.lat_deg, pos.lon_deg,
                               tx_position.lat_deg, tx_position.lon_deg)
        windows.append(PdrWindow(
            window_start_ms=start, received_count=len(members),
            expected_count=expected, mean_rx_position=pos,
            distance_m=dist))
    return windows


def estimate_range(windows: list[PdrWindow],
                   bin_m: float = 10.0) -> RangeEstimate:
    """Max distance of any window that received something, plus a
    distance-binned mean PDR curve."""
    live = [w for w in windows
            if w.received_count >= 1 and w.distance_m is not None]
    if not live:
        raise ValueError("no window with received >= 1")
    max_d = max(w.distance_m for w in live)

    curve_bins: dict[int, list[float]] = {}
    for w in windows:
        if w.distance_m is None:
            continue
        idx = int(w.distance_m // bin_m)
        curve_bins.setdefault(idx, []).append(
            w.received_count / w.expected_count)
    curve = tuple((idx * bin_m, sum(vals) / len(vals))
                  for idx, vals in sorted(curve_bins.items()))
    return RangeEstimate(max_rx_distance_m=max_d, distance_pdr_curve=curve)


def pdr_color(received: int, expected: int) -> str:
    """Map delivery ratio to the black-to-dark-green ramp."""
    if expected <= 0:
        raise ValueError("expected must be positive")
    ratio = received / expected
    g = round(MAX_PDR_COLOR * ratio)
    return f"#00{g:02x}00"


def _point_feature(pos: GeoPosition | None, props: dict) -> dict:
    geometry = None
    if pos is not None:
        geometry = {"type": "Point",
                    "coordinates": [pos.lon_deg, pos.lat_deg]}
    return {"type": "Feature", "geometry": geometry, "properties": props}


def clusters_to_geojson(clusters: list[SenderCluster]) -> dict:
    """One point per cluster; the first-contact cluster is drawn red."""
    features = [
        _point_feature(c.mean_position, {
            "sender_id": c.sender_id,
            "first_flag": c.first_flag,
            "size": c.size,
            "marker-color": "#ff0000" if c.first_flag else "#006400",
        })
        for c in clusters
    ]
    return {"type": "FeatureCollection", "features": features}


def windows_to_geojson(windows: list[PdrWindow]) -> dict:
    """One point per window, colored by delivery ratio."""
    features = [
        _point_feature(w.mean_rx_position, {
            "window_start_ms": w.window_start_ms,
            "received_count": w.received_count,
            "expected_count": w.expected_count,
            "distance_m": w.distance_m,
            "marker-color": pdr_color(w.received_count, w.expected_count),
        })
        for w in windows
    ]
    return {"type": "FeatureCollection", "features": features}


def write_geojson(path: str, collection: dict) -> None:
    with open(path, "w") as fh:
        json.dump(collection, fh, indent=2)
        fh.write("\n")
