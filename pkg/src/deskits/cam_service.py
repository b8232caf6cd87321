"""CAM generation service.

Decides when a station must emit a CAM from its kinematic state and
quantizes that state into a wire payload. Two modes:

  * dynamic: the ETSI-style trigger rules. A CAM is never generated
    before t_gen_min_ms has elapsed, always generated once t_gen_max_ms
    has elapsed, and generated in between when heading, position or
    speed moved past its threshold since the last CAM.
  * forced: fixed-period test mode that bypasses the dynamics rules
    entirely (the 10 Hz bench configuration). The period is strict.

The repeat-generation counter of the full standard (keep emitting for a
while after a dynamics trigger) is deliberately omitted; a single-shot
rule covers both modes exercised here.
"""

from __future__ import annotations

from dataclasses import dataclass

from .codec import CamPayload
from .core import (
    KinematicState,
    distance_m,
    heading_delta_deg,
    round_half_away,
)

STATION_TYPE_PASSENGER_CAR = 5


@dataclass(frozen=True)
class CamTriggerConfig:
    """Trigger thresholds. Defaults follow the ETSI CA service profile."""

    heading_threshold_deg: float = 4.0
    position_threshold_m: float = 4.0
    speed_threshold_mps: float = 0.5
    t_gen_min_ms: int = 100
    t_gen_max_ms: int = 1000
    forced_period_ms: int | None = None

    def __post_init__(self) -> None:
        if self.t_gen_min_ms > self.t_gen_max_ms:
            raise ValueError("t_gen_min_ms must not exceed t_gen_max_ms")
        if (self.heading_threshold_deg <= 0 or self.position_threshold_m <= 0
                or self.speed_threshold_mps <= 0):
            raise ValueError("thresholds must be positive")
        if self.forced_period_ms is not None and self.forced_period_ms <= 0:
            raise ValueError("forced_period_ms must be positive")


@dataclass
class CamServiceState:
    """What the trigger rules remember: the state at the last CAM."""

    last_cam_state: KinematicState | None = None
    last_cam_time_ms: int | None = None


@dataclass(frozen=True)
class TriggerDecision:
    generate: bool
    reason: str


def check_cam_trigger(prev: CamServiceState, now: KinematicState,
                      cfg: CamTriggerConfig) -> TriggerDecision:
    """Pure trigger evaluation; mutates nothing.

    Args:
        prev: service state as of the last transmitted CAM.
        now: current kinematic state, timestamp at or after the last CAM.
        cfg: thresholds and mode.
    """
    if prev.last_cam_state is None or prev.last_cam_time_ms is None:
        return TriggerDecision(True, "first")

    elapsed = now.timestamp_ms - prev.last_cam_time_ms
    if elapsed < 0:
        raise ValueError(f"time went backwards: elapsed={elapsed} ms")

    if cfg.forced_period_ms is not None:
        if elapsed >= cfg.forced_period_ms:
            return TriggerDecision(True, "forced-period")
        return TriggerDecision(False, "forced-period-pending")

    if elapsed < cfg.t_gen_min_ms:
        return TriggerDecision(False, "min-period")
    if elapsed >= cfg.t_gen_max_ms:
        return TriggerDecision(True, "max-period")

    last = prev.last_cam_state
    if heading_delta_deg(now.heading_deg,
                         last.heading_deg) >= cfg.heading_threshold_deg:
        return TriggerDecision(True, "heading")
    if distance_m(now.position, last.position) >= cfg.position_threshold_m:
        return TriggerDecision(True, "position")
    if abs(now.speed_mps - last.speed_mps) >= cfg.speed_threshold_mps:
        return TriggerDecision(True, "speed")
    return TriggerDecision(False, "no-trigger")


def build_cam(state: KinematicState, station_id: int, now_ms: int,
              station_type: int = STATION_TYPE_PASSENGER_CAR) -> CamPayload:
    """Quantize a kinematic state into CAM wire units.

    Rounding is half-away-from-zero. Heading quantizes to 0.1 degree
    units and wraps, so 359.96 degrees becomes 0.
    """
    heading = round_half_away(state.heading_deg * 10.0) % 3600
    return CamPayload(
        station_id=station_id,
        generation_delta_time=now_ms % 65536,
        latitude_tenth_udeg=round_half_away(state.position.lat_deg * 1e7),
        longitude_tenth_udeg=round_half_away(state.position.lon_deg * 1e7),
        altitude_cm=round_half_away(state.position.alt_m * 100.0),
        speed_cmps=round_half_away(state.speed_mps * 100.0),
        heading_tenth_deg=heading,
        station_type=station_type,
    )


class CamService:
    """Stateful wrapper: feed kinematic updates, get payloads when due.

    One instance per station. Not thread-safe by design: only the task
    running the station's transmit loop may call update().
    """

    def __init__(self, station_id: int,
                 cfg: CamTriggerConfig | None = None,
                 station_type: int = STATION_TYPE_PASSENGER_CAR) -> None:
        self.station_id = station_id
        self.cfg = cfg if cfg is not None else CamTriggerConfig()
        self.station_type = station_type
        self.state = CamServiceState()

    def update(self, now: KinematicState) -> CamPayload | None:
        """Evaluate the trigger for a new state; build the CAM if due."""
        decision = check_cam_trigger(self.state, now, self.cfg)
        if not decision.generate:
            return None
        self.state.last_cam_state = now
        self.state.last_cam_time_ms = now.timestamp_ms
        return build_cam(now, self.station_id, now.timestamp_ms,
                         self.station_type)
