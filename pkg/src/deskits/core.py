"""Shared geodesy, unit and link-budget primitives.

Everything here is a pure function of its inputs. The geodesy uses a
spherical earth model, which is accurate to well under a metre over the
few-kilometre spans a V2X field trial covers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

SPEED_OF_LIGHT_MPS = 299_792_458.0
EARTH_RADIUS_M = 6_371_000.0
KNOT_MPS = 0.514444


@dataclass(frozen=True)
class GeoPosition:
    """A WGS-84 style latitude/longitude pair with optional altitude."""

    lat_deg: float
    lon_deg: float
    alt_m: float = 0.0

    def __post_init__(self) -> None:
        if math.isnan(self.lat_deg) or math.isnan(self.lon_deg) \
                or math.isnan(self.alt_m):
            raise ValueError("NaN coordinate")
        if not -90.0 <= self.lat_deg <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat_deg}")
        if not -180.0 <= self.lon_deg <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon_deg}")


@dataclass(frozen=True)
class KinematicState:
    """Position plus the motion terms the CAM trigger rules look at."""

    position: GeoPosition
    speed_mps: float
    heading_deg: float
    timestamp_ms: int

    def __post_init__(self) -> None:
        if self.speed_mps < 0.0:
            raise ValueError(f"speed must be non-negative: {self.speed_mps}")
        if not 0.0 <= self.heading_deg < 360.0:
            raise ValueError(f"heading out of [0, 360): {self.heading_deg}")


def haversine_m(lat1_deg: float, lon1_deg: float,
                lat2_deg: float, lon2_deg: float) -> float:
    """Great-circle distance in metres between two lat/lon points."""
    phi1 = math.radians(lat1_deg)
    phi2 = math.radians(lat2_deg)
    dphi = math.radians(lat2_deg - lat1_deg)
    dlam = math.radians(lon2_deg - lon1_deg)
    a = (math.sin(dphi / 2.0) ** 2
         + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(a))


def distance_m(a: GeoPosition, b: GeoPosition) -> float:
    """Great-circle distance between two positions."""
    return haversine_m(a.lat_deg, a.lon_deg, b.lat_deg, b.lon_deg)


def destination_point(lat_deg: float, lon_deg: float,
                      bearing_deg: float, dist_m: float) -> tuple[float, float]:
    """Point reached from (lat, lon) after dist_m along a given bearing.

    Inverse of the haversine distance on the same spherical model, handy
    for synthesizing straight-line drive traces.
    """
    phi1 = math.radians(lat_deg)
    lam1 = math.radians(lon_deg)
    theta = math.radians(bearing_deg)
    delta = dist_m / EARTH_RADIUS_M
    phi2 = math.asin(math.sin(phi1) * math.cos(delta)
                     + math.cos(phi1) * math.sin(delta) * math.cos(theta))
    lam2 = lam1 + math.atan2(
        math.sin(theta) * math.sin(delta) * math.cos(phi1),
        math.cos(delta) - math.sin(phi1) * math.sin(phi2))
    lon2 = math.degrees(lam2)
    # normalize to [-180, 180)
    lon2 = (lon2 + 180.0) % 360.0 - 180.0
    return math.degrees(phi2), lon2


def free_space_loss_db(distance_m: float, fc_hz: float) -> float:
    """Free-space path loss L0 = 20 log10(4 pi d fc / c) in dB.

    Args:
        distance_m: link distance in metres, must be > 0.
        fc_hz: carrier frequency in Hz, must be > 0.
    """
    if distance_m <= 0.0:
        raise ValueError(f"distance must be > 0: {distance_m}")
    if fc_hz <= 0.0:
        raise ValueError(f"carrier frequency must be > 0: {fc_hz}")
    return 20.0 * math.log10(4.0 * math.pi * distance_m * fc_hz
                             / SPEED_OF_LIGHT_MPS)


def heading_delta_deg(a_deg: float, b_deg: float) -> float:
    """Smallest absolute angular difference between two headings, in [0, 180]."""
    d = abs(a_deg - b_deg) % 360.0
    return 360.0 - d if d > 180.0 else d


def round_half_away(x: float) -> int:
    """Round to nearest integer with ties going away from zero.

    Python's built-in round() is banker's rounding; wire-format
    quantization wants 0.5 to become 1 and -0.5 to become -1.
    """
    if x >= 0.0:
        return math.floor(x + 0.5)
    return math.ceil(x - 0.5)


def db_to_linear(db: float) -> float:
    """Power ratio for a dB value."""
    return 10.0 ** (db / 10.0)


def linear_to_db(ratio: float) -> float:
    """dB value for a power ratio; -inf for zero."""
    if ratio < 0.0:
        raise ValueError(f"power ratio must be non-negative: {ratio}")
    if ratio == 0.0:
        return float("-inf")
    return 10.0 * math.log10(ratio)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    if watts < 0.0:
        raise ValueError(f"power must be non-negative: {watts}")
    if watts == 0.0:
        return float("-inf")
    return 10.0 * math.log10(watts) + 30.0
