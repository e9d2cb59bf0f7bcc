"""Spherical-Earth helpers: haversine distance, fiber delay, dead reckoning."""

from __future__ import annotations

import math
from dataclasses import dataclass

EARTH_RADIUS_KM = 6371.0
FIBER_SPEED_KM_PER_MS = 200.0


def _wrap_lon(lon: float) -> float:
    wrapped = ((lon + 180.0) % 360.0) - 180.0
    # keep +180 as +180 rather than folding it onto -180
    if wrapped == -180.0 and lon > 0:
        return 180.0
    return wrapped


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        object.__setattr__(self, "lon", _wrap_lon(float(self.lon)))
        object.__setattr__(self, "lat", float(self.lat))


def great_circle_km(a: GeoPoint, b: GeoPoint) -> float:
    """Haversine distance in km on a sphere of radius 6371 km."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    h = min(1.0, max(0.0, h))
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))


def fiber_delay_ms(distance_km: float, speed_km_per_ms: float = FIBER_SPEED_KM_PER_MS) -> float:
    if distance_km < 0:
        raise ValueError(f"negative distance {distance_km}")
    if speed_km_per_ms <= 0:
        raise ValueError("propagation speed must be positive")
    return distance_km / speed_km_per_ms


def initial_bearing_deg(a: GeoPoint, b: GeoPoint) -> float:
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dlam = math.radians(b.lon - a.lon)
    y = math.sin(dlam) * math.cos(phi2)
    x = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlam)
    return (math.degrees(math.atan2(y, x)) + 360.0) % 360.0


def destination_point(start: GeoPoint, bearing_deg: float, distance_km: float) -> GeoPoint:
    """Point reached after travelling `distance_km` along a great circle."""
    delta = distance_km / EARTH_RADIUS_KM
    theta = math.radians(bearing_deg)
    phi1 = math.radians(start.lat)
    lam1 = math.radians(start.lon)
    sin_phi2 = math.sin(phi1) * math.cos(delta) + math.cos(phi1) * math.sin(delta) * math.cos(theta)
    phi2 = math.asin(max(-1.0, min(1.0, sin_phi2)))
    lam2 = lam1 + math.atan2(
        math.sin(theta) * math.sin(delta) * math.cos(phi1),
        math.cos(delta) - math.sin(phi1) * sin_phi2,
    )
    return GeoPoint(math.degrees(phi2), math.degrees(lam2))
