"""Local tangent-plane projection and heading arithmetic.

Headings are measured clockwise from geographic north and live in (-pi, pi].
Local points are (x east, y north) in meters about a declared origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, InvalidInputError

EARTH_RADIUS = 6371008.8  # mean radius, meters
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise InvalidInputError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise InvalidInputError(f"latitude {self.lat} out of range")
        if not -180.0 <= self.lon <= 180.0:
            raise InvalidInputError(f"longitude {self.lon} out of range")


@dataclass(frozen=True)
class LocalPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidInputError(f"non-finite local point ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])


def project(origin: GeoPoint, p: GeoPoint) -> LocalPoint:
    """Equirectangular projection of `p` into the tangent plane at `origin`."""
    x, y = project_arrays(origin, p.lat, p.lon)
    return LocalPoint(float(x), float(y))


def project_arrays(origin: GeoPoint, lat, lon):
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if np.any(~np.isfinite(lat)) or np.any(~np.isfinite(lon)):
        raise InvalidInputError("non-finite coordinates")
    if np.any(np.abs(lat) > 90.0) or np.any(np.abs(lon) > 180.0):
        raise InvalidInputError("coordinates out of range")
    dlon = (lon - origin.lon + 180.0) % 360.0 - 180.0
    k = math.radians(1.0) * EARTH_RADIUS
    x = dlon * k * math.cos(math.radians(origin.lat))
    y = (lat - origin.lat) * k
    return x, y


def unproject(origin: GeoPoint, p: LocalPoint) -> GeoPoint:
    lat, lon = unproject_arrays(origin, p.x, p.y)
    return GeoPoint(float(lat), float(lon))


def unproject_arrays(origin: GeoPoint, x, y):
    k = math.radians(1.0) * EARTH_RADIUS
    lat = origin.lat + np.asarray(y, dtype=float) / k
    lon = origin.lon + np.asarray(x, dtype=float) / (k * math.cos(math.radians(origin.lat)))
    lon = (lon + 180.0) % 360.0 - 180.0
    return lat, lon


def haversine(a: GeoPoint, b: GeoPoint) -> float:
    p1, p2 = math.radians(a.lat), math.radians(b.lat)
    dp = p2 - p1
    dl = math.radians(b.lon - a.lon)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS * math.asin(min(1.0, math.sqrt(h)))


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    if not math.isfinite(a):
        raise InvalidInputError(f"cannot wrap non-finite angle {a}")
    r = math.remainder(a, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


def wrap_array(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    r = np.remainder(a + math.pi, TWO_PI) - math.pi
    # remainder maps the +pi boundary onto -pi; flip it back
    return np.where(r <= -math.pi, r + TWO_PI, r)


def angle_diff(a: float, b: float) -> float:
    """Shortest signed difference a - b."""
    return wrap_angle(a - b)


def heading_of_vector(dx: float, dy: float) -> float:
    if dx == 0.0 and dy == 0.0:
        raise DegenerateGeometryError("zero-length vector has no heading")
    return wrap_angle(math.atan2(dx, dy))


def heading_between(a: LocalPoint, b: LocalPoint) -> float:
    """Clockwise-from-north heading of the vector from `a` to `b`."""
    return heading_of_vector(b.x - a.x, b.y - a.y)


def heading_to_unit(theta: float) -> np.ndarray:
    return np.array([math.sin(theta), math.cos(theta)])


def circular_mean(angles, weights=None) -> float:
    angles = np.asarray(angles, dtype=float)
    if angles.size == 0:
        raise InvalidInputError("circular mean of empty sequence")
    w = np.ones_like(angles) if weights is None else np.asarray(weights, dtype=float)
    s = float(np.sum(w * np.sin(angles)))
    c = float(np.sum(w * np.cos(angles)))
    if s == 0.0 and c == 0.0:
        raise DegenerateGeometryError("circular mean undefined for balanced angles")
    return wrap_angle(math.atan2(s, c))


def circular_std(angles) -> float:
    angles = np.asarray(angles, dtype=float)
    r = math.hypot(float(np.mean(np.sin(angles))), float(np.mean(np.cos(angles))))
    r = min(max(r, 1e-300), 1.0)
    return math.sqrt(-2.0 * math.log(r))
