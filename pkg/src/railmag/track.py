"""Track map model, magnetic lookup and geodesy helpers.

A track is a single 1-D line parameterised by arclength ``s`` (meters).  The
map stores a 3-axis magnetic field sample and a lat/lon coordinate on a
uniform arclength grid starting at ``s = 0``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from railmag.errors import DomainError, ParseError, SpacingError

# Earth's mean radius in meters
EARTH_RADIUS_M = 6_371_000.0

MAP_HEADER = ("s_m", "lat_deg", "lon_deg", "bx", "by", "bz")

# Relative tolerance on consecutive arclength deltas.
SPACING_RTOL = 1e-9

# Returned by lookup_field for arclengths outside the track.
OUT_OF_BOUNDS = None


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        _check_latlon(self.lat, self.lon)


@dataclass(frozen=True)
class MapSample:
    s: float
    lat: float
    lon: float
    b: tuple[float, float, float]


def _check_latlon(lat, lon):
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if not (np.all(np.isfinite(lat)) and np.all(np.isfinite(lon))):
        raise DomainError("non-finite latitude/longitude")
    if np.any(np.abs(lat) > 90.0):
        raise DomainError(f"latitude outside [-90, 90]: {lat[np.abs(lat) > 90.0].ravel()[:3]}")
    if np.any(np.abs(lon) > 180.0):
        raise DomainError(f"longitude outside [-180, 180]: {lon[np.abs(lon) > 180.0].ravel()[:3]}")


@dataclass(frozen=True, eq=False)
class TrackMap:
    """Pre-recorded magnetic map on a uniform arclength grid.

    Attributes:
        s: arclengths, shape (n,), ``s[0] == 0``.
        lat, lon: geo coordinates in degrees, shape (n,).
        b: magnetic field samples, shape (n, 3).
        dx: grid step in meters.
    """

    s: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    b: np.ndarray
    dx: float = field(init=False)

    def __post_init__(self):
        s = np.ascontiguousarray(self.s, dtype=np.float64)
        lat = np.ascontiguousarray(self.lat, dtype=np.float64)
        lon = np.ascontiguousarray(self.lon, dtype=np.float64)
        b = np.ascontiguousarray(self.b, dtype=np.float64)
        n = s.shape[0]
        if s.ndim != 1 or n < 2:
            raise SpacingError("a track map needs at least 2 samples")
        if lat.shape != (n,) or lon.shape != (n,) or b.shape != (n, 3):
            raise ParseError("map arrays have inconsistent shapes")
        if not np.all(np.isfinite(b)):
            raise DomainError("map contains non-finite field values")
        _check_latlon(lat, lon)
        if abs(s[0]) > SPACING_RTOL * max(abs(s[-1]), 1.0):
            raise SpacingError(f"map arclength must start at 0, got {s[0]!r}")
        deltas = np.diff(s)
        dx = (s[-1] - s[0]) / (n - 1)
        if dx <= 0 or not np.all(deltas > 0):
            bad = int(np.argmax(deltas <= 0)) + 1 if dx > 0 else 1
            raise SpacingError(f"arclength not strictly increasing at row {bad}")
        # float round-off of |s| on top of the relative tolerance
        tol = SPACING_RTOL * dx + 4 * np.finfo(float).eps * np.abs(s[1:])
        bad = np.flatnonzero(np.abs(deltas - dx) > tol)
        if bad.size:
            i = int(bad[0]) + 1
            raise SpacingError(
                f"non-uniform arclength spacing at row {i}: delta {deltas[i - 1]!r} != dx {dx!r}"
            )
        for arr in (s, lat, lon, b):
            arr.setflags(write=False)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "dx", float(dx))

    @property
    def length(self) -> float:
        return (len(self) - 1) * self.dx

    def __len__(self) -> int:
        return self.s.shape[0]

    def sample(self, i: int) -> MapSample:
        return MapSample(float(self.s[i]), float(self.lat[i]), float(self.lon[i]), tuple(self.b[i]))

    @property
    def samples(self) -> list[MapSample]:
        return [self.sample(i) for i in range(len(self))]


def load_map(path) -> TrackMap:
    """Read a map CSV (``s_m,lat_deg,lon_deg,bx,by,bz``)."""
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MAP_HEADER:
            raise ParseError(f"{path}: expected header {','.join(MAP_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise ParseError(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    if len(rows) < 2:
        raise SpacingError(f"{path}: a track map needs at least 2 samples")
    data = np.array(rows, dtype=np.float64)
    return TrackMap(s=data[:, 0], lat=data[:, 1], lon=data[:, 2], b=data[:, 3:6])


def save_map(track: TrackMap, path) -> None:
    """Write a map CSV with 9 significant digits."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(MAP_HEADER) + "\n")
        for s, la, lo, (bx, by, bz) in zip(track.s, track.lat, track.lon, track.b):
            fh.write(f"{s:.9g},{la:.9g},{lo:.9g},{bx:.9g},{by:.9g},{bz:.9g}\n")


def _bracket(track: TrackMap, s: float) -> tuple[int, float]:
    u = s / track.dx
    k = round(u)
    if abs(u - k) <= 1e-9:
        return int(k), 0.0
    i = int(math.floor(u))
    return i, u - i


def lookup_field(track: TrackMap, s: float):
    """Linearly interpolated field at arclength ``s``.

    Returns ``OUT_OF_BOUNDS`` (``None``) when ``s`` lies outside ``[0, length]``.
    """
    if not (0.0 <= s <= track.length):
        return OUT_OF_BOUNDS
    i, frac = _bracket(track, s)
    if frac == 0.0:
        return track.b[i].copy()
    return track.b[i] + frac * (track.b[i + 1] - track.b[i])


def lookup_fields(track: TrackMap, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`lookup_field`.

    Returns:
        (fields, valid): fields has shape (len(s), 3) and is NaN where the
        corresponding ``valid`` entry is False.
    """
    s = np.asarray(s, dtype=np.float64)
    valid = (s >= 0.0) & (s <= track.length)
    u = np.where(valid, s, 0.0) / track.dx
    k = np.rint(u)
    on_grid = np.abs(u - k) <= 1e-9
    i = np.where(on_grid, k, np.floor(u)).astype(np.int64)
    frac = np.where(on_grid, 0.0, u - i)
    i = np.minimum(i, len(track) - 1)
    j = np.minimum(i + 1, len(track) - 1)
    out = track.b[i] + frac[:, None] * (track.b[j] - track.b[i])
    out[~valid] = np.nan
    return out, valid


def arclength_to_geo(track: TrackMap, s: float) -> GeoPoint:
    """Lat/lon at arclength ``s`` by linear interpolation between samples."""
    if not (0.0 <= s <= track.length):
        raise DomainError(f"arclength {s} outside track [0, {track.length}]")
    i, frac = _bracket(track, s)
    if frac == 0.0:
        return GeoPoint(float(track.lat[i]), float(track.lon[i]))
    lat = track.lat[i] + frac * (track.lat[i + 1] - track.lat[i])
    lon = track.lon[i] + frac * (track.lon[i + 1] - track.lon[i])
    return GeoPoint(float(lat), float(lon))


def arclengths_to_geo(track: TrackMap, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`arclength_to_geo`; returns (lat, lon) arrays."""
    s = np.asarray(s, dtype=np.float64)
    if np.any((s < 0.0) | (s > track.length)):
        raise DomainError("arclength outside track")
    return np.interp(s, track.s, track.lat), np.interp(s, track.s, track.lon)


def haversine(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters."""
    return float(haversine_arrays(a.lat, a.lon, b.lat, b.lon))


def haversine_arrays(lat1, lon1, lat2, lon2):
    """Vectorised haversine distance in meters."""
    p1 = np.radians(lat1)
    p2 = np.radians(lat2)
    dp = np.radians(np.subtract(lat2, lat1))
    dl = np.radians(np.subtract(lon2, lon1))
    h = np.sin(dp / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def destination(origin: GeoPoint, bearing_deg: float, distance) -> tuple[np.ndarray, np.ndarray]:
    """Points ``distance`` meters from ``origin`` along a great circle.

    ``distance`` may be an array; returns (lat, lon) arrays in degrees.
    """
    d = np.asarray(distance, dtype=np.float64) / EARTH_RADIUS_M
    p1 = math.radians(origin.lat)
    l1 = math.radians(origin.lon)
    th = math.radians(bearing_deg)
    sin_p2 = math.sin(p1) * np.cos(d) + math.cos(p1) * np.sin(d) * math.cos(th)
    p2 = np.arcsin(np.clip(sin_p2, -1.0, 1.0))
    l2 = l1 + np.arctan2(math.sin(th) * np.sin(d) * math.cos(p1), np.cos(d) - math.sin(p1) * sin_p2)
    lon = (np.degrees(l2) + 540.0) % 360.0 - 180.0
    return np.degrees(p2), lon
