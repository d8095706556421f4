"""Synthetic maps and sensor replays with exact ground truth."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from railmag.errors import BoundsError, CoverageError, DomainError, MonotonicityError, ParseError
from railmag.signal import TimeSignal
from railmag.track import GeoPoint, TrackMap, destination, lookup_fields

TRUTH_HEADER = ("t_s", "x_m", "v_mps")


@dataclass(frozen=True)
class SynthSpec:
    """Map generator settings.

    The field is box-smoothed Gaussian noise with standard deviation
    ``field_scale`` per axis plus Poisson-placed narrow spikes standing in
    for rail infrastructure.
    """

    length: float = 5000.0
    dx: float = 0.25
    seed: int = 0
    field_scale: float = 20.0
    corr_length: float = 5.0
    geo_anchor: GeoPoint = field(default_factory=lambda: GeoPoint(46.2, 7.3))
    heading_deg: float = 60.0
    spike_spacing: float = 200.0
    spike_amplitude: float = 5.0
    spike_width: float = 2.0

    def __post_init__(self):
        if not self.length > 0:
            raise DomainError("length must be positive")
        if not self.dx > 0:
            raise DomainError("dx must be positive")
        if self.corr_length < 2 * self.dx:
            raise DomainError(f"corr_length {self.corr_length} must be at least 2*dx")
        if self.field_scale < 0:
            raise DomainError("field_scale must be non-negative")


@dataclass(frozen=True)
class RunSpec:
    """Velocity profile and sensor model for one replay.

    ``profile`` lists ``(duration_s, target_mps)`` legs; velocity ramps
    linearly from the previous target (``v_init`` for the first leg, which
    defaults to the first target) to each leg's target.
    """

    profile: tuple[tuple[float, float], ...]
    sensor_rate: float = 100.0
    noise_sigma: float = 0.0
    start_s: float = 0.0
    seed: int = 0
    v_init: float | None = None
    v_noise: float = 0.0

    def __post_init__(self):
        if not self.sensor_rate > 0:
            raise DomainError("sensor_rate must be positive")
        if self.noise_sigma < 0 or self.v_noise < 0:
            raise DomainError("noise levels must be non-negative")
        if not self.profile:
            raise DomainError("empty velocity profile")
        for dur, _ in self.profile:
            if not dur > 0:
                raise DomainError(f"leg duration must be positive, got {dur}")
        object.__setattr__(self, "profile", tuple((float(d), float(v)) for d, v in self.profile))

    @property
    def duration(self) -> float:
        return sum(d for d, _ in self.profile)


@dataclass(frozen=True, eq=False)
class Truth:
    """Ground-truth trajectory sampled at the sensor times."""

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    lat: np.ndarray | None = None
    lon: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        if t.ndim != 1 or t.shape[0] < 2:
            raise DomainError("truth needs at least two samples")
        if np.any(np.diff(t) <= 0):
            raise MonotonicityError("truth timestamps must be strictly increasing")
        object.__setattr__(self, "t", t)
        for name in ("x", "v", "lat", "lon"):
            a = getattr(self, name)
            if a is None:
                continue
            a = np.asarray(a, dtype=np.float64)
            if a.shape != t.shape:
                raise DomainError(f"truth column {name} has the wrong length")
            object.__setattr__(self, name, a)

    def position_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        tol = 1e-9 * max(1.0, abs(self.t[-1]))
        if np.any((t < self.t[0] - tol) | (t > self.t[-1] + tol)):
            raise CoverageError(f"times outside truth coverage [{self.t[0]}, {self.t[-1]}]")
        return np.interp(t, self.t, self.x)

    def velocity_at(self, t) -> np.ndarray:
        return np.interp(np.asarray(t, dtype=np.float64), self.t, self.v)

    def distance_between(self, t_a: float, t_b: float) -> float:
        """Integral of the truth velocity over ``[t_a, t_b]`` (trapezoid rule)."""
        cum = np.concatenate(([0.0], np.cumsum(0.5 * (self.v[1:] + self.v[:-1]) * np.diff(self.t))))
        return float(np.interp(t_b, self.t, cum) - np.interp(t_a, self.t, cum))


def save_truth(truth: Truth, path) -> None:
    geo = truth.lat is not None and truth.lon is not None
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        head = TRUTH_HEADER + (("lat_deg", "lon_deg") if geo else ())
        fh.write(",".join(head) + "\n")
        for i in range(truth.t.shape[0]):
            row = f"{truth.t[i]:.12g},{truth.x[i]:.12g},{truth.v[i]:.9g}"
            if geo:
                row += f",{truth.lat[i]:.9g},{truth.lon[i]:.9g}"
            fh.write(row + "\n")


def load_truth(path) -> Truth:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        header = tuple(h.strip() for h in header) if header else None
        if header not in (TRUTH_HEADER, TRUTH_HEADER + ("lat_deg", "lon_deg")):
            raise ParseError(f"{path}: expected header t_s,x_m,v_mps[,lat_deg,lon_deg], got {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    if len(rows) < 2:
        raise ParseError(f"{path}: need at least 2 rows")
    d = np.array(rows)
    bad = np.flatnonzero(np.diff(d[:, 0]) <= 0)
    if bad.size:
        raise MonotonicityError(f"{path}:{int(bad[0]) + 3}: truth timestamps not strictly increasing")
    if len(header) == 5:
        return Truth(d[:, 0], d[:, 1], d[:, 2], d[:, 3], d[:, 4])
    return Truth(d[:, 0], d[:, 1], d[:, 2])


def _box_smooth(noise: np.ndarray, w: int) -> np.ndarray:
    c = np.cumsum(np.vstack([np.zeros((1, noise.shape[1])), noise]), axis=0)
    return (c[w:] - c[:-w]) / w


def gen_map(spec: SynthSpec) -> TrackMap:
    n = int(round(spec.length / spec.dx)) + 1
    s = spec.dx * np.arange(n)
    rng = np.random.Generator(np.random.Philox(spec.seed))
    w = max(1, int(round(spec.corr_length / spec.dx)))
    # a box of w unit normals has sd 1/sqrt(w)
    b = _box_smooth(rng.standard_normal((n + w - 1, 3)), w) * (math.sqrt(w) * spec.field_scale)
    n_spikes = rng.poisson(spec.length / spec.spike_spacing)
    centres = rng.uniform(0.0, s[-1], n_spikes)
    dirs = rng.standard_normal((n_spikes, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    amp = spec.spike_amplitude * spec.field_scale
    sd = spec.spike_width / 4.0
    half = int(math.ceil(5 * sd / spec.dx))
    for c, d in zip(centres, dirs):
        i0 = max(0, int(c / spec.dx) - half)
        i1 = min(n, int(c / spec.dx) + half + 2)
        prof = np.exp(-0.5 * ((s[i0:i1] - c) / sd) ** 2)
        b[i0:i1] += amp * prof[:, None] * d[None, :]
    lat, lon = destination(spec.geo_anchor, spec.heading_deg, s)
    return TrackMap(s=s, lat=lat, lon=lon, b=b)


def profile_knots(run: RunSpec) -> tuple[np.ndarray, np.ndarray]:
    """Knot times and velocities of the piecewise-linear profile."""
    v0 = run.profile[0][1] if run.v_init is None else float(run.v_init)
    t = [0.0]
    v = [v0]
    for dur, target in run.profile:
        t.append(t[-1] + dur)
        v.append(target)
    return np.array(t), np.array(v)


def trajectory(run: RunSpec, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact position and velocity of the profile at times ``t``."""
    kt, kv = profile_knots(run)
    # position at each knot: trapezoid is exact for linear legs
    kx = run.start_s + np.concatenate(([0.0], np.cumsum(0.5 * (kv[1:] + kv[:-1]) * np.diff(kt))))
    seg = np.clip(np.searchsorted(kt, t, side="right") - 1, 0, len(kt) - 2)
    tau = t - kt[seg]
    acc = (kv[seg + 1] - kv[seg]) / (kt[seg + 1] - kt[seg])
    v = kv[seg] + acc * tau
    x = kx[seg] + kv[seg] * tau + 0.5 * acc * tau * tau
    return x, v


def simulate_run(track: TrackMap, run: RunSpec) -> tuple[TimeSignal, Truth]:
    """Replay the profile over the map at ``sensor_rate``.

    Raises:
        BoundsError: the trajectory leaves ``[0, track.length]``.
    """
    dt = 1.0 / run.sensor_rate
    n = int(math.floor(run.duration * run.sensor_rate + 1e-9)) + 1
    t = dt * np.arange(n)
    x, v = trajectory(run, t)
    kt, _ = profile_knots(run)
    kx, _ = trajectory(run, kt)
    lo = min(x.min(), kx.min())
    hi = max(x.max(), kx.max())
    if lo < 0.0 or hi > track.length:
        raise BoundsError(f"trajectory spans [{lo:.3f}, {hi:.3f}] m, outside the map [0, {track.length}]")
    b, _ = lookup_fields(track, x)
    rng = np.random.Generator(np.random.Philox(run.seed))
    if run.noise_sigma > 0:
        b = b + rng.normal(0.0, run.noise_sigma, b.shape)
    v_meas = v + rng.normal(0.0, run.v_noise, v.shape) if run.v_noise > 0 else v.copy()
    lat = np.interp(x, track.s, track.lat)
    lon = np.interp(x, track.s, track.lon)
    return TimeSignal(dt=dt, t0=0.0, b=b, v=v_meas), Truth(t, x, v, lat, lon)
