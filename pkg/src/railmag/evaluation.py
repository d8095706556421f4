"""Localisation metrics: error series, convergence, and the minimum
subsequence-length study for cold-start alignment."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from railmag.align import EUCLID, subsequence_search
from railmag.errors import DomainError
from railmag.signal import TimeSignal
from railmag.spacify import SpaceSignal, integrate_positions, invert_time, spacify
from railmag.synth import RunSpec, Truth, simulate_run
from railmag.track import TrackMap, arclengths_to_geo, haversine_arrays

CONVERGENCE_RADIUS_M = 25.0
ARCLENGTH = "arclength"
GEO = "geo"


@dataclass(frozen=True, eq=False)
class ErrorSeries:
    t: np.ndarray
    err: np.ndarray
    mode: str

    def __len__(self) -> int:
        return self.t.shape[0]


@dataclass(frozen=True)
class ConvergenceReport:
    converged: bool
    t_first: float | None
    d_first: float | None
    sustained: bool
    excursions: int


def error_over_time(t, x_hat, truth: Truth, mode: str = ARCLENGTH, track: TrackMap | None = None) -> ErrorSeries:
    """Per-estimate error against truth interpolated linearly in time.

    ``geo`` mode maps both positions to lat/lon on ``track`` and measures the
    great-circle distance.

    Raises:
        CoverageError: an estimate time lies outside the truth.
    """
    t = np.asarray(t, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if t.shape != x_hat.shape:
        raise DomainError("estimate times and positions differ in length")
    x_true = truth.position_at(t)
    if mode == ARCLENGTH:
        err = np.abs(x_hat - x_true)
    elif mode == GEO:
        if track is None:
            raise DomainError("geo mode needs the track map")
        la1, lo1 = arclengths_to_geo(track, np.clip(x_hat, 0.0, track.length))
        la2, lo2 = arclengths_to_geo(track, np.clip(x_true, 0.0, track.length))
        err = np.asarray(haversine_arrays(la1, lo1, la2, lo2), dtype=np.float64)
    else:
        raise DomainError(f"unknown error mode {mode!r}")
    return ErrorSeries(t, err, mode)


def convergence_report(
    series: ErrorSeries,
    truth: Truth,
    threshold: float = CONVERGENCE_RADIUS_M,
    t_start: float | None = None,
) -> ConvergenceReport:
    """First sub-threshold time and distance, measured from ``t_start``
    (default: the first series time), plus re-exits afterwards."""
    if len(series) == 0:
        raise DomainError("empty error series")
    if t_start is None:
        t_start = float(series.t[0])
    below = series.err < threshold
    if not below.any():
        return ConvergenceReport(False, None, None, False, 0)
    k = int(np.argmax(below))
    t_hit = float(series.t[k])
    after = below[k:]
    excursions = int(np.count_nonzero(after[:-1] & ~after[1:]))
    return ConvergenceReport(
        converged=True,
        t_first=t_hit - t_start,
        d_first=truth.distance_between(t_start, t_hit),
        sustained=excursions == 0,
        excursions=excursions,
    )


# --------------------------------------------------------------------------
# L(k) study


@dataclass(frozen=True)
class LengthTrial:
    length: float
    best_rank: int | None
    errors: tuple[float, ...]


@dataclass(frozen=True)
class StudyResult:
    """``L[k]`` is the shortest length whose best hit ranks within ``k``, or
    ``None`` when no tested length suffices."""

    L: dict[int, float | None]
    trials: tuple[LengthTrial, ...]


def min_length_study(
    track: TrackMap,
    sig: TimeSignal,
    truth: Truth,
    k_values=(1, 2, 3, 4, 5),
    lengths=tuple(range(1, 201)),
    metric: str = EUCLID,
    threshold: float = CONVERGENCE_RADIUS_M,
    mode: str = GEO,
    stop_early: bool = True,
) -> StudyResult:
    """Shortest query length ``L(k)`` for which one of the best ``k`` matches
    lands within ``threshold`` of the truth.

    The run is spacified once in relative coordinates; a query of ``l``
    meters is the leading ``l`` meters of forward motion, as seen by a
    vehicle that has travelled that far since the start.  Each hit is scored
    by the distance between its implied current position (the window end)
    and the true position at the time the window closes.

    With ``stop_early`` the sweep ends once a length ranks first, because
    every ``L(k)`` is fixed from then on.
    """
    k_values = sorted(set(int(k) for k in k_values))
    if not k_values or k_values[0] < 1:
        raise DomainError("k values must be positive")
    lengths = [float(v) for v in lengths]
    if any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise DomainError("lengths must be strictly ascending")
    k_max = k_values[-1]
    space = spacify(sig, track.dx, 0.0)
    reference = track_signal(track)
    # relative arclength -> time -> true arclength
    time_of = invert_time(integrate_positions(sig.v, sig.dt, 0.0), sig.t)
    L: dict[int, float | None] = {k: None for k in k_values}
    trials = []
    for length in lengths:
        m = int(math.floor(length / track.dx + 1e-9)) + 1
        if m < 2 or m > len(space):
            continue
        query = space.window(0, m)
        hits = subsequence_search(reference, query, metric=metric, k=k_max)
        end_rel = query.x0 + (m - 1) * track.dx
        true_end = float(truth.position_at(time_of(end_rel)))
        est = np.array([h.s + (m - 1) * track.dx for h in hits])
        if mode == GEO:
            la1, lo1 = arclengths_to_geo(track, est)
            la2, lo2 = arclengths_to_geo(track, np.full(est.shape, np.clip(true_end, 0.0, track.length)))
            errs = np.asarray(haversine_arrays(la1, lo1, la2, lo2))
        else:
            errs = np.abs(est - true_end)
        ok = np.flatnonzero(errs <= threshold)
        best = int(ok[0]) + 1 if ok.size else None
        trials.append(LengthTrial(length, best, tuple(float(e) for e in errs)))
        if best is not None:
            for k in k_values:
                if best <= k and L[k] is None:
                    L[k] = length
        if stop_early and best == 1:
            break
    return StudyResult(L, tuple(trials))


def track_signal(track: TrackMap) -> SpaceSignal:
    """The map field as a :class:`~railmag.spacify.SpaceSignal` at ``s = 0``."""
    return SpaceSignal(dx=track.dx, x0=0.0, b=track.b)


def coldstart_summary(results: list[StudyResult], k_values) -> list[tuple[int, float, float, float, float, int]]:
    """Per-``k`` (mean, std, min, max, not_found) over study results."""
    rows = []
    for k in sorted(k_values):
        vals = np.array([r.L[k] for r in results if r.L.get(k) is not None], dtype=np.float64)
        nf = sum(1 for r in results if r.L.get(k) is None)
        if vals.size:
            rows.append((k, float(vals.mean()), float(vals.std()), float(vals.min()), float(vals.max()), nf))
        else:
            rows.append((k, math.nan, math.nan, math.nan, math.nan, nf))
    return rows


def random_start_runs(
    track: TrackMap,
    n_starts: int,
    seed: int,
    max_length: float = 200.0,
    v_range: tuple[float, float] = (10.0, 30.0),
    sensor_rate: float = 100.0,
    noise_sigma: float = 0.0,
):
    """Yield ``(start_s, signal, truth)`` for constant-speed runs from random
    start points, each covering ``max_length`` plus a short margin."""
    rng = np.random.Generator(np.random.Philox(seed))
    travel = max_length + 20.0
    for i in range(n_starts):
        v = float(rng.uniform(*v_range))
        start = float(rng.uniform(0.0, track.length - travel - v))
        run = RunSpec(
            profile=((travel / v, v),),
            sensor_rate=sensor_rate,
            noise_sigma=noise_sigma,
            start_s=start,
            seed=int(rng.integers(2**31)),
        )
        sig, truth = simulate_run(track, run)
        yield start, sig, truth
