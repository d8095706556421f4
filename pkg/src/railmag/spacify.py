"""Time-to-space transform of a magnetic stream.

Velocity is integrated to position by a left-endpoint cumulative sum, time is
recovered as a piecewise-linear function of position by reverse
interpolation, and the field is resampled on a uniform arclength grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from railmag.errors import DomainError, EmptyOutputError, LengthMismatchError, MonotonicityError
from railmag.signal import TimeSignal

# Tolerance (in grid steps) when deciding whether the last grid point is covered.
_GRID_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class SpaceSignal:
    """Uniformly arclength-sampled field.

    ``x0`` is the arclength of ``b[0]`` in whatever frame the producer used;
    for live windows it is relative and carries an unknown offset.
    """

    dx: float
    x0: float
    b: np.ndarray

    def __post_init__(self):
        b = np.ascontiguousarray(self.b, dtype=np.float64)
        if b.ndim != 2 or b.shape[1] != 3:
            raise DomainError(f"field samples must have shape (m, 3), got {b.shape}")
        if not (self.dx > 0 and np.isfinite(self.dx)):
            raise DomainError(f"dx must be positive, got {self.dx}")
        if not np.all(np.isfinite(b)):
            raise DomainError("non-finite field samples")
        object.__setattr__(self, "b", b)

    def __len__(self) -> int:
        return self.b.shape[0]

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(len(self))

    @property
    def span(self) -> float:
        return (len(self) - 1) * self.dx

    def tail(self, m: int) -> SpaceSignal:
        """The last ``m`` samples."""
        start = len(self) - m
        return SpaceSignal(self.dx, self.x0 + start * self.dx, self.b[start:])

    def window(self, start: int, stop: int) -> SpaceSignal:
        return SpaceSignal(self.dx, self.x0 + start * self.dx, self.b[start:stop])


def integrate_positions(v, dt: float, x0: float) -> np.ndarray:
    """``x_j = x0 + dt * sum(v[:j+1])`` for every sample ``j``."""
    v = np.asarray(v, dtype=np.float64)
    return x0 + dt * np.cumsum(v)


class TimeOfPosition:
    """Piecewise-linear inverse ``f(x) -> t`` through the nodes ``(x_i, t_i)``."""

    def __init__(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        if x.shape != t.shape or x.ndim != 1:
            raise LengthMismatchError(f"position and time sequences differ: {x.shape} vs {t.shape}")
        if x.shape[0] < 2:
            raise MonotonicityError("need at least two nodes to invert")
        bad = np.flatnonzero(np.diff(x) <= 0)
        if bad.size:
            raise MonotonicityError(f"positions not strictly increasing at index {int(bad[0]) + 1}")
        self.x = x
        self.t = t

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.x[0]), float(self.x[-1])

    def __call__(self, q):
        q = np.asarray(q, dtype=np.float64)
        if np.any((q < self.x[0]) | (q > self.x[-1])):
            raise DomainError(f"query outside [{self.x[0]}, {self.x[-1]}]")
        return np.interp(q, self.x, self.t)


def invert_time(x, t) -> TimeOfPosition:
    return TimeOfPosition(x, t)


def _interp_field(sig: TimeSignal, tq: np.ndarray) -> np.ndarray:
    # linear interpolation on the uniform time grid, exact at sample times
    u = (tq - sig.t0) / sig.dt
    k = np.rint(u)
    on_grid = np.abs(u - k) <= 1e-9
    i = np.where(on_grid, k, np.floor(u)).astype(np.int64)
    i = np.clip(i, 0, len(sig) - 1)
    frac = np.where(on_grid, 0.0, u - i)
    j = np.minimum(i + 1, len(sig) - 1)
    return sig.b[i] + frac[:, None] * (sig.b[j] - sig.b[i])


def spacify(sig: TimeSignal, dx: float, x0: float = 0.0) -> SpaceSignal:
    """Resample a forward-moving stream on the arclength grid ``x0 + i*dx``.

    Positions come from :func:`integrate_positions` with the same ``x0``, so
    the first sample sits at ``x0 + dt*v[0]``; the output keeps every grid
    point inside the covered range ``[x_first, x_last]``.

    Raises:
        DomainError: the signal has no velocity channel.
        MonotonicityError: the velocity is not strictly positive.
        EmptyOutputError: fewer than two grid points are covered.
    """
    if sig.v is None:
        raise DomainError("spacify needs a velocity channel")
    if not dx > 0:
        raise DomainError(f"dx must be positive, got {dx}")
    x = integrate_positions(sig.v, sig.dt, x0)
    f = invert_time(x, sig.t)
    lo, hi = f.domain
    if hi - lo < 2 * dx:
        raise EmptyOutputError(f"segment spans {hi - lo:.4g} m, less than 2*dx = {2 * dx:g} m")
    i_first = math.ceil((lo - x0) / dx - _GRID_EPS)
    i_last = math.floor((hi - x0) / dx + _GRID_EPS)
    if i_last - i_first + 1 < 2:
        raise EmptyOutputError("fewer than two grid points covered")
    start = x0 + dx * i_first
    out = SpaceSignal(dx=float(dx), x0=float(start), b=np.zeros((i_last - i_first + 1, 3)))
    tq = f(np.clip(out.x, lo, hi))
    return SpaceSignal(dx=out.dx, x0=out.x0, b=_interp_field(sig, tq))
