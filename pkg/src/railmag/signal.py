"""Time-domain magnetic streams, dual-sensor velocity estimation and motion
segmentation."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from railmag.errors import DegenerateSignalError, DomainError, LengthMismatchError, ParseError, SpacingError

SIGNAL_HEADER = ("t_s", "bx", "by", "bz")

DEFAULT_V_MIN = 0.5
MIN_RUN_SECONDS = 0.5


@dataclass(frozen=True, eq=False)
class TimeSignal:
    """Uniformly sampled 3-axis magnetic stream.

    Attributes:
        dt: sample interval in seconds.
        t0: time of the first sample in seconds.
        b: field samples, shape (n, 3).
        v: optional velocity channel in m/s, shape (n,).
    """

    dt: float
    t0: float
    b: np.ndarray
    v: np.ndarray | None = None

    def __post_init__(self):
        b = np.ascontiguousarray(self.b, dtype=np.float64)
        if b.ndim != 2 or b.shape[1] != 3:
            raise ParseError(f"field samples must have shape (n, 3), got {b.shape}")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise DomainError(f"sample interval must be positive, got {self.dt}")
        if not np.all(np.isfinite(b)):
            raise DomainError("signal contains non-finite field samples")
        object.__setattr__(self, "b", b)
        if self.v is not None:
            v = np.ascontiguousarray(self.v, dtype=np.float64)
            if v.shape != (b.shape[0],):
                raise LengthMismatchError(f"velocity channel length {v.shape} != {b.shape[0]}")
            if not np.all(np.isfinite(v)):
                raise DomainError("velocity channel contains non-finite values")
            object.__setattr__(self, "v", v)

    def __len__(self) -> int:
        return self.b.shape[0]

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    def slice(self, start: int, stop: int) -> TimeSignal:
        v = None if self.v is None else self.v[start:stop]
        return TimeSignal(self.dt, self.t0 + start * self.dt, self.b[start:stop], v)


class Direction(enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    STANDSTILL = "standstill"


@dataclass(frozen=True)
class MotionSegment:
    """Half-open sample range ``[start_index, end_index)`` with one direction."""

    start_index: int
    end_index: int
    direction: Direction

    def __post_init__(self):
        if self.start_index >= self.end_index:
            raise DomainError("empty motion segment")

    def __len__(self) -> int:
        return self.end_index - self.start_index


def load_signal(path) -> TimeSignal:
    """Read a time-signal CSV (``t_s,bx,by,bz[,v_mps]``)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        header = tuple(h.strip() for h in header) if header else None
        if header not in (SIGNAL_HEADER, SIGNAL_HEADER + ("v_mps",)):
            raise ParseError(f"{path}: expected header t_s,bx,by,bz[,v_mps], got {header}")
        ncol = len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != ncol:
                raise ParseError(f"{path}:{lineno}: expected {ncol} fields, got {len(row)}")
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    if len(rows) < 2:
        raise ParseError(f"{path}: need at least 2 samples")
    data = np.array(rows, dtype=np.float64)
    t = data[:, 0]
    dt = (t[-1] - t[0]) / (len(t) - 1)
    if dt <= 0:
        raise SpacingError(f"{path}: time stamps must increase")
    dev = np.abs(t - (t[0] + dt * np.arange(len(t))))
    # 1e-6 dt plus the print precision of |t|
    bad = np.flatnonzero(dev > 1e-6 * dt + 1e-11 * np.abs(t))
    if bad.size:
        raise SpacingError(f"{path}:{int(bad[0]) + 2}: non-uniform time spacing")
    v = data[:, 4] if ncol == 5 else None
    return TimeSignal(dt=float(dt), t0=float(t[0]), b=data[:, 1:4], v=v)


def save_signal(sig: TimeSignal, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        head = SIGNAL_HEADER + (("v_mps",) if sig.v is not None else ())
        fh.write(",".join(head) + "\n")
        t = sig.t
        if sig.v is None:
            for ti, (bx, by, bz) in zip(t, sig.b):
                fh.write(f"{ti:.12g},{bx:.9g},{by:.9g},{bz:.9g}\n")
        else:
            for ti, (bx, by, bz), vi in zip(t, sig.b, sig.v):
                fh.write(f"{ti:.12g},{bx:.9g},{by:.9g},{bz:.9g},{vi:.9g}\n")


def _normalized_xcorr(a: np.ndarray, b: np.ndarray, max_lag: int) -> np.ndarray:
    """Pearson correlation of ``b[i + k]`` with ``a[i]`` for lags ``k = 0..max_lag``."""
    n = a.shape[0]
    raw = sps.correlate(b, a, mode="full", method="auto")
    lags = np.arange(max_lag + 1)
    # raw[n - 1 + k] = sum_i b[i + k] * a[i]; pairs a[0 : n-k], b[k : n]
    sxy = raw[n - 1 + lags]
    cnt = n - lags
    ca = np.concatenate(([0.0], np.cumsum(a)))
    ca2 = np.concatenate(([0.0], np.cumsum(a * a)))
    cb = np.concatenate(([0.0], np.cumsum(b)))
    cb2 = np.concatenate(([0.0], np.cumsum(b * b)))
    sa, sa2 = ca[cnt], ca2[cnt]
    sb, sb2 = cb[n] - cb[lags], cb2[n] - cb2[lags]
    cov = sxy - sa * sb / cnt
    va = sa2 - sa * sa / cnt
    vb = sb2 - sb * sb / cnt
    ok = (va > 0) & (vb > 0)
    return np.where(ok, cov / np.sqrt(np.where(ok, va * vb, 1.0)), 0.0)


def estimate_delay(m1: TimeSignal, m2: TimeSignal, window: int) -> float:
    """Delay of the trailing sensor ``m2`` behind ``m1`` in seconds.

    Cross-correlates the field magnitudes of the last ``window`` samples at
    non-negative lags up to ``window // 2`` and refines the peak with a
    parabola through its neighbours.
    """
    if window < 8:
        raise DomainError("correlation window must hold at least 8 samples")
    if not np.isclose(m1.dt, m2.dt, rtol=1e-9, atol=0.0):
        raise DomainError(f"signals have different sample intervals: {m1.dt} vs {m2.dt}")
    if len(m1) < window or len(m2) < window:
        raise DomainError(f"signals shorter than the {window}-sample window")
    a = np.linalg.norm(m1.b[-window:], axis=1)
    b = np.linalg.norm(m2.b[-window:], axis=1)
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        raise DegenerateSignalError("constant window, nothing to correlate")
    max_lag = window // 2
    cc = _normalized_xcorr(a, b, max_lag)
    j = int(np.argmax(cc))
    k = float(j)
    if 0 < j < max_lag:
        y0, y1, y2 = cc[j - 1], cc[j], cc[j + 1]
        denom = y0 - 2.0 * y1 + y2
        if denom < 0:
            k += 0.5 * (y0 - y2) / denom
    return k * m1.dt


def delay_to_velocity(tau: float, d: float) -> float:
    """Speed from the inter-sensor delay: ``d / tau``."""
    if not tau > 0:
        raise DomainError(f"delay must be positive, got {tau}")
    if not d > 0:
        raise DomainError(f"sensor separation must be positive, got {d}")
    return d / tau


def _classify(v: np.ndarray, v_min: float) -> np.ndarray:
    code = np.zeros(v.shape[0], dtype=np.int8)
    code[v > v_min] = 1
    code[v < -v_min] = -1
    return code


_CODE = {1: Direction.FORWARD, -1: Direction.BACKWARD, 0: Direction.STANDSTILL}


def segment_motion(v, dt: float, v_min: float = DEFAULT_V_MIN) -> list[MotionSegment]:
    """Split a velocity sequence into forward/backward/standstill runs.

    Runs shorter than half a second are absorbed by their longer neighbour so
    that sensor chatter around the threshold does not fragment the output.
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DomainError("velocity contains non-finite values")
    n = v.shape[0]
    if n == 0:
        return []
    code = _classify(v, v_min)
    change = np.flatnonzero(np.diff(code)) + 1
    starts = [0, *change.tolist()]
    ends = [*change.tolist(), n]
    runs = [[s, e, int(code[s])] for s, e in zip(starts, ends)]

    min_len = max(1, int(round(MIN_RUN_SECONDS / dt)))
    while len(runs) > 1:
        lengths = [e - s for s, e, _ in runs]
        i = min(range(len(runs)), key=lambda r: (lengths[r], r))
        if lengths[i] >= min_len:
            break
        if i == 0:
            target = 1
        elif i == len(runs) - 1:
            target = i - 1
        else:
            target = i - 1 if lengths[i - 1] >= lengths[i + 1] else i + 1
        lo, hi = sorted((i, target))
        runs[lo:hi + 1] = [[runs[lo][0], runs[hi][1], runs[target][2]]]
        # fuse neighbours that now share a direction
        merged = [runs[0]]
        for r in runs[1:]:
            if r[2] == merged[-1][2]:
                merged[-1][1] = r[1]
            else:
                merged.append(r)
        runs = merged
    return [MotionSegment(s, e, _CODE[c]) for s, e, c in runs]
