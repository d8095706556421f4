"""Sequence alignment: same-length distances lifted to a sliding-window search.

Both distances work on raw 3-vector samples.  ``dtw_dist`` minimises the sum
of squared per-step Euclidean costs over monotone warping paths and returns
its square root, so it never exceeds ``euclid_dist`` on equal lengths.

The window search is exact.  Windows are visited in order of a lower bound
and abandoned as soon as they provably cannot enter the result; a final check
falls back to exhaustive evaluation whenever pruning could have changed the
answer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from railmag.errors import DomainError, InfeasibleBandError, LengthMismatchError, QueryTooLongError
from railmag.spacify import SpaceSignal

EUCLID = "euclid"
DTW = "dtw"
METRICS = (EUCLID, DTW)

# Relative slack on abandonment cut-offs so float round-off never drops a tie.
_CUTOFF_SLACK = 1.0 + 1e-12


@dataclass(frozen=True)
class MatchCandidate:
    index: int
    s: float
    score: float
    rank: int


def _as_field(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim == 1 and a.shape[0] == 3:
        a = a.reshape(1, 3)
    if a.ndim != 2 or a.shape[1] != 3:
        raise DomainError(f"expected a sequence of 3-vectors, got shape {a.shape}")
    return a


# --------------------------------------------------------------------------
# numba kernels


@nb.njit(cache=True)
def _sq(a, i, b, j):
    d0 = a[i, 0] - b[j, 0]
    d1 = a[i, 1] - b[j, 1]
    d2 = a[i, 2] - b[j, 2]
    return d0 * d0 + d1 * d1 + d2 * d2


@nb.njit(cache=True)
def _euclid_sq(a, b, cutoff):
    acc = 0.0
    for i in range(a.shape[0]):
        acc += _sq(a, i, b, i)
        if acc > cutoff:
            return np.inf
    return acc


@nb.njit(cache=True)
def _dtw_sq(a, b, r, cutoff, tail_lb):
    """Banded DTW on squared costs with early abandoning.

    ``tail_lb[i]`` lower-bounds the cost still to be paid in rows ``>= i``;
    it must have length ``len(a) + 1``.  Returns ``inf`` once the bound
    exceeds ``cutoff``.
    """
    m = a.shape[0]
    n = b.shape[0]
    prev = np.full(n, np.inf)
    cur = np.full(n, np.inf)
    for i in range(m):
        jlo = max(0, i - r)
        jhi = min(n - 1, i + r)
        rowmin = np.inf
        for j in range(jlo, jhi + 1):
            c = _sq(a, i, b, j)
            if i == 0 and j == 0:
                best = 0.0
            else:
                best = np.inf
                if i > 0:
                    best = prev[j]
                    if j > 0 and prev[j - 1] < best:
                        best = prev[j - 1]
                if j > jlo and cur[j - 1] < best:
                    best = cur[j - 1]
            val = best + c
            cur[j] = val
            if val < rowmin:
                rowmin = val
        if rowmin + tail_lb[i + 1] > cutoff:
            return np.inf
        tmp = prev
        prev = cur
        cur = tmp
    return prev[n - 1]


@nb.njit(cache=True)
def _query_envelope(q, r):
    m = q.shape[0]
    lo = np.empty((m, 3))
    hi = np.empty((m, 3))
    for i in range(m):
        a = max(0, i - r)
        b = min(m - 1, i + r)
        for d in range(3):
            mn = q[a, d]
            mx = q[a, d]
            for j in range(a + 1, b + 1):
                v = q[j, d]
                if v < mn:
                    mn = v
                if v > mx:
                    mx = v
            lo[i, d] = mn
            hi[i, d] = mx
    return lo, hi


@nb.njit(cache=True)
def _box_sq(ref, k, lo, hi, i):
    acc = 0.0
    for d in range(3):
        v = ref[k, d]
        if v < lo[i, d]:
            e = lo[i, d] - v
            acc += e * e
        elif v > hi[i, d]:
            e = v - hi[i, d]
            acc += e * e
    return acc


@nb.njit(cache=True)
def _lb_all(ref_t, lo, hi):
    """Envelope lower bound of every window, vectorised over windows."""
    m = lo.shape[0]
    nw = ref_t.shape[1] - m + 1
    out = np.zeros(nw)
    for i in range(m):
        for d in range(3):
            row = ref_t[d, i:i + nw]
            lo_v = lo[i, d]
            hi_v = hi[i, d]
            for w in range(nw):
                v = row[w]
                e = lo_v - v if v < lo_v else (v - hi_v if v > hi_v else 0.0)
                out[w] += e * e
    return out


@nb.njit(cache=True)
def _tail_lb(ref, w, lo, hi, out):
    m = lo.shape[0]
    out[m] = 0.0
    for i in range(m - 1, -1, -1):
        out[i] = out[i + 1] + _box_sq(ref, w + i, lo, hi, i)


@nb.njit(cache=True)
def _batch_row(cur, prev, ref_t, q, i, r, w0, nb_):
    # one DP row for nb_ consecutive windows; band offset d = j - i + r is
    # stored at row d + 1, rows 0 and 2r + 2 are +inf padding
    m = q.shape[0]
    dlo = max(0, r - i)
    dhi = min(2 * r, m - 1 - i + r)
    for b in range(nb_):
        cur[dlo, b] = np.inf
        cur[dhi + 2, b] = np.inf
    base = w0 + i
    r0 = ref_t[0, base:base + nb_]
    r1 = ref_t[1, base:base + nb_]
    r2 = ref_t[2, base:base + nb_]
    for d in range(dlo, dhi + 1):
        j = i + d - r
        q0 = q[j, 0]
        q1 = q[j, 1]
        q2 = q[j, 2]
        if i == 0 and j == 0:
            for b in range(nb_):
                x0 = r0[b] - q0
                x1 = r1[b] - q1
                x2 = r2[b] - q2
                cur[d + 1, b] = 0.0 + (x0 * x0 + x1 * x1 + x2 * x2)
        else:
            for b in range(nb_):
                x0 = r0[b] - q0
                x1 = r1[b] - q1
                x2 = r2[b] - q2
                c = x0 * x0 + x1 * x1 + x2 * x2
                a1 = prev[d + 2, b]
                a2 = prev[d + 1, b]
                a3 = cur[d, b]
                best = a1 if a1 < a2 else a2
                best = best if best < a3 else a3
                cur[d + 1, b] = best + c


@nb.njit(cache=True)
def _batch_all_above(buf, r, nb_, cutoff):
    for b in range(nb_):
        for t in range(1, 2 * r + 2):
            if buf[t, b] <= cutoff:
                return False
    return True


@nb.njit(cache=True)
def _batch_dtw(ref_t, q, w0, nb_, r, cutoff, out, buf_a, buf_b):
    """Banded DTW of windows ``w0 .. w0+nb_-1`` against ``q`` in lock-step.

    Bit-identical to :func:`_dtw_sq`.  Leaves ``inf`` in ``out`` when every
    window in the batch provably exceeds ``cutoff``.
    """
    m = q.shape[0]
    buf_a[:, :nb_] = np.inf
    buf_b[:, :nb_] = np.inf
    i = 0
    while i < m:
        _batch_row(buf_a, buf_b, ref_t, q, i, r, w0, nb_)
        if i + 1 < m:
            _batch_row(buf_b, buf_a, ref_t, q, i + 1, r, w0, nb_)
        if i % 16 == 14 and i + 2 < m and _batch_all_above(buf_b, r, nb_, cutoff):
            out[:nb_] = np.inf
            return
        i += 2
    last = buf_a if m % 2 == 1 else buf_b
    for b in range(nb_):
        out[b] = last[r + 1, b]


@nb.njit(cache=True)
def _nms(scores, idxs, cnt, k, sep):
    """Greedy separation-constrained top-k over the first ``cnt`` entries.

    Order is ascending score, ties by ascending index.  Returns positions
    into ``scores``/``idxs`` of the picks and their count.
    """
    o1 = np.argsort(idxs[:cnt], kind="mergesort")
    o2 = np.argsort(scores[:cnt][o1], kind="mergesort")
    order = o1[o2]
    picks = np.empty(k, dtype=np.int64)
    npick = 0
    for p in order:
        ok = True
        for q in range(npick):
            if abs(idxs[p] - idxs[picks[q]]) < sep:
                ok = False
                break
        if ok:
            picks[npick] = p
            npick += 1
            if npick == k:
                break
    return picks, npick


@nb.njit(cache=True)
def _kth_pick(scores, idxs, cnt, k, sep):
    picks, npick = _nms(scores, idxs, cnt, k, sep)
    if npick < k:
        return np.inf
    return scores[picks[npick - 1]]


_BATCH = 128
# LB-ordered windows scored one at a time before switching to batched sweeps.
_SCALAR_BUDGET = 2048


@nb.njit(cache=True)
def _store(s2, w, scores, idxs, cnt, thr, k, sep, state):
    """Record a window and tighten the threshold; ``state`` holds
    [pending, exact] counters."""
    scores[cnt] = s2
    idxs[cnt] = w
    cnt += 1
    state[0] += 1
    # while unbounded, amortise the re-pick over growing batches
    if thr < np.inf or state[0] * 8 >= cnt:
        state[0] = 0
        new = _kth_pick(scores, idxs, cnt, k, sep)
        if new > thr:
            state[1] = 0
        if new < thr:
            thr = new
            keep = 0
            for t in range(cnt):
                if scores[t] <= thr:
                    scores[keep] = scores[t]
                    idxs[keep] = idxs[t]
                    keep += 1
            cnt = keep
    return cnt, thr


@nb.njit(cache=True)
def _pruned_scan(ref, ref_t, q, metric, r, k, sep, order, lb, lo, hi):
    """Score every window that can still enter the top-k.

    ``metric`` is 0 for Euclidean and 1 for DTW.  Returns the retained
    (squared scores, indices, count) and whether pruning stayed sound (the
    running threshold never increased).
    """
    m = q.shape[0]
    nw = order.shape[0]
    scores = np.empty(nw)
    idxs = np.empty(nw, dtype=np.int64)
    cnt = 0
    thr = np.inf
    state = np.array([0, 1])
    if metric == 0:
        for w in range(nw):
            s2 = _euclid_sq(ref[w:w + m], q, thr * _CUTOFF_SLACK)
            if s2 <= thr:
                cnt, thr = _store(s2, w, scores, idxs, cnt, thr, k, sep, state)
        return scores, idxs, cnt, state[1] == 1

    visited = np.zeros(nw, dtype=np.bool_)
    tail = np.zeros(m + 1)
    done = True
    for p in range(nw):
        w = order[p]
        if lb[w] > thr * _CUTOFF_SLACK:
            break
        if p >= _SCALAR_BUDGET:
            done = False
            break
        visited[w] = True
        _tail_lb(ref, w, lo, hi, tail)
        s2 = _dtw_sq(ref[w:w + m], q, r, thr * _CUTOFF_SLACK, tail)
        if s2 <= thr:
            cnt, thr = _store(s2, w, scores, idxs, cnt, thr, k, sep, state)
    if done:
        return scores, idxs, cnt, state[1] == 1

    out = np.empty(_BATCH)
    buf_a = np.empty((2 * r + 3, _BATCH))
    buf_b = np.empty((2 * r + 3, _BATCH))
    for w0 in range(0, nw, _BATCH):
        nb_ = min(_BATCH, nw - w0)
        cutoff = thr * _CUTOFF_SLACK
        todo = False
        for b in range(nb_):
            if not visited[w0 + b] and lb[w0 + b] <= cutoff:
                todo = True
                break
        if not todo:
            continue
        _batch_dtw(ref_t, q, w0, nb_, r, cutoff, out, buf_a, buf_b)
        for b in range(nb_):
            w = w0 + b
            if visited[w] or lb[w] > cutoff:
                continue
            if out[b] <= thr:
                cnt, thr = _store(out[b], w, scores, idxs, cnt, thr, k, sep, state)
    return scores, idxs, cnt, state[1] == 1


@nb.njit(cache=True)
def _all_scores(ref, q, metric, r):
    m = q.shape[0]
    nw = ref.shape[0] - m + 1
    out = np.empty(nw)
    tail = np.zeros(m + 1)
    for w in range(nw):
        if metric == 0:
            out[w] = _euclid_sq(ref[w:w + m], q, np.inf)
        else:
            out[w] = _dtw_sq(ref[w:w + m], q, r, np.inf, tail)
    return out


# --------------------------------------------------------------------------
# public API


def euclid_dist(a, b) -> float:
    """Square root of the summed squared 3-vector differences."""
    a = _as_field(a)
    b = _as_field(b)
    if a.shape != b.shape:
        raise LengthMismatchError(f"sequences differ in length: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 1:
        raise LengthMismatchError("empty sequences")
    return math.sqrt(_euclid_sq(a, b, np.inf))


def dtw_dist(a, b, band: int | None = None) -> float:
    """Dynamic time warping distance.

    Steps (1,0), (0,1), (1,1); both endpoints matched.  ``band`` is an
    optional Sakoe-Chiba radius ``|i - j| <= band`` in samples.
    """
    a = _as_field(a)
    b = _as_field(b)
    m, n = a.shape[0], b.shape[0]
    if m < 1 or n < 1:
        raise LengthMismatchError("empty sequences")
    if band is None:
        r = max(m, n)
    else:
        r = int(band)
        if r < abs(m - n):
            raise InfeasibleBandError(f"band {r} cannot connect lengths {m} and {n}")
    return math.sqrt(_dtw_sq(a, b, r, np.inf, np.zeros(m + 1)))


def default_band(m: int) -> int:
    """Sakoe-Chiba radius used by windowed DTW: 10% of the query length."""
    return int(round(0.1 * m))


def _search_arrays(ref: np.ndarray, q: np.ndarray, metric: str, k: int, sep: int, band: int):
    m = q.shape[0]
    nw = ref.shape[0] - m + 1
    code = METRICS.index(metric)
    ref_t = np.ascontiguousarray(ref.T)
    if code == 1:
        lo, hi = _query_envelope(q, band)
        lb = _lb_all(ref_t, lo, hi)
        order = np.argsort(lb, kind="stable")
    else:
        lo = hi = np.zeros((m, 3))
        lb = np.zeros(nw)
        order = np.arange(nw, dtype=np.int64)
    scores, idxs, cnt, exact = _pruned_scan(ref, ref_t, q, code, band, k, sep, order, lb, lo, hi)
    picks, npick = _nms(scores, idxs, cnt, k, sep)
    if not exact:
        scores = _all_scores(ref, q, code, band)
        idxs = np.arange(nw, dtype=np.int64)
        picks, npick = _nms(scores, idxs, nw, k, sep)
    return [(int(idxs[p]), float(scores[p])) for p in picks[:npick]]


def subsequence_search(
    reference: SpaceSignal,
    query: SpaceSignal,
    metric: str = DTW,
    k: int = 1,
    min_sep: float | None = None,
    band: int | None = None,
) -> list[MatchCandidate]:
    """Best ``k`` windows of ``reference`` matching ``query``.

    Every start ``i`` in ``0..n-m`` is scored with ``metric``; the lowest
    scores are taken greedily subject to a pairwise start separation of at
    least ``min_sep`` meters (default: the query length ``m*dx``).  Equal
    scores resolve to the lower index.

    Args:
        band: DTW Sakoe-Chiba radius in samples; defaults to 10% of ``m``.
    """
    if metric not in METRICS:
        raise DomainError(f"unknown metric {metric!r}; expected one of {METRICS}")
    n, m = len(reference), len(query)
    if m > n:
        raise QueryTooLongError(f"query of {m} samples exceeds reference of {n}")
    if m < 2:
        raise DomainError("query needs at least 2 samples")
    if not math.isclose(reference.dx, query.dx, rel_tol=1e-9):
        raise DomainError(f"reference dx {reference.dx} != query dx {query.dx}")
    if k < 1:
        raise DomainError("k must be at least 1")
    if min_sep is None:
        min_sep = m * reference.dx
    if min_sep < 0:
        raise DomainError("min_sep must be non-negative")
    sep = max(0, math.ceil(min_sep / reference.dx - 1e-9))
    r = default_band(m) if band is None else int(band)
    if r < 0:
        raise InfeasibleBandError("band must be non-negative")
    hits = _search_arrays(reference.b, query.b, metric, int(k), sep, r)
    return [
        MatchCandidate(index=i, s=reference.x0 + i * reference.dx, score=math.sqrt(s2), rank=rank)
        for rank, (i, s2) in enumerate(hits, start=1)
    ]


def window_scores(reference: SpaceSignal, query: SpaceSignal, metric: str = DTW, band: int | None = None) -> np.ndarray:
    """Distance of every reference window to the query (no pruning)."""
    m = len(query)
    r = default_band(m) if band is None else int(band)
    return np.sqrt(_all_scores(reference.b, query.b, METRICS.index(metric), r))
