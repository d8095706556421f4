"""Cold-start plus tracking: align a trailing window against the map, race
one particle filter per candidate, and track with the survivor until it
diverges.

The orchestrator replays a recorded stream epoch by epoch, so alignment
latency never drops measurements: the filters simply consume the buffered
epochs as fast as they can.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from railmag.align import DTW, METRICS, MatchCandidate, subsequence_search
from railmag.errors import DomainError, FilterCollapse
from railmag.evaluation import track_signal
from railmag.pf import Epochs, FilterState, PfConfig, StateEstimate, init_local, measurement_epochs, step_evidence
from railmag.signal import TimeSignal
from railmag.spacify import SpaceSignal, integrate_positions, spacify
from railmag.track import TrackMap

CANDIDATE_SET = "candidate-set"
FILTERS_SPAWNED = "filters-spawned"
FILTER_KILLED = "filter-killed"
CONVERGED = "converged"
DIVERGED = "diverged"
ERROR_RESTART = "error-restart"


@dataclass(frozen=True)
class HybridConfig:
    """Orchestration settings.

    ``evidence_margin`` (nats) additionally retires a burn-phase filter whose
    accumulated measurement evidence trails the best filter by more than the
    margin; ``inf`` disables the rule.
    """

    n: float = 100.0
    ell: int = 100
    var_threshold: float = 50.0**2
    pf: PfConfig = field(default_factory=PfConfig)
    align_metric: str = DTW
    v_start_min: float = 10.0
    n_particles: int = 10000
    v_spread: float = 1.0
    coincide_radius: float = 25.0
    evidence_margin: float = 30.0

    def __post_init__(self):
        if not self.n > 0:
            raise DomainError("lookback n must be positive")
        if self.ell < 1:
            raise DomainError("ell must be at least 1")
        if not self.var_threshold > 0:
            raise DomainError("var_threshold must be positive")
        if self.align_metric not in METRICS:
            raise DomainError(f"unknown metric {self.align_metric!r}")
        if self.n_particles < 1:
            raise DomainError("n_particles must be at least 1")
        if not self.evidence_margin > 0:
            raise DomainError("evidence_margin must be positive")


@dataclass(frozen=True)
class LocalisationEvent:
    t: float
    kind: str
    detail: dict

    def format_detail(self) -> str:
        parts = []
        for k, v in self.detail.items():
            if isinstance(v, (list, tuple)):
                v = " ".join(_fmt(x) for x in v)
            else:
                v = _fmt(v)
            parts.append(f"{k}={v}")
        return ";".join(parts)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


@dataclass
class Localisation:
    """Output of :func:`localise`: time-stamped estimates and the event log."""

    t: list = field(default_factory=list)
    estimates: list = field(default_factory=list)
    events: list = field(default_factory=list)

    def emit(self, t: float, est: StateEstimate):
        self.t.append(t)
        self.estimates.append(est)

    def event(self, t: float, kind: str, **detail):
        self.events.append(LocalisationEvent(float(t), kind, detail))


def align_top3(track: TrackMap, window: SpaceSignal, cfg: HybridConfig) -> list[MatchCandidate]:
    """Three best separated placements of ``window`` on the map."""
    if len(window) < 2:
        raise DomainError("window needs at least 2 samples")
    if not math.isclose(window.dx, track.dx, rel_tol=1e-9):
        raise DomainError(f"window dx {window.dx} != map dx {track.dx}")
    return subsequence_search(
        track_signal(track), window, metric=cfg.align_metric, k=3, min_sep=len(window) * track.dx
    )


def _spawn_seed(seed: int, attempt: int, j: int) -> int:
    return int(np.random.SeedSequence((int(seed), attempt, j)).generate_state(1)[0])


@dataclass
class _Racer:
    rank: int
    state: FilterState
    est: StateEstimate | None = None
    evidence: float = 0.0
    alive: bool = True


@dataclass(frozen=True)
class Placement:
    """A candidate translated to the vehicle's position at the epoch time."""

    candidate: MatchCandidate
    x_now: float


SURVIVOR = "survivor"
ERROR = "error"


def get_pf(
    track: TrackMap,
    placements: list[Placement],
    epochs: Epochs,
    k0: int,
    cfg: HybridConfig,
    seed: int,
    attempt: int,
    log: Localisation,
):
    """Race one filter per placement from epoch ``k0`` on.

    Filters are initialised at epoch ``k0`` and step in lock-step on the
    following epochs.  A filter is retired when its position variance
    exceeds ``var_threshold``, when it collapses, or (optionally) when its
    evidence falls ``evidence_margin`` behind the leader.  Returns
    ``(outcome, filter_state, estimate, k)`` where ``k`` is the last epoch
    consumed and ``outcome`` is ``SURVIVOR``, ``ERROR`` or ``None`` when the
    stream ran out.
    """
    if not placements:
        raise DomainError("get_pf needs at least one candidate")
    if k0 >= len(epochs):
        return None, None, None, k0
    v0 = float(epochs.v[k0]) if epochs.v is not None else 0.0
    racers = []
    for j, p in enumerate(placements):
        st = init_local(
            p.x_now,
            0.5 * cfg.n,
            v0,
            cfg.v_spread,
            cfg.n_particles,
            _spawn_seed(seed, attempt, j),
            bounds=(0.0, track.length),
        )
        racers.append(_Racer(p.candidate.rank, st))
    log.event(
        epochs.t[k0],
        FILTERS_SPAWNED,
        count=len(racers),
        x0=[p.x_now for p in placements],
        v0=v0,
    )
    k = k0
    for it in range(1, cfg.ell + 1):
        k = k0 + it
        if k >= len(epochs):
            return None, None, None, len(epochs) - 1
        for r in racers:
            if not r.alive:
                continue
            try:
                r.state, r.est, logz = step_evidence(r.state, track, epochs.z[k], cfg.pf)
                r.evidence += logz
            except FilterCollapse:
                r.alive = False
                log.event(epochs.t[k], FILTER_KILLED, rank=r.rank, reason="collapse")
        for r in racers:
            if r.alive and r.est.var_x > cfg.var_threshold:
                r.alive = False
                log.event(epochs.t[k], FILTER_KILLED, rank=r.rank, reason="variance", var=r.est.var_x)
        alive = [r for r in racers if r.alive]
        if alive and math.isfinite(cfg.evidence_margin):
            lead = max(r.evidence for r in alive)
            for r in alive:
                if lead - r.evidence > cfg.evidence_margin:
                    r.alive = False
                    log.event(epochs.t[k], FILTER_KILLED, rank=r.rank, reason="evidence", gap=lead - r.evidence)
            alive = [r for r in racers if r.alive]
        if not alive:
            log.event(epochs.t[k], ERROR_RESTART, reason="all filters diverged", hint="consider increasing n")
            return ERROR, None, None, k
        if len(alive) == 1 and len(racers) > 1:
            return SURVIVOR, alive[0].state, alive[0].est, k
    alive = [r for r in racers if r.alive]
    if len(alive) == 1:
        return SURVIVOR, alive[0].state, alive[0].est, k
    best = min(alive, key=lambda r: r.rank)
    if all(abs(r.est.x_hat - best.est.x_hat) <= cfg.coincide_radius for r in alive):
        return SURVIVOR, best.state, best.est, k
    log.event(
        epochs.t[k],
        ERROR_RESTART,
        reason="filters disagree after burn phase",
        x_hat=[r.est.x_hat for r in alive],
        hint="consider decreasing var_threshold or increasing ell",
    )
    return ERROR, None, None, k


class _Trailing:
    """Forward-motion bookkeeping over the raw stream."""

    def __init__(self, sig: TimeSignal, v_start_min: float):
        if sig.v is None:
            raise DomainError("localisation needs a velocity channel")
        self.sig = sig
        ok = sig.v >= v_start_min
        n = len(sig)
        # run_start[i]: first index of the qualifying run containing i, or -1
        idx = np.arange(n)
        starts = np.where(ok & ~np.concatenate(([False], ok[:-1])), idx, -1)
        run_start = np.maximum.accumulate(starts)
        self.run_start = np.where(ok, run_start, -1)
        self.cum = np.concatenate(([0.0], np.cumsum(sig.v) * sig.dt))

    def last_index(self, t: float) -> int:
        return int(math.floor((t - self.sig.t0) / self.sig.dt + 1e-9))

    def window_start(self, e: int, not_before: int, length: float) -> int | None:
        """Latest start ``r >= not_before`` such that ``[r, e]`` is one
        qualifying run covering ``length`` meters, else ``None``."""
        if e < 0 or e >= len(self.sig):
            return None
        r0 = int(self.run_start[e])
        if r0 < 0:
            return None
        r0 = max(r0, not_before)
        if self.cum[e + 1] - self.cum[r0] < length:
            return None
        return r0


def _placements(track: TrackMap, sig: TimeSignal, r: int, e: int, t_epoch: float, cfg: HybridConfig):
    seg = sig.slice(r, e + 1)
    space = spacify(seg, track.dx, 0.0)
    m = int(math.floor(cfg.n / track.dx + 1e-9)) + 1
    if len(space) < m:
        return None, None
    window = space.tail(m)
    x_end = float(integrate_positions(seg.v, seg.dt, 0.0)[-1])
    # window end -> newest sample -> epoch time
    ahead = (x_end - (window.x0 + (m - 1) * track.dx)) + float(seg.v[-1]) * (t_epoch - float(seg.t[-1]))
    cands = align_top3(track, window, cfg)
    out = []
    for c in cands:
        x_now = c.s + (m - 1) * track.dx + ahead
        out.append(Placement(c, float(min(max(x_now, 0.0), track.length))))
    return window, out


def localise(track: TrackMap, sig: TimeSignal, cfg: HybridConfig, seed: int = 0) -> Localisation:
    """Replay ``sig`` through align, race and track until the stream ends."""
    log = Localisation()
    epochs = measurement_epochs(sig, cfg.pf.dt)
    trail = _Trailing(sig, cfg.v_start_min)
    not_before = 0
    attempt = 0
    k = 0
    while k < len(epochs):
        t_k = float(epochs.t[k])
        e = trail.last_index(t_k)
        r = trail.window_start(e, not_before, cfg.n)
        if r is None:
            k += 1
            continue
        window, placements = _placements(track, sig, r, e, t_k, cfg)
        if not placements:
            k += 1
            continue
        attempt += 1
        log.event(
            t_k,
            CANDIDATE_SET,
            attempt=attempt,
            s=[p.candidate.s for p in placements],
            score=[p.candidate.score for p in placements],
            x_now=[p.x_now for p in placements],
        )
        outcome, state, est, k = get_pf(track, placements, epochs, k, cfg, seed, attempt, log)
        if outcome is None:
            break
        if outcome == ERROR:
            # the next window must be made of motion after this one
            not_before = e + 1
            continue
        log.event(epochs.t[k], CONVERGED, x_hat=est.x_hat, v_hat=est.v_hat, var=est.var_x)
        log.emit(float(epochs.t[k]), est)
        k += 1
        while k < len(epochs):
            try:
                state, est, _ = step_evidence(state, track, epochs.z[k], cfg.pf)
            except FilterCollapse:
                log.event(epochs.t[k], DIVERGED, reason="collapse")
                break
            if est.var_x > cfg.var_threshold:
                log.event(epochs.t[k], DIVERGED, reason="variance", var=est.var_x, x_hat=est.x_hat)
                break
            log.emit(float(epochs.t[k]), est)
            k += 1
        not_before = 0
        k += 1
    return log
