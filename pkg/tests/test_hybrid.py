import numpy as np
import pytest

from railmag.align import MatchCandidate
from railmag.errors import DomainError
from railmag.evaluation import error_over_time
from railmag.hybrid import (
    CANDIDATE_SET,
    CONVERGED,
    DIVERGED,
    ERROR,
    ERROR_RESTART,
    FILTER_KILLED,
    FILTERS_SPAWNED,
    SURVIVOR,
    HybridConfig,
    Localisation,
    LocalisationEvent,
    Placement,
    align_top3,
    get_pf,
    localise,
)
from railmag.pf import measurement_epochs
from railmag.signal import TimeSignal
from railmag.spacify import SpaceSignal
from railmag.synth import RunSpec, SynthSpec, gen_map, simulate_run
from railmag.track import TrackMap


def zeroed(track, a, b):
    f = track.b.copy()
    f[int(a / track.dx) : int(b / track.dx)] = 0.0
    return TrackMap(track.s, track.lat, track.lon, f)


def placement(s, rank):
    return Placement(MatchCandidate(index=0, s=s, score=0.0, rank=rank), s)


def noisy_run(track, start, v, dur, seed=0):
    sd = float(track.b.std())
    run = RunSpec(profile=((dur, v),), sensor_rate=100.0, noise_sigma=0.02 * sd, start_s=start, seed=seed)
    return simulate_run(track, run)


def test_config_validation():
    with pytest.raises(DomainError):
        HybridConfig(n=0.0)
    with pytest.raises(DomainError):
        HybridConfig(ell=0)
    with pytest.raises(DomainError):
        HybridConfig(align_metric="manhattan")
    with pytest.raises(DomainError):
        HybridConfig(evidence_margin=0.0)


def test_event_detail_format():
    e = LocalisationEvent(1.0, CANDIDATE_SET, {"s": [1.0, 2.5], "score": 0.123456789, "rank": 2})
    assert e.format_detail() == "s=1 2.5;score=0.123457;rank=2"


def test_align_top3_planted(map5k):
    i0 = int(1200 / map5k.dx)
    w = SpaceSignal(map5k.dx, 0.0, map5k.b[i0 : i0 + 401])
    c = align_top3(map5k, w, HybridConfig())
    assert len(c) == 3
    assert abs(c[0].s - 1200.0) <= map5k.dx


def test_align_top3_short_map(map5k):
    small = TrackMap(map5k.s[:1000], map5k.lat[:1000], map5k.lon[:1000], map5k.b[:1000])
    w = SpaceSignal(map5k.dx, 0.0, small.b[100:501])
    assert len(align_top3(small, w, HybridConfig(align_metric="euclid"))) == 2


def test_align_top3_duplicates(map5k):
    f = map5k.b.copy()
    i1, i2, m = int(1000 / map5k.dx), int(4000 / map5k.dx), 401
    f[i2 : i2 + m] = f[i1 : i1 + m]
    dup = TrackMap(map5k.s, map5k.lat, map5k.lon, f)
    c = align_top3(dup, SpaceSignal(dup.dx, 0.0, f[i1 : i1 + m]), HybridConfig())
    assert {round(x.s) for x in c[:2]} == {1000, 4000}


def test_align_top3_dx_mismatch(map5k):
    with pytest.raises(DomainError):
        align_top3(map5k, SpaceSignal(0.5, 0.0, map5k.b[:100]), HybridConfig())


def test_get_pf_true_survives(map5k):
    sig, truth = noisy_run(map5k, 1000.0, 20.0, 20.0)
    epochs = measurement_epochs(sig, 0.1)
    x_true = float(truth.position_at(epochs.t[0]))
    places = [placement(x_true, 2), placement(2500.0, 1), placement(4000.0, 3)]
    log = Localisation()
    out, st, est, k = get_pf(map5k, places, epochs, 0, HybridConfig(), seed=1, attempt=1, log=log)
    assert out == SURVIVOR
    assert k <= 100
    assert abs(est.x_hat - truth.position_at(epochs.t[k])) < 25.0
    killed = [e.detail["rank"] for e in log.events if e.kind == FILTER_KILLED]
    assert sorted(killed) == [1, 3]


def test_get_pf_constant_stretch_errors(map5k):
    m = zeroed(map5k, 2000.0, 2800.0)
    sig, truth = noisy_run(m, 2100.0, 15.0, 12.0)
    epochs = measurement_epochs(sig, 0.1)
    places = [placement(2150.0, 1), placement(2300.0, 2), placement(2450.0, 3)]
    log = Localisation()
    out, st, est, k = get_pf(m, places, epochs, 0, HybridConfig(), seed=1, attempt=1, log=log)
    assert out == ERROR and st is None
    assert log.events[-1].kind == ERROR_RESTART
    assert "hint" in log.events[-1].detail


def test_get_pf_coincident_pair_merged(map5k):
    sig, truth = noisy_run(map5k, 1000.0, 20.0, 20.0)
    epochs = measurement_epochs(sig, 0.1)
    x_true = float(truth.position_at(epochs.t[0]))
    places = [placement(x_true, 1), placement(x_true + 5.0, 2)]
    out, st, est, k = get_pf(map5k, places, epochs, 0, HybridConfig(), seed=2, attempt=1, log=Localisation())
    assert out == SURVIVOR
    assert k == 100
    assert abs(est.x_hat - truth.position_at(epochs.t[k])) < 25.0


def test_get_pf_stream_end(map5k):
    sig, truth = noisy_run(map5k, 1000.0, 20.0, 2.0)
    epochs = measurement_epochs(sig, 0.1)
    out, *_ = get_pf(map5k, [placement(1000.0, 1)], epochs, 0, HybridConfig(), 0, 1, Localisation())
    assert out is None


def test_get_pf_needs_candidates(map5k):
    sig, _ = noisy_run(map5k, 1000.0, 20.0, 2.0)
    with pytest.raises(DomainError):
        get_pf(map5k, [], measurement_epochs(sig, 0.1), 0, HybridConfig(), 0, 1, Localisation())


def check_grammar(events):
    expect_spawn = False
    for e in events:
        if expect_spawn:
            assert e.kind == FILTERS_SPAWNED
            expect_spawn = False
        if e.kind == CANDIDATE_SET:
            expect_spawn = True
    ts = [e.t for e in events]
    assert ts == sorted(ts)
    kinds = [e.kind for e in events]
    for i, k in enumerate(kinds):
        if k == CONVERGED:
            rest = kinds[i + 1 :]
            assert CANDIDATE_SET not in rest or DIVERGED in rest[: rest.index(CANDIDATE_SET)]


def test_localise_cold_start(map5k):
    sig, truth = noisy_run(map5k, 1700.0, 20.0, 30.0, seed=4)
    res = localise(map5k, sig, HybridConfig(), seed=3)
    kinds = [e.kind for e in res.events]
    assert CONVERGED in kinds
    check_grammar(res.events)
    err = error_over_time(res.t, [e.x_hat for e in res.estimates], truth).err
    assert err.max() < 25.0
    assert all(0.0 <= e.x_hat <= map5k.length for e in res.estimates)
    # alignment starts as soon as 100 m are covered at >= 10 m/s
    first = next(e for e in res.events if e.kind == CANDIDATE_SET)
    assert first.t == pytest.approx(5.0, abs=0.2)


def test_localise_deterministic(map5k):
    sig, _ = noisy_run(map5k, 2000.0, 18.0, 15.0, seed=6)
    a = localise(map5k, sig, HybridConfig(), seed=7)
    b = localise(map5k, sig, HybridConfig(), seed=7)
    assert [(e.t, e.kind, e.format_detail()) for e in a.events] == [(e.t, e.kind, e.format_detail()) for e in b.events]
    assert a.t == b.t and a.estimates == b.estimates


def test_localise_short_stream(map5k):
    sig, _ = noisy_run(map5k, 1000.0, 15.0, 5.0)
    res = localise(map5k, sig, HybridConfig())
    assert res.t == [] and res.events == []


def test_localise_needs_velocity(map5k):
    sig, _ = noisy_run(map5k, 1000.0, 15.0, 5.0)
    with pytest.raises(DomainError):
        localise(map5k, TimeSignal(sig.dt, sig.t0, sig.b), HybridConfig())


@pytest.mark.slow
def test_localise_recovers_from_forced_divergence():
    base = gen_map(SynthSpec(length=20000.0, dx=0.25, seed=3))
    s0 = 3000.0
    z0 = s0 + 1500.0
    sd = float(base.b.std())
    sig, truth = simulate_run(
        base, RunSpec(profile=((250.0, 12.0),), sensor_rate=100.0, noise_sigma=0.02 * sd, start_s=s0, seed=1)
    )
    m = zeroed(base, z0, z0 + 500.0)
    res = localise(m, sig, HybridConfig(align_metric="euclid"), seed=0)
    kinds = [e.kind for e in res.events]
    assert DIVERGED in kinds
    after = kinds[kinds.index(DIVERGED) :]
    assert CONVERGED in after
    t_relock = res.events[kinds.index(DIVERGED) + after.index(CONVERGED)].t
    tail = [i for i, t in enumerate(res.t) if t >= t_relock]
    err = error_over_time(np.array(res.t)[tail], [res.estimates[i].x_hat for i in tail], truth).err
    assert err.max() < 25.0
