import math

import numpy as np
import pytest

from conftest import straight_map
from railmag.align import EUCLID
from railmag.errors import CoverageError, DomainError
from railmag.evaluation import (
    ARCLENGTH,
    GEO,
    ErrorSeries,
    StudyResult,
    coldstart_summary,
    convergence_report,
    error_over_time,
    min_length_study,
    random_start_runs,
)
from railmag.synth import RunSpec, Truth, simulate_run


def truth_const(v=20.0, t_end=10.0, x0=100.0):
    t = np.linspace(0.0, t_end, 101)
    return Truth(t, x0 + v * t, np.full(t.shape, v))


def series(err, dt=1.0):
    err = np.asarray(err, dtype=float)
    return ErrorSeries(dt * np.arange(err.size), err, ARCLENGTH)


def test_error_zero_on_truth(map5k):
    tr = truth_const()
    for mode in (ARCLENGTH, GEO):
        s = error_over_time(tr.t, tr.x, tr, mode=mode, track=map5k)
        assert np.allclose(s.err, 0.0, atol=1e-6)


def test_error_constant_offset_geo(map5k):
    tr = truth_const()
    s = error_over_time(tr.t, tr.x + 10.0, tr, mode=GEO, track=map5k)
    np.testing.assert_allclose(s.err, 10.0, rtol=1e-6)
    a = error_over_time(tr.t, tr.x + 10.0, tr, mode=ARCLENGTH)
    np.testing.assert_allclose(a.err, 10.0)


def test_error_coverage():
    tr = truth_const()
    with pytest.raises(CoverageError):
        error_over_time([11.0], [0.0], tr)


def test_error_geo_needs_map():
    tr = truth_const()
    with pytest.raises(DomainError):
        error_over_time(tr.t, tr.x, tr, mode=GEO)


def test_convergence_never():
    rep = convergence_report(series([30, 40, 26]), truth_const())
    assert not rep.converged and rep.t_first is None and rep.d_first is None


def test_convergence_immediate():
    rep = convergence_report(series([1, 2, 3]), truth_const())
    assert rep.converged and rep.t_first == 0.0 and rep.d_first == 0.0 and rep.sustained


def test_convergence_one_excursion():
    rep = convergence_report(series([50, 40, 30, 10, 30, 5, 5]), truth_const())
    assert rep.t_first == 3.0
    assert rep.d_first == pytest.approx(60.0)
    assert rep.excursions == 1 and not rep.sustained


def test_convergence_invariant_to_appended_hits():
    base = [50, 40, 10, 12]
    a = convergence_report(series(base), truth_const())
    b = convergence_report(series(base + [3, 4, 1]), truth_const())
    assert (a.t_first, a.d_first, a.sustained) == (b.t_first, b.d_first, b.sustained)


def test_convergence_empty():
    with pytest.raises(DomainError):
        convergence_report(series([]), truth_const())


def planted_run(track, start=1500.0, v=20.0):
    return simulate_run(track, RunSpec(profile=((8.0, v),), sensor_rate=100.0, start_s=start))


def test_study_planted_noiseless(map5k):
    sig, truth = planted_run(map5k)
    res = min_length_study(map5k, sig, truth, lengths=[1, 2, 3, 5, 10, 20, 50, 100], stop_early=False)
    assert res.L[1] is not None and res.L[1] <= 20
    # the first length whose rank-1 hit is correct defines L(1)
    first_ok = next(t.length for t in res.trials if t.best_rank == 1)
    assert res.L[1] == first_ok
    vals = [res.L[k] for k in (1, 2, 3, 4, 5)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_study_constant_map_not_found():
    m = straight_map(np.ones((8001, 3)), dx=0.25)
    sig, truth = planted_run(m, start=1000.0, v=15.0)
    res = min_length_study(m, sig, truth, lengths=[5, 20, 50], metric=EUCLID, mode=ARCLENGTH)
    assert all(v is None for v in res.L.values())


def test_study_errors(map5k):
    sig, truth = planted_run(map5k)
    with pytest.raises(DomainError):
        min_length_study(map5k, sig, truth, k_values=(0, 1))
    with pytest.raises(DomainError):
        min_length_study(map5k, sig, truth, lengths=[5, 3])


def test_coldstart_summary():
    rs = [StudyResult({1: 10.0, 3: 4.0}, ()), StudyResult({1: None, 3: 6.0}, ())]
    rows = coldstart_summary(rs, [1, 3])
    assert rows[0][0] == 1 and rows[0][1] == 10.0 and rows[0][5] == 1
    assert rows[1][1:5] == (5.0, 1.0, 4.0, 6.0)
    empty = coldstart_summary([StudyResult({2: None}, ())], [2])
    assert math.isnan(empty[0][1]) and empty[0][5] == 1


def test_random_start_runs_deterministic(map5k):
    a = [(s, sig.b.sum()) for s, sig, _ in random_start_runs(map5k, 3, seed=1)]
    b = [(s, sig.b.sum()) for s, sig, _ in random_start_runs(map5k, 3, seed=1)]
    assert a == b
    for s, sig, tr in random_start_runs(map5k, 3, seed=2):
        assert tr.x[-1] - tr.x[0] >= 200.0
        assert tr.x[-1] <= map5k.length
