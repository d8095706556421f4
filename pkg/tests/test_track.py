import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import straight_map
from railmag.errors import DomainError, ParseError, SpacingError
from railmag.track import (
    EARTH_RADIUS_M,
    GeoPoint,
    TrackMap,
    arclength_to_geo,
    destination,
    haversine,
    load_map,
    lookup_field,
    lookup_fields,
    save_map,
)

HEADER = "s_m,lat_deg,lon_deg,bx,by,bz\n"


def write(tmp_path, rows, header=HEADER):
    p = tmp_path / "map.csv"
    p.write_text(header + "".join(rows), encoding="utf-8")
    return p


def test_load_three_rows(tmp_path):
    p = write(tmp_path, ["0,46,7,1,2,3\n", "0.5,46,7,1,2,3\n", "1.0,46,7,1,2,3\n"])
    m = load_map(p)
    assert m.dx == 0.5
    assert m.length == 1.0
    assert len(m) == 3


def test_load_rejects_uneven_spacing(tmp_path):
    p = write(tmp_path, ["0,46,7,1,2,3\n", "0.5,46,7,1,2,3\n", "1.1,46,7,1,2,3\n"])
    with pytest.raises(SpacingError):
        load_map(p)


@pytest.mark.parametrize(
    "rows, err",
    [
        (["0,46,7,1,2\n", "1,46,7,1,2,3\n"], ParseError),
        (["0,46,7,1,2,x\n", "1,46,7,1,2,3\n"], ParseError),
        (["0,95,7,1,2,3\n", "1,46,7,1,2,3\n"], DomainError),
        (["0,46,181,1,2,3\n", "1,46,7,1,2,3\n"], DomainError),
        (["0,46,7,1,2,3\n"], SpacingError),
        (["1,46,7,1,2,3\n", "0,46,7,1,2,3\n"], SpacingError),
    ],
)
def test_load_errors(tmp_path, rows, err):
    with pytest.raises(err):
        load_map(write(tmp_path, rows))


def test_load_rejects_bad_header(tmp_path):
    with pytest.raises(ParseError):
        load_map(write(tmp_path, ["0,46,7,1,2,3\n", "1,46,7,1,2,3\n"], header="s,lat,lon,x,y,z\n"))


def test_synthetic_66km_count(map66k):
    # 66000 / 0.25 + 1
    assert len(map66k) == 264001
    assert map66k.length == pytest.approx(66000.0)


def test_map_is_immutable(map5k):
    with pytest.raises(ValueError):
        map5k.b[0, 0] = 1.0


def test_lookup_at_grid_point_is_verbatim():
    m = straight_map(np.arange(15.0).reshape(5, 3) * 0.1)
    for i in range(5):
        out = lookup_field(m, float(i))
        assert np.array_equal(out, m.b[i])


def test_lookup_midpoint():
    m = straight_map([[0, 0, 0], [2, 4, 6]])
    assert np.allclose(lookup_field(m, 0.5), [1, 2, 3])


@pytest.mark.parametrize("s", [-1e-6, -1.0, 2.0 + 1.0, 1e9])
def test_lookup_out_of_bounds_sentinel(s):
    m = straight_map([[0, 0, 0], [1, 1, 1], [2, 2, 2]])
    assert lookup_field(m, s) is None


def test_lookup_fields_matches_scalar(map5k):
    rng = np.random.default_rng(0)
    s = np.concatenate([rng.uniform(-10, map5k.length + 10, 500), map5k.s[::997]])
    out, valid = lookup_fields(map5k, s)
    for si, oi, vi in zip(s, out, valid):
        ref = lookup_field(map5k, si)
        if ref is None:
            assert not vi and np.all(np.isnan(oi))
        else:
            assert vi
            np.testing.assert_allclose(oi, ref, rtol=0, atol=1e-12)


def test_lookup_continuity(map5k):
    eps = map5k.dx * 1e-6
    rng = np.random.default_rng(1)
    for s in rng.uniform(0, map5k.length - 1, 200):
        a = lookup_field(map5k, s)
        b = lookup_field(map5k, s + eps)
        assert np.linalg.norm(a - b) < 1e-3


def test_arclength_to_geo_grid_and_midpoint():
    m = TrackMap(s=[0.0, 1.0], lat=[46.0, 46.2], lon=[7.0, 7.4], b=np.zeros((2, 3)))
    assert arclength_to_geo(m, 0.0) == GeoPoint(46.0, 7.0)
    mid = arclength_to_geo(m, 0.5)
    assert mid.lat == pytest.approx(46.1)
    assert mid.lon == pytest.approx(7.2)


def test_arclength_to_geo_domain():
    m = straight_map(np.zeros((3, 3)))
    with pytest.raises(DomainError):
        arclength_to_geo(m, -1.0)


def test_haversine_identity():
    a = GeoPoint(46.5, 7.25)
    assert haversine(a, a) == 0.0


def test_haversine_equator_degree():
    # R * pi / 180, independent of the haversine formula
    expected = EARTH_RADIUS_M * math.pi / 180.0
    assert expected == pytest.approx(111194.93, abs=0.01)
    assert haversine(GeoPoint(0, 0), GeoPoint(0, 1)) == pytest.approx(111194.9, abs=0.1)


lat = st.floats(-89.9, 89.9)
lon = st.floats(-180, 180)


@given(lat, lon, lat, lon)
def test_haversine_symmetric_nonnegative(a1, o1, a2, o2):
    a, b = GeoPoint(a1, o1), GeoPoint(a2, o2)
    d = haversine(a, b)
    assert d >= 0
    assert d == pytest.approx(haversine(b, a), rel=1e-12, abs=1e-9)


@given(lat, lon, lat, lon, lat, lon)
def test_haversine_triangle(a1, o1, a2, o2, a3, o3):
    a, b, c = GeoPoint(a1, o1), GeoPoint(a2, o2), GeoPoint(a3, o3)
    assert haversine(a, c) <= (haversine(a, b) + haversine(b, c)) * (1 + 1e-6) + 1e-6


def test_geopoint_validation():
    with pytest.raises(DomainError):
        GeoPoint(91.0, 0.0)
    with pytest.raises(DomainError):
        GeoPoint(0.0, -181.0)


def test_destination_distance_matches_haversine():
    o = GeoPoint(46.2, 7.3)
    d = np.array([0.0, 10.0, 1000.0, 66000.0])
    la, lo = destination(o, 60.0, d)
    for di, a, b in zip(d, la, lo):
        assert haversine(o, GeoPoint(a, b)) == pytest.approx(di, abs=1e-6 + 1e-9 * di)


def test_save_load_roundtrip(tmp_path, map5k):
    small = TrackMap(map5k.s[:400], map5k.lat[:400], map5k.lon[:400], map5k.b[:400])
    p = tmp_path / "m.csv"
    save_map(small, p)
    back = load_map(p)
    assert back.dx == pytest.approx(small.dx, rel=1e-12)
    np.testing.assert_allclose(back.s, small.s, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(back.b, small.b, rtol=1e-8, atol=1e-9)
    np.testing.assert_allclose(back.lat, small.lat, rtol=0, atol=1e-7)
    np.testing.assert_allclose(back.lon, small.lon, rtol=0, atol=1e-7)
