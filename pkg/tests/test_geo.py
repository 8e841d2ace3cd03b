import math

import numpy as np
import pytest

from parksearch.geo import (
    EARTH_RADIUS_M,
    GeoPoint,
    great_circle_m,
    great_circle_m_many,
    walking_time,
    walking_time_many,
)

M_PER_DEG = math.pi * EARTH_RADIUS_M / 180.0  # meters per degree along a meridian


def test_identical_points_walk_zero():
    p = GeoPoint(12.5, -7.25)
    assert walking_time(p, p) == 0.0


def test_142_meters_is_100_seconds():
    a = GeoPoint(0.0, 0.0)
    b = GeoPoint(142.0 / M_PER_DEG, 0.0)
    assert great_circle_m(a, b) == pytest.approx(142.0, abs=1e-6)
    assert walking_time(a, b) == pytest.approx(100.0, abs=1e-6)


def test_milli_degree_of_longitude_at_equator():
    # haversine evaluated independently: distance = R * dlon for dlat=0 at the equator
    a = GeoPoint(0.0, 0.0)
    b = GeoPoint(0.0, 0.001)
    expected_m = EARTH_RADIUS_M * math.radians(0.001)
    assert expected_m == pytest.approx(111.1949, abs=1e-3)
    assert great_circle_m(a, b) == pytest.approx(expected_m, abs=1e-6)
    assert walking_time(a, b) == pytest.approx(78.306, abs=1e-3)


def test_walking_time_symmetric_and_zero_iff_coincident():
    rng = np.random.default_rng(7)
    for _ in range(200):
        a = GeoPoint(float(rng.uniform(-80, 80)), float(rng.uniform(-179, 179)))
        b = GeoPoint(float(rng.uniform(-80, 80)), float(rng.uniform(-179, 179)))
        assert walking_time(a, b) == pytest.approx(walking_time(b, a), rel=1e-12)
        if (a.lat, a.lon) != (b.lat, b.lon):
            assert walking_time(a, b) > 0.0
        assert walking_time(a, a) == 0.0


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(3)
    lat = rng.uniform(-60, 60, size=50)
    lon = rng.uniform(-170, 170, size=50)
    ref = GeoPoint(10.0, 20.0)
    d = great_circle_m_many(lat, lon, ref)
    w = walking_time_many(lat, lon, ref)
    for i in range(50):
        p = GeoPoint(float(lat[i]), float(lon[i]))
        assert d[i] == pytest.approx(great_circle_m(p, ref), rel=1e-12)
        assert w[i] == pytest.approx(walking_time(p, ref), rel=1e-12)


def test_geopoint_validation():
    with pytest.raises(ValueError):
        GeoPoint(91.0, 0.0)
    with pytest.raises(ValueError):
        GeoPoint(0.0, -181.0)
