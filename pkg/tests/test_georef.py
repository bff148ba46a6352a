import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bevloc.errors import ContractError
from bevloc.georef import (PatchMeta, correct_label, global_to_gps, gps_to_global, gps_to_patch_pixel,
                           ground_resolution, patch_pixel_to_gps)

lats = st.floats(-85.0, 85.0)
lons = st.floats(-180.0, 180.0)
zooms = st.integers(0, 23)


def test_anchor_values_are_exact():
    assert gps_to_global(0.0, 0.0, 20) == (134217728.0, 134217728.0)
    assert gps_to_global(0.0, 90.0, 1) == (384.0, 256.0)
    assert global_to_gps(128 * 2 ** 20, 128 * 2 ** 20, 20) == (0.0, 0.0)
    lat, lon = global_to_gps(0, 128 * 2 ** 5, 5)
    assert lat == 0.0 and lon == -180.0


def test_formula_against_independent_mercator():
    # y from the inverse Gudermannian written with asinh(tan)
    for lat, lon, z in [(41.8781, -87.6298, 20), (-33.86, 151.2, 19), (60.0, 10.0, 3)]:
        k = 256 / (2 * math.pi) * 2 ** z
        x = k * (math.radians(lon) + math.pi)
        y = k * (math.pi - math.asinh(math.tan(math.radians(lat))))
        gx, gy = gps_to_global(lat, lon, z)
        assert gx == pytest.approx(x, rel=1e-14)
        assert gy == pytest.approx(y, rel=1e-13)


@settings(max_examples=300, deadline=None)
@given(lats, lons, zooms)
def test_round_trip(lat, lon, zoom):
    back = global_to_gps(*gps_to_global(lat, lon, zoom), zoom)
    assert abs(back[0] - lat) < 1e-9 and abs(back[1] - lon) < 1e-9


def test_monotone_orientation():
    xs = [gps_to_global(10.0, lon, 20)[0] for lon in np.linspace(-179, 179, 50)]
    ys = [gps_to_global(lat, 10.0, 20)[1] for lat in np.linspace(-80, 80, 50)]
    assert np.all(np.diff(xs) > 0) and np.all(np.diff(ys) < 0)


@pytest.mark.parametrize("lat", [85.05113, -86.0, 90.0, float("nan")])
def test_latitude_out_of_range(lat):
    with pytest.raises(ContractError):
        gps_to_global(lat, 0.0, 10)


def test_bad_zoom_and_pixels():
    with pytest.raises(ContractError):
        gps_to_global(0, 0, 24)
    with pytest.raises(ContractError):
        gps_to_global(0, 0, 2.5)
    with pytest.raises(ContractError):
        global_to_gps(-1.0, 5.0, 3)
    with pytest.raises(ContractError):
        global_to_gps(5.0, 256 * 8 + 1, 3)


def test_ground_resolution():
    assert ground_resolution(0.0, 20) == pytest.approx(40075016.686 / 268435456, rel=1e-10)
    assert ground_resolution(0.0, 20) == pytest.approx(0.14929, abs=1e-5)
    assert ground_resolution(60.0, 20) == pytest.approx(ground_resolution(0.0, 20) / 2, rel=1e-12)
    assert ground_resolution(30.0, 11) == pytest.approx(ground_resolution(30.0, 10) / 2, rel=1e-15)
    with pytest.raises(ContractError):
        ground_resolution(89.0, 20)


META = PatchMeta(40.7128, -74.0060, 20, 640.0)


def test_patch_center_and_unit_offset():
    assert gps_to_patch_pixel(META, META.center_lat, META.center_lon) == (320.0, 320.0)
    cx, cy = gps_to_global(META.center_lat, META.center_lon, 20)
    lat, lon = global_to_gps(cx + 1, cy, 20)
    u, v = gps_to_patch_pixel(META, lat, lon)
    assert u == pytest.approx(321.0, abs=1e-6) and v == pytest.approx(320.0, abs=1e-6)
    assert patch_pixel_to_gps(META, 320.0, 320.0) == pytest.approx((META.center_lat, META.center_lon), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-400, 1000), st.floats(-400, 1000))
def test_patch_round_trip(u, v):
    lat, lon = patch_pixel_to_gps(META, u, v)
    uu, vv = gps_to_patch_pixel(META, lat, lon)
    assert abs(uu - u) < 1e-6 and abs(vv - v) < 1e-6
    back = patch_pixel_to_gps(META, uu, vv)
    assert abs(back[0] - lat) < 1e-9 and abs(back[1] - lon) < 1e-9


def test_patch_pixel_orientation():
    lat0, lon0 = patch_pixel_to_gps(META, 100.0, 100.0)
    lat1, lon1 = patch_pixel_to_gps(META, 101.0, 100.0)
    lat2, _ = patch_pixel_to_gps(META, 100.0, 101.0)
    assert lon1 > lon0 and lat2 < lat0 and lat1 == pytest.approx(lat0, abs=1e-15)


def test_patch_meta_validation():
    with pytest.raises(ContractError):
        PatchMeta(0.0, 0.0, 20, 0.0)
    with pytest.raises(ContractError):
        PatchMeta(0.0, 200.0)
    with pytest.raises(ContractError):
        PatchMeta(88.0, 0.0)


def test_correct_label_distance():
    lat, lon = patch_pixel_to_gps(META, 300.0, 250.0)
    u, v, d = correct_label(META, lat, lon, u_legacy := 300.0, 250.0)
    assert d == pytest.approx(0.0, abs=1e-6) and u == pytest.approx(u_legacy, abs=1e-6)
    u, v, d = correct_label(META, lat, lon, 303.0, 254.0)
    assert d == pytest.approx(5.0 * ground_resolution(META.center_lat, 20), rel=1e-6)


def test_constant_resolution_bias_pattern(rng):
    """Legacy labels made with one city-wide meters-per-pixel value drift away from the
    true labels in proportion to their distance from the patch center."""
    cities = {"north": (47.6, 47.0), "south": (29.76, 30.5)}  # (patch lat, city reference lat)
    for name, (lat_c, lat_ref) in cities.items():
        meta = PatchMeta(lat_c, -95.0, 20, 640.0)
        scale = ground_resolution(lat_c, 20) / ground_resolution(lat_ref, 20)
        slope = abs(1.0 - scale) * meta.resolution
        for _ in range(40):
            du, dv = rng.uniform(-300, 300, 2)
            lat, lon = patch_pixel_to_gps(meta, 320 + du, 320 + dv)
            legacy = (320 + du * scale, 320 + dv * scale)
            _, _, corr = correct_label(meta, lat, lon, *legacy)
            assert corr == pytest.approx(slope * math.hypot(du, dv), rel=1e-6, abs=1e-9)
        # a reference latitude nearer the equator has coarser pixels and shrinks offsets
        assert (scale < 1) == (abs(lat_ref) < abs(lat_c))
