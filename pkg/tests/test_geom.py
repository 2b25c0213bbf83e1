import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l1chain.errors import DataError, DomainError, NoIntersectionError, NotVisibleError
from l1chain.geom import (CameraModel, GroundPoint, InteriorLayer, LCCProjection, MapGrid, Mode,
                          OrbitElements, SensorGeometry, TiltSchedule, across_track_angle,
                          build_virtual_linear_model, ecef_to_geodetic, geodetic_to_ecef,
                          intersect_ellipsoid, layout_for, look_vector, num_scans_for)
from l1chain.geom.earth import WGS84_A, WGS84_B, WGS84_E2

lat_st = st.floats(-89.0, 89.0)
lon_st = st.floats(-179.999, 180.0)
h_st = st.floats(-500.0, 900_000.0)


# -- ellipsoid -----------------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(lat_st, lon_st, h_st)
def test_geodetic_round_trip(lat, lon, h):
    la, lo, hh = ecef_to_geodetic(geodetic_to_ecef(lat, lon, h))
    assert la == pytest.approx(lat, abs=1e-10)
    assert math.cos(math.radians(lo - lon)) == pytest.approx(1.0, abs=1e-15)
    assert hh == pytest.approx(h, abs=1e-5)


def test_ecef_known_points():
    np.testing.assert_allclose(geodetic_to_ecef(0.0, 0.0), [WGS84_A, 0, 0], atol=1e-9)
    np.testing.assert_allclose(geodetic_to_ecef(90.0, 0.0), [0, 0, WGS84_B], atol=1e-6)
    np.testing.assert_allclose(geodetic_to_ecef(0.0, 90.0, 100.0), [0, WGS84_A + 100, 0], atol=1e-6)


@settings(max_examples=100, deadline=None)
@given(lat_st, lon_st, st.floats(200_000, 2_000_000))
def test_nadir_ray_hits_geocentric_subpoint(lat, lon, alt):
    # a ray towards the geocentre from above (lat, lon) meets the surface on the radius
    xyz = geodetic_to_ecef(lat, lon, 0.0)
    r = xyz / np.linalg.norm(xyz)
    origin = r * (np.linalg.norm(xyz) + alt)
    hit = intersect_ellipsoid(origin, -r)
    np.testing.assert_allclose(hit / np.linalg.norm(hit), r, atol=1e-12)
    # on the surface
    assert (hit[0] ** 2 + hit[1] ** 2) / WGS84_A**2 + hit[2] ** 2 / WGS84_B**2 == pytest.approx(1, abs=1e-12)


def test_intersection_miss_and_behind():
    origin = np.array([WGS84_A + 7e5, 0, 0])
    with pytest.raises(NoIntersectionError):
        intersect_ellipsoid(origin, np.array([0.0, 1.0, 0.0]))
    with pytest.raises(NoIntersectionError):
        intersect_ellipsoid(origin, np.array([1.0, 0.0, 0.0]))
    out = intersect_ellipsoid(origin, np.array([[0.0, 1.0, 0.0], [-1.0, 0, 0]]), strict=False)
    assert np.isnan(out[0]).all()
    np.testing.assert_allclose(out[1], [WGS84_A, 0, 0], atol=1e-6)


def test_ground_point_validation():
    with pytest.raises(DomainError):
        GroundPoint(91.0, 0.0)
    assert GroundPoint(0.0, 190.0).longitude == pytest.approx(-170.0)


# -- orbit ---------------------------------------------------------------------


def test_orbit_period_matches_kepler():
    gm = 3.986004418e14
    a = 6378137.0 + 732_500.0
    oracle = 2 * math.pi * math.sqrt(a**3 / gm)
    orbit = OrbitElements()
    assert orbit.period == pytest.approx(oracle, rel=1e-12)
    assert orbit.period == pytest.approx(5967.24, abs=0.01)


def test_orbit_radius_constant_and_returns_after_one_period():
    orbit = OrbitElements(node_longitude_deg=30.0, arg_latitude_deg=10.0)
    cam = CameraModel(orbit=orbit)
    t = np.linspace(0, orbit.period, 50)
    r, v = cam.state(t)
    np.testing.assert_allclose(np.linalg.norm(r, axis=1), orbit.semi_major_axis, rtol=1e-12)
    # after a period the inertial position repeats; the Earth turned underneath
    r0, _ = cam.state(0.0)
    r1, _ = cam.state(orbit.period)
    turn = 7.2921150e-5 * orbit.period
    c, s = math.cos(turn), math.sin(turn)
    np.testing.assert_allclose(r1, [c * r0[0] + s * r0[1], -s * r0[0] + c * r0[1], r0[2]], atol=1e-5)
    # Earth-fixed velocity is the time derivative of position
    dt = 1e-3
    rp, _ = cam.state(100.0 + dt)
    rm, _ = cam.state(100.0 - dt)
    _, v100 = cam.state(100.0)
    np.testing.assert_allclose((rp - rm) / (2 * dt), v100, rtol=1e-6)



def test_ground_track_shifts_west_after_one_period():
    orbit = OrbitElements()
    cam = CameraModel(orbit=orbit)
    lon = [math.degrees(math.atan2(r[1], r[0])) for r in (cam.state(0.0)[0], cam.state(orbit.period)[0])]
    shift = (lon[0] - lon[1]) % 360.0
    assert shift == pytest.approx(math.degrees(7.2921150e-5 * orbit.period), abs=1e-9)
    assert shift == pytest.approx(24.93, abs=0.01)

def test_orbit_inclination_bounds_latitude():
    orbit = OrbitElements()
    t = np.linspace(0, orbit.period, 2000)
    r, _ = CameraModel(orbit=orbit).state(t)
    geoc_lat = np.degrees(np.arcsin(r[:, 2] / np.linalg.norm(r, axis=1)))
    assert geoc_lat.max() == pytest.approx(180 - 98.331, abs=0.01)


def test_orbit_rejects_nonpositive_altitude():
    with pytest.raises(DomainError):
        OrbitElements(altitude_m=0.0)


# -- sensor --------------------------------------------------------------------


def test_edge_angles():
    ideal = SensorGeometry.ideal()
    default = SensorGeometry()
    edge = default.active_cols - 0.5
    for sensor, expected in ((ideal, 45.0), (default, 43.5)):
        v = look_vector(sensor, sensor.center_row, edge)
        assert across_track_angle(v) == pytest.approx(expected, abs=1e-9)
        v = look_vector(sensor, sensor.center_row, -0.5)
        assert across_track_angle(v) == pytest.approx(-expected, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(-20.0, 20.0), st.floats(-20.0, 20.0))
def test_distortion_inverse(x, y):
    s = SensorGeometry(distortion_y=(0.0, 1e-3, 0.0, 0.0))
    xd, yd = s.distort(x, y)
    xi, yi = s.undistort(xd, yd)
    assert xi == pytest.approx(x, abs=1e-12)
    assert yi == pytest.approx(y, abs=1e-12)


def test_camera_directions_are_unit_and_nadir_centred():
    s = SensorGeometry()
    v = s.camera_directions(np.full(5, s.center_row), np.linspace(0, s.active_cols - 1, 5))
    np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0, rtol=1e-14)
    np.testing.assert_allclose(s.camera_directions(s.center_row, s.center_col), [0, 0, 1], atol=1e-15)


def test_interior_layer_rotates_nadir_pixel():
    s = SensorGeometry()
    layer = InteriorLayer(along=(1e-3,), across=(2e-3,))
    v = s.camera_directions(s.center_row, s.center_col, layer)
    assert math.atan2(v[0], v[2]) == pytest.approx(1e-3, rel=1e-6)
    assert math.atan2(v[1], v[2]) == pytest.approx(2e-3, rel=1e-6)
    assert (layer + None) is layer
    assert (layer + layer).along == (2e-3,)


def test_pixel_bounds_and_sensor_validation():
    s = SensorGeometry()
    with pytest.raises(DomainError):
        s.camera_directions(0, s.active_cols + 1)
    with pytest.raises(DomainError):
        SensorGeometry(tilt_deg=25.0)
    with pytest.raises(DomainError):
        SensorGeometry(focal_length_mm=0.0)
    with pytest.raises(DomainError):
        Mode.parse("XAC")


def test_mode_layouts():
    lac, gac = layout_for("lac"), layout_for(Mode.GAC)
    s = SensorGeometry()
    assert lac.frame_shape(s) == (24, 4000)
    assert gac.frame_shape(s) == (8, 2000)
    assert (lac.max_count, gac.max_count) == (4095, 65535)
    r, c = gac.to_physical(1, 3)
    assert (r, c) == (8.5, 6.5)
    np.testing.assert_allclose(gac.to_binned(r, c), (1, 3))


# -- camera model --------------------------------------------------------------


def test_nadir_roll_offset_ground_distance():
    cam = CameraModel()
    s = cam.sensor
    base = cam.pixel_to_ground_ecef(0.0, s.center_row, s.center_col)
    shifted = cam.with_(roll_bias=0.01).pixel_to_ground_ecef(0.0, s.center_row, s.center_col)
    assert np.linalg.norm(shifted - base) / 1e3 == pytest.approx(7.33, abs=0.01)


def test_ground_to_pixel_round_trip_1000_pixels():
    rng = np.random.default_rng(3)
    cam = CameraModel(interior=InteriorLayer(along=(1e-4, 2e-5), across=(-3e-5, 0, 1e-5)),
                      roll_bias=1e-3, pitch_bias=-5e-4)
    s = cam.sensor
    rows = rng.uniform(0, s.active_rows - 1, 1000)
    cols = rng.uniform(0, s.active_cols - 1, 1000)
    t = 12.5
    xyz = cam.pixel_to_ground_ecef(t, rows, cols)
    r2, c2, front = cam.project_at(t, xyz)
    assert front.all()
    err = np.hypot(r2 - rows, c2 - cols)
    assert err.max() < 1e-3


def test_ground_to_pixel_time_search():
    cam = CameraModel()
    s = cam.sensor
    p = cam.pixel_to_ground(3.0, s.center_row, 1234.0)
    t, row, col = cam.ground_to_pixel((2.0, 4.0), p)
    assert t == pytest.approx(3.0, abs=1e-5)
    assert row == s.center_row
    assert col == pytest.approx(1234.0, abs=1e-3)
    # degenerate window inverts the snapshot
    t, row, col = cam.ground_to_pixel((3.0, 3.0), p)
    assert (row, col) == pytest.approx((s.center_row, 1234.0), abs=1e-3)
    with pytest.raises(NotVisibleError):
        cam.ground_to_pixel((10.0, 12.0), p)
    with pytest.raises(NotVisibleError):
        cam.ground_to_pixel((20.0, 20.0), p)
    with pytest.raises(DomainError):
        cam.ground_to_pixel((4.0, 2.0), p)


def test_tilt_moves_footprint_along_track():
    cam = CameraModel()
    s = cam.sensor
    g0 = cam.pixel_to_ground_ecef(0.0, s.center_row, s.center_col)
    g1 = cam.with_(tilt=TiltSchedule.constant(20.0)).pixel_to_ground_ecef(0.0, s.center_row, s.center_col)
    _, v = cam.state(0.0)
    d = g1 - g0
    # forward tilt looks ahead along the velocity, roughly h*tan(20 deg)
    assert np.dot(d, v / np.linalg.norm(v)) / 1e3 == pytest.approx(732.5 * math.tan(math.radians(20)), rel=0.05)


def test_tilt_schedule_validation():
    with pytest.raises(DomainError):
        TiltSchedule((0.0,), (21.0,))
    with pytest.raises(DataError):
        TiltSchedule((0.0, 0.0), (1.0, 2.0))
    ts = TiltSchedule((0.0, 10.0), (-10.0, 10.0))
    assert ts(5.0) == 0.0


# -- virtual linear model ------------------------------------------------------


def test_num_scans_exhaustive():
    for mode, base in (("LAC", 47), ("GAC", 13)):
        for f in range(1, 501):
            assert num_scans_for(mode, f) == base + 2 * (f - 1)
    with pytest.raises(DomainError):
        num_scans_for("LAC", 0)


def test_virtual_linear_model_timing_and_errors():
    times = 0.128 * np.arange(10)
    vlm = build_virtual_linear_model(times, "LAC")
    assert vlm.line_period == pytest.approx(0.064)
    assert vlm.num_scans == 47 + 18
    assert vlm.num_pixels == 4000
    gac = build_virtual_linear_model(0.448 * np.arange(3), "GAC")
    assert gac.num_pixels == 2000 and gac.num_scans == 17
    with pytest.raises(DomainError):
        build_virtual_linear_model([], "LAC")
    with pytest.raises(DataError):
        build_virtual_linear_model([0.0, 0.0], "LAC")


def test_virtual_line_zero_matches_trailing_row_of_first_frame():
    cam = CameraModel()
    vlm = build_virtual_linear_model(0.128 * np.arange(4), "LAC")
    g = vlm.ground_ecef(cam, lines=[0], pixels=[0, 2000, 3999])[0]
    expected = cam.pixel_to_ground_ecef(0.0, 0.0, np.array([0, 2000, 3999]))
    np.testing.assert_allclose(g, expected, atol=1e-6)


# -- Lambert conformal conic ---------------------------------------------------


def _lcc_oracle(lat1, lat2, lat0, lon0, lat, lon):
    """Ellipsoidal LCC via isometric latitude (independent formulation)."""
    e = math.sqrt(WGS84_E2)

    def psi(phi):
        s = math.sin(phi)
        return math.atanh(s) - e * math.atanh(e * s)

    def m(phi):
        return math.cos(phi) / math.sqrt(1 - WGS84_E2 * math.sin(phi) ** 2)

    p1, p2, p0, p = map(math.radians, (lat1, lat2, lat0, lat))
    n = math.log(m(p1) / m(p2)) / (psi(p2) - psi(p1))
    big_f = m(p1) * math.exp(n * psi(p1)) / n
    rho = WGS84_A * big_f * math.exp(-n * psi(p))
    rho0 = WGS84_A * big_f * math.exp(-n * psi(p0))
    theta = n * math.radians(lon - lon0)
    return rho * math.sin(theta), rho0 - rho * math.cos(theta)


@pytest.mark.parametrize("lat1,lat2,lat0,lon0", [(10, 20, 15, 80), (-35, -25, -30, -60), (40, 60, 50, 10)])
def test_lcc_matches_oracle(lat1, lat2, lat0, lon0):
    proj = LCCProjection(lat1, lat2, lat0, lon0)
    rng = np.random.default_rng(0)
    for lat, lon in zip(rng.uniform(lat0 - 8, lat0 + 8, 20), rng.uniform(lon0 - 8, lon0 + 8, 20)):
        x, y = proj.forward(lat, lon)
        ox, oy = _lcc_oracle(lat1, lat2, lat0, lon0, lat, lon)
        assert x == pytest.approx(ox, abs=1e-6)
        assert y == pytest.approx(oy, abs=1e-6)


def test_lcc_scale_factor_unity_on_standard_parallels():
    proj = LCCProjection(10.0, 20.0, 15.0, 80.0)
    np.testing.assert_allclose(proj.scale_factor([10.0, 20.0]), 1.0, atol=1e-12)
    assert proj.scale_factor(15.0) < 1.0
    assert proj.forward(15.0, 80.0) == pytest.approx((0.0, 0.0), abs=1e-6)


def test_lcc_is_conformal():
    proj = LCCProjection(10.0, 20.0, 15.0, 80.0)
    lat, lon, d = 17.0, 83.0, 1e-6
    x0, y0 = proj.forward(lat, lon)
    xn, yn = proj.forward(lat + d, lon)
    xe, ye = proj.forward(lat, lon + d)
    phi = math.radians(lat)
    # meridional and prime-vertical radii
    w = math.sqrt(1 - WGS84_E2 * math.sin(phi) ** 2)
    m_rad = WGS84_A * (1 - WGS84_E2) / w**3
    n_rad = WGS84_A / w
    k_n = math.hypot(xn - x0, yn - y0) / (m_rad * math.radians(d))
    k_e = math.hypot(xe - x0, ye - y0) / (n_rad * math.cos(phi) * math.radians(d))
    assert k_n == pytest.approx(k_e, rel=1e-6)
    assert k_n == pytest.approx(float(proj.scale_factor(lat)), rel=1e-6)


@settings(max_examples=300, deadline=None)
@given(st.floats(-60, 60), st.floats(-30, 30))
def test_lcc_round_trip(dlat, dlon):
    proj = LCCProjection.for_scene(20.0, 75.0)
    lat, lon = np.clip(20.0 + dlat, -80, 80), 75.0 + dlon
    la, lo = proj.inverse(*proj.forward(lat, lon))
    assert abs(la - lat) < 1e-9
    assert abs(lo - lon) < 1e-9


def test_lcc_validation():
    with pytest.raises(DomainError):
        LCCProjection(10.0, 10.0, 10.0, 0.0)
    with pytest.raises(DomainError):
        LCCProjection(-20.0, 20.0, 0.0, 0.0)
    with pytest.raises(DomainError):
        LCCProjection(10.0, 20.0, 15.0, 0.0, pixel_size=0.0)
    with pytest.raises(DomainError):
        LCCProjection(10.0, 20.0, 15.0, 0.0).forward(89.9, 0.0)


def test_map_grid_covering_and_indexing():
    proj = LCCProjection.for_scene(15.0, 80.0)
    lat = np.array([14.0, 16.0])
    lon = np.array([79.0, 81.0])
    grid = MapGrid.covering(proj, lat, lon)
    r, c = grid.rowcol(*proj.forward(lat, lon))
    assert (r >= 0).all() and (r <= grid.rows - 1).all()
    assert (c >= 0).all() and (c <= grid.cols - 1).all()
    x, y = grid.xy(2.0, 3.0)
    np.testing.assert_allclose(grid.rowcol(x, y), (2.0, 3.0))
    with pytest.raises(DomainError):
        MapGrid.covering(proj, np.array([np.nan]), np.array([np.nan]))
