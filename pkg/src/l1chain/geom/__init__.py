"""Geometric sensor model, orbit/attitude providers and map projection."""

from .earth import (GroundPoint, ecef_to_geodetic, ellipsoid_residual, geodetic_to_ecef,
                    intersect_ellipsoid, local_axes, normalize_longitude)
from .lcc import LCCProjection, MapGrid, lcc_forward, lcc_inverse
from .model import (CameraModel, Jitter, TiltSchedule, VirtualLinearModel,
                    build_virtual_linear_model, num_scans_for)
from .orbit import (AttitudeProvider, AttitudeState, Ephemeris, OrbitElements, OrbitState,
                    attitude_matrix, lvlh_matrix, propagate_orbit)
from .sensor import (LAYOUTS, InteriorLayer, Mode, ModeLayout, SensorGeometry,
                     across_track_angle, along_track_angle, edge_correcting_distortion,
                     layout_for, look_vector)


def pixel_to_ground(camera: CameraModel, t: float, row: float, col: float,
                    height: float = 0.0) -> GroundPoint:
    return camera.pixel_to_ground(t, row, col, height)


def ground_to_pixel(camera: CameraModel, window, point: GroundPoint, row=None):
    return camera.ground_to_pixel(window, point, row)


__all__ = [name for name in dir() if not name.startswith("_")]
