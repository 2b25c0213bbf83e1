"""WGS-84 ellipsoid helpers: geodetic/ECEF conversion and ray intersection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, NoIntersectionError

WGS84_A = 6_378_137.0
WGS84_F = 1.0 / 298.257_223_563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)
EARTH_ROTATION_RATE = 7.292_115_0e-5  # rad/s
EARTH_GM = 3.986_004_418e14  # m^3/s^2


@dataclass(frozen=True)
class GroundPoint:
    """Geodetic position on WGS-84 (degrees, metres)."""

    latitude: float
    longitude: float
    height: float = 0.0

    def __post_init__(self):
        if not abs(self.latitude) <= 90.0:
            raise DomainError(f"latitude {self.latitude} outside [-90, 90]")
        object.__setattr__(self, "longitude", float(normalize_longitude(self.longitude)))

    def to_ecef(self) -> np.ndarray:
        return geodetic_to_ecef(self.latitude, self.longitude, self.height)

    @classmethod
    def from_ecef(cls, xyz) -> "GroundPoint":
        lat, lon, h = ecef_to_geodetic(np.asarray(xyz, dtype=float))
        return cls(float(lat), float(lon), float(h))


def normalize_longitude(lon):
    """Wrap longitude (deg) into (-180, 180]."""
    lon = np.asarray(lon, dtype=float)
    out = np.mod(lon + 180.0, 360.0) - 180.0
    out = np.where(out == -180.0, 180.0, out)
    return out if out.ndim else float(out)


def geodetic_to_ecef(lat_deg, lon_deg, h=0.0) -> np.ndarray:
    """Geodetic (deg, m) to ECEF (m); broadcasts, returns (..., 3)."""
    lat = np.radians(lat_deg)
    lon = np.radians(lon_deg)
    h = np.asarray(h, dtype=float)
    slat, clat = np.sin(lat), np.cos(lat)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * slat**2)
    x = (n + h) * clat * np.cos(lon)
    y = (n + h) * clat * np.sin(lon)
    z = (n * (1.0 - WGS84_E2) + h) * slat
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def ecef_to_geodetic(xyz: np.ndarray):
    """ECEF (..., 3) to geodetic latitude, longitude (deg) and height (m).

    Bowring's parametric-latitude iteration; converges to well below a
    micrometre in three passes for near-Earth points.
    """
    xyz = np.asarray(xyz, dtype=float)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    p = np.hypot(x, y)
    lon = np.arctan2(y, x)
    ep2 = WGS84_E2 / (1.0 - WGS84_E2)
    beta = np.arctan2(z * WGS84_A, p * WGS84_B)
    for _ in range(4):
        lat = np.arctan2(z + ep2 * WGS84_B * np.sin(beta) ** 3,
                         p - WGS84_E2 * WGS84_A * np.cos(beta) ** 3)
        beta = np.arctan2(WGS84_B * np.sin(lat), WGS84_A * np.cos(lat))
    slat = np.sin(lat)
    # height formula stable at all latitudes
    h = p * np.cos(lat) + z * slat - WGS84_A * np.sqrt(1.0 - WGS84_E2 * slat**2)
    return np.degrees(lat), normalize_longitude(np.degrees(lon)), h


def ellipsoid_residual(xyz: np.ndarray, h: float = 0.0) -> np.ndarray:
    """Implicit-surface value of the height-offset ellipsoid (0 on surface)."""
    xyz = np.asarray(xyz, dtype=float)
    a = WGS84_A + h
    b = WGS84_B + h
    return (xyz[..., 0] ** 2 + xyz[..., 1] ** 2) / a**2 + xyz[..., 2] ** 2 / b**2 - 1.0


def intersect_ellipsoid(origin: np.ndarray, direction: np.ndarray, h=0.0,
                        *, strict: bool = True):
    """Nearer intersection of rays with the ellipsoid offset by height ``h``.

    ``origin`` and ``direction`` broadcast to (..., 3). With ``strict`` a miss
    raises :class:`NoIntersectionError`; otherwise missing rays are NaN.
    """
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    h = np.asarray(h, dtype=float)
    a = WGS84_A + h
    b = WGS84_B + h
    scale = np.stack(np.broadcast_arrays(1.0 / a, 1.0 / a, 1.0 / b), axis=-1)
    o = origin * scale
    d = direction * scale
    qa = np.sum(d * d, axis=-1)
    qb = 2.0 * np.sum(o * d, axis=-1)
    qc = np.sum(o * o, axis=-1) - 1.0
    disc = qb * qb - 4.0 * qa * qc
    miss = disc < 0.0
    if strict and np.any(miss):
        raise NoIntersectionError(f"{int(np.count_nonzero(miss))} ray(s) miss the ellipsoid")
    sq = np.sqrt(np.where(miss, np.nan, disc))
    # numerically stable smaller root
    q = -0.5 * (qb + np.copysign(sq, qb))
    t1 = q / qa
    t2 = qc / q
    t = np.minimum(t1, t2)
    behind = t <= 0.0
    if strict and np.any(behind):
        raise NoIntersectionError("ellipsoid intersection lies behind the sensor")
    t = np.where(behind, np.nan, t)
    return origin + t[..., None] * direction


def rot_x(angle):
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    o, z = np.ones_like(c), np.zeros_like(c)
    return np.stack([np.stack([o, z, z], -1),
                     np.stack([z, c, -s], -1),
                     np.stack([z, s, c], -1)], -2)


def rot_y(angle):
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    o, z = np.ones_like(c), np.zeros_like(c)
    return np.stack([np.stack([c, z, s], -1),
                     np.stack([z, o, z], -1),
                     np.stack([-s, z, c], -1)], -2)


def rot_z(angle):
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    o, z = np.ones_like(c), np.zeros_like(c)
    return np.stack([np.stack([c, -s, z], -1),
                     np.stack([s, c, z], -1),
                     np.stack([z, z, o], -1)], -2)


def local_axes(lat_deg, lon_deg) -> np.ndarray:
    """East/north/up unit vectors at a geodetic position, shape (..., 3, 3) rows."""
    lat = np.radians(lat_deg)
    lon = np.radians(lon_deg)
    sl, cl = np.sin(lat), np.cos(lat)
    so, co = np.sin(lon), np.cos(lon)
    east = np.stack([-so, co, np.zeros_like(so)], -1)
    north = np.stack([-sl * co, -sl * so, cl], -1)
    up = np.stack([cl * co, cl * so, sl], -1)
    return np.stack([east, north, up], -2)
