"""Lambert Conformal Conic (two standard parallels) on WGS-84."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError
from .earth import WGS84_A, WGS84_E2, GroundPoint, normalize_longitude

_E = math.sqrt(WGS84_E2)
MAX_ABS_LAT = 89.5


def _m(phi):
    s = np.sin(phi)
    return np.cos(phi) / np.sqrt(1.0 - WGS84_E2 * s * s)


def _t(phi):
    s = np.sin(phi)
    return np.tan(np.pi / 4 - phi / 2) / ((1 - _E * s) / (1 + _E * s)) ** (_E / 2)


@dataclass(frozen=True)
class LCCProjection:
    """Two-parallel LCC; coordinates in metres, angles in degrees."""

    lat1: float
    lat2: float
    lat0: float
    lon0: float
    false_easting: float = 0.0
    false_northing: float = 0.0
    pixel_size: float = 366.0

    def __post_init__(self):
        if self.lat1 == self.lat2:
            raise DomainError("standard parallels must be distinct")
        for lat in (self.lat1, self.lat2, self.lat0):
            if not abs(lat) < MAX_ABS_LAT:
                raise DomainError("projection parameters too close to a pole")
        if self.lat1 * self.lat2 <= 0 and abs(self.lat1 + self.lat2) < 1e-9:
            raise DomainError("standard parallels symmetric about the equator")
        if not self.pixel_size > 0:
            raise DomainError("pixel size must be positive")
        p1, p2 = math.radians(self.lat1), math.radians(self.lat2)
        m1, m2 = _m(p1), _m(p2)
        t1, t2 = _t(p1), _t(p2)
        n = (math.log(m1) - math.log(m2)) / (math.log(t1) - math.log(t2))
        f = m1 / (n * t1**n)
        object.__setattr__(self, "_n", n)
        object.__setattr__(self, "_af", WGS84_A * f)
        object.__setattr__(self, "_rho0", WGS84_A * f * _t(math.radians(self.lat0)) ** n)

    @classmethod
    def for_scene(cls, lat_c: float, lon_c: float, pixel_size: float = 366.0,
                  half_span: float = 2.0) -> "LCCProjection":
        """Default: standard parallels at the scene centre latitude +/- ``half_span``."""
        return cls(lat_c - half_span, lat_c + half_span, lat_c, lon_c, pixel_size=pixel_size)

    def forward(self, lat, lon):
        lat = np.asarray(lat, dtype=float)
        if np.any(~(np.abs(lat) < MAX_ABS_LAT)):
            raise DomainError("latitude outside the projection validity band")
        n = self._n
        rho = self._af * _t(np.radians(lat)) ** n
        theta = n * np.radians(normalize_longitude(np.asarray(lon, float) - self.lon0))
        x = self.false_easting + rho * np.sin(theta)
        y = self.false_northing + self._rho0 - rho * np.cos(theta)
        return x, y

    def inverse(self, x, y, tol: float = 1e-15, max_iter: int = 30):
        n = self._n
        dx = np.asarray(x, dtype=float) - self.false_easting
        dy = self._rho0 - (np.asarray(y, dtype=float) - self.false_northing)
        sgn = 1.0 if n > 0 else -1.0
        rho = sgn * np.hypot(dx, dy)
        theta = np.arctan2(sgn * dx, sgn * dy)
        t = (rho / self._af) ** (1.0 / n)
        phi = np.pi / 2 - 2 * np.arctan(t)
        for _ in range(max_iter):
            s = np.sin(phi)
            nxt = np.pi / 2 - 2 * np.arctan(t * ((1 - _E * s) / (1 + _E * s)) ** (_E / 2))
            done = np.all(np.abs(nxt - phi) < tol)
            phi = nxt
            if done:
                break
        lat = np.degrees(phi)
        lon = normalize_longitude(self.lon0 + np.degrees(theta / n))
        return lat, lon

    def scale_factor(self, lat):
        phi = np.radians(np.asarray(lat, dtype=float))
        return self._n * self._af * _t(phi) ** self._n / (WGS84_A * _m(phi))


def lcc_forward(proj: LCCProjection, p: GroundPoint) -> tuple[float, float]:
    x, y = proj.forward(p.latitude, p.longitude)
    return float(x), float(y)


def lcc_inverse(proj: LCCProjection, x: float, y: float) -> GroundPoint:
    lat, lon = proj.inverse(x, y)
    return GroundPoint(float(lat), float(lon))


@dataclass(frozen=True)
class MapGrid:
    """Regular raster in LCC coordinates; (row 0, col 0) is the north-west pixel centre."""

    projection: LCCProjection
    x0: float
    y0: float
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DomainError("map grid must have positive area")

    @property
    def pixel_size(self) -> float:
        return self.projection.pixel_size

    def xy(self, rows, cols):
        return (self.x0 + np.asarray(cols, float) * self.pixel_size,
                self.y0 - np.asarray(rows, float) * self.pixel_size)

    def rowcol(self, x, y):
        return ((self.y0 - np.asarray(y, float)) / self.pixel_size,
                (np.asarray(x, float) - self.x0) / self.pixel_size)

    def latlon(self, rows=None, cols=None):
        if rows is None:
            rows, cols = np.meshgrid(np.arange(self.rows), np.arange(self.cols), indexing="ij")
        return self.projection.inverse(*self.xy(rows, cols))

    @classmethod
    def covering(cls, projection: LCCProjection, lat, lon, margin_px: int = 0) -> "MapGrid":
        """Smallest grid containing all given points (footprint union)."""
        x, y = projection.forward(lat, lon)
        ok = np.isfinite(x) & np.isfinite(y)
        if not np.any(ok):
            raise DomainError("footprint has no valid points")
        ps = projection.pixel_size
        xmin, xmax = np.floor(x[ok].min() / ps) - margin_px, np.ceil(x[ok].max() / ps) + margin_px
        ymin, ymax = np.floor(y[ok].min() / ps) - margin_px, np.ceil(y[ok].max() / ps) + margin_px
        return cls(projection, xmin * ps, ymax * ps, int(ymax - ymin) + 1, int(xmax - xmin) + 1)
