"""Rigorous camera model: detector pixel <-> WGS-84 ground at a given time."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ..errors import ConvergenceError, DataError, DomainError, NotVisibleError
from .earth import GroundPoint, ecef_to_geodetic, intersect_ellipsoid
from .orbit import AttitudeProvider, Ephemeris, OrbitElements, attitude_matrix, lvlh_matrix
from .sensor import InteriorLayer, Mode, SensorGeometry, layout_for

NEWTON_MAX_ITER = 50
NEWTON_TOL_PX = 1e-4


@dataclass(frozen=True)
class TiltSchedule:
    """Piecewise-linear payload tilt (deg) versus time."""

    times: tuple = (0.0,)
    angles_deg: tuple = (0.0,)

    def __post_init__(self):
        if len(self.times) != len(self.angles_deg) or not self.times:
            raise DomainError("tilt schedule needs matching, non-empty times and angles")
        if np.any(np.abs(self.angles_deg) > 20.0):
            raise DomainError("tilt outside +/-20 deg")
        if np.any(np.diff(self.times) <= 0):
            raise DataError("tilt schedule times must increase")

    @classmethod
    def constant(cls, deg: float) -> "TiltSchedule":
        return cls((0.0,), (float(deg),))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if len(self.times) == 1:
            return np.full(t.shape, float(self.angles_deg[0]))
        return np.interp(t, self.times, self.angles_deg)


@dataclass(frozen=True)
class Jitter:
    """Sinusoidal roll/pitch jitter (truth-side only)."""

    amplitude_deg: float = 0.0
    frequency_hz: float = 1.0
    phase: float = 0.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        a = math.radians(self.amplitude_deg)
        w = 2.0 * math.pi * self.frequency_hz
        return a * np.sin(w * t + self.phase), a * np.cos(1.3 * w * t + self.phase)


@dataclass(frozen=True)
class CameraModel:
    """Pixel-to-ground model for one band of the frame camera.

    Pixel coordinates are physical detector indices. Attitude offsets model
    calibration corrections (processing) or injected errors (simulation):
    the pitch used is ``pitch(t) + pitch_bias + tilt_slope*tilt + tilt_intercept``.
    """

    sensor: SensorGeometry = field(default_factory=SensorGeometry)
    orbit: OrbitElements = field(default_factory=OrbitElements)
    attitude: AttitudeProvider = field(default_factory=AttitudeProvider)
    tilt: TiltSchedule | None = None
    interior: InteriorLayer | None = None
    roll_bias: float = 0.0
    pitch_bias: float = 0.0
    tilt_pitch_slope: float = 0.0  # rad per deg of tilt
    tilt_pitch_intercept: float = 0.0
    jitter: Jitter | None = None

    def __post_init__(self):
        if self.tilt is None:
            object.__setattr__(self, "tilt", TiltSchedule.constant(self.sensor.tilt_deg))

    def with_(self, **kw) -> "CameraModel":
        return replace(self, **kw)

    # -- time-dependent frames -------------------------------------------------

    def state(self, t):
        return Ephemeris(self.orbit).state(t)

    def tilt_deg(self, t):
        return self.tilt(t)

    def attitude_angles(self, t):
        t = np.asarray(t, dtype=float)
        roll, pitch, yaw = self.attitude.angles(t)
        tilt = self.tilt(t)
        roll = roll + self.roll_bias
        pitch = pitch + self.pitch_bias + self.tilt_pitch_slope * tilt + self.tilt_pitch_intercept
        if self.jitter is not None:
            jr, jp = self.jitter(t)
            roll = roll + jr
            pitch = pitch + jp
        return roll, pitch, yaw

    def payload_to_ecef(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Satellite position and payload->ECEF rotation at time(s) ``t``."""
        t = np.asarray(t, dtype=float)
        r, v = self.state(t)
        m = lvlh_matrix(r, v) @ attitude_matrix(*self.attitude_angles(t))
        mount = np.stack([self.sensor.mounting_matrix(a) for a in np.atleast_1d(self.tilt(t))])
        mount = mount.reshape(t.shape + (3, 3))
        return r, m @ mount

    # -- forward ---------------------------------------------------------------

    def camera_directions(self, rows, cols, check: bool = True):
        return self.sensor.camera_directions(rows, cols, self.interior, check=check)

    def pixel_to_ground_ecef(self, t, rows, cols, h=0.0, *, strict: bool = True,
                             check: bool = True) -> np.ndarray:
        """ECEF ground points for pixels observed at time(s) ``t`` (broadcast)."""
        t, rows, cols = np.broadcast_arrays(np.asarray(t, float), np.asarray(rows, float),
                                            np.asarray(cols, float))
        dirs = self.camera_directions(rows, cols, check=check)
        if t.size and np.all(t == t.flat[0]):
            pos, rot = self.payload_to_ecef(t.flat[0])
            d = dirs @ rot.T
            return intersect_ellipsoid(pos, d, h, strict=strict)
        pos, rot = self.payload_to_ecef(t)
        d = np.einsum("...ij,...j->...i", rot, dirs)
        return intersect_ellipsoid(pos, d, h, strict=strict)

    def pixel_to_ground(self, t: float, row: float, col: float, h: float = 0.0) -> GroundPoint:
        return GroundPoint.from_ecef(self.pixel_to_ground_ecef(t, row, col, h))

    # -- inverse ---------------------------------------------------------------

    def _project_closed_form(self, vc):
        """Camera-frame direction -> pixel ignoring the interior layer."""
        s = self.sensor
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = s.focal_length_mm * vc[..., 1] / vc[..., 2]
            yi = s.focal_length_mm * vc[..., 0] / vc[..., 2]
        xd, yd = s.distort(xi, yi)
        return yd / s.pitch_mm + s.center_row, xd / s.pitch_mm + s.center_col

    def project_at(self, t: float, ecef: np.ndarray, *, tol: float = NEWTON_TOL_PX,
                   max_iter: int = NEWTON_MAX_ITER):
        """Fractional pixel (row, col) where ECEF points appear at time ``t``.

        Returns ``(rows, cols, in_front)``; points behind the camera get NaN.
        With an interior layer the 2-D collinearity residual is solved by
        damped Newton iterations started from the closed-form solution.
        """
        ecef = np.asarray(ecef, dtype=float)
        pos, rot = self.payload_to_ecef(float(t))
        vc = (ecef - pos) @ rot  # rot^T applied row-wise
        in_front = vc[..., 2] > 0
        vc = np.where(in_front[..., None], vc, np.nan)
        rows, cols = self._project_closed_form(vc)
        if self.interior is None or self.interior.is_zero():
            return rows, cols, in_front
        target = np.stack([vc[..., 0] / vc[..., 2], vc[..., 1] / vc[..., 2]], -1)
        s = self.sensor

        def residual(r, c):
            d = s.camera_directions(r, c, self.interior, check=False)
            return np.stack([d[..., 0] / d[..., 2], d[..., 1] / d[..., 2]], -1) - target

        # start by removing the interior rotation evaluated at the first guess
        res = residual(rows, cols)
        h = 1e-3
        for _ in range(max_iter):
            jr = (residual(rows + h, cols) - res) / h
            jc = (residual(rows, cols + h) - res) / h
            det = jr[..., 0] * jc[..., 1] - jc[..., 0] * jr[..., 1]
            dr = (jc[..., 1] * res[..., 0] - jc[..., 0] * res[..., 1]) / det
            dc = (-jr[..., 1] * res[..., 0] + jr[..., 0] * res[..., 1]) / det
            step = 1.0
            norm0 = np.linalg.norm(res, axis=-1)
            for _ in range(6):
                nr, nc = rows - step * dr, cols - step * dc
                nres = residual(nr, nc)
                worse = np.linalg.norm(nres, axis=-1) > norm0 * (1 + 1e-12) + 1e-18
                if not np.any(worse & np.isfinite(norm0)):
                    break
                step *= 0.5
            rows, cols, res = nr, nc, nres
            done = ~np.isfinite(dr) | (np.hypot(step * dr, step * dc) < tol)
            if np.all(done | ~in_front):
                break
        else:
            raise ConvergenceError("ground_to_pixel Newton iteration did not converge",
                                   residual=float(np.nanmax(np.linalg.norm(res, axis=-1))))
        return rows, cols, in_front

    def in_array(self, rows, cols, margin: float = 0.0):
        s = self.sensor
        return ((rows >= -0.5 - margin) & (rows < s.active_rows - 0.5 + margin)
                & (cols >= -0.5 - margin) & (cols < s.active_cols - 0.5 + margin))

    def ground_to_pixel_at(self, t: float, point) -> tuple[float, float]:
        """Pixel of a single ground point in the snapshot taken at time ``t``."""
        xyz = point.to_ecef() if isinstance(point, GroundPoint) else np.asarray(point, float)
        r, c, front = self.project_at(t, xyz[None, :])
        if not front[0] or not self.in_array(r, c)[0]:
            raise NotVisibleError("ground point outside the frame at the requested time")
        return float(r[0]), float(c[0])

    def ground_to_pixel(self, window: tuple[float, float], point, row: float | None = None,
                        *, tol: float = NEWTON_TOL_PX, max_iter: int = NEWTON_MAX_ITER):
        """Time and pixel at which ``point`` crosses detector ``row`` within ``window``.

        A degenerate window ``(t, t)`` inverts the snapshot at ``t`` directly.
        Otherwise the time is found by Newton iterations on the along-track
        residual with bisection fallback (the row coordinate decreases
        monotonically as the ground moves backwards through the frame).
        """
        t0, t1 = float(window[0]), float(window[1])
        if t1 < t0:
            raise DomainError("time window must be ordered")
        if t0 == t1:
            r, c = self.ground_to_pixel_at(t0, point)
            return t0, r, c
        xyz = point.to_ecef() if isinstance(point, GroundPoint) else np.asarray(point, float)
        target = self.sensor.center_row if row is None else float(row)

        def f(t):
            r, c, front = self.project_at(t, xyz[None, :], tol=tol * 0.1)
            if not front[0]:
                return np.nan, np.nan
            return float(r[0]) - target, float(c[0])

        fa, _ = f(t0)
        fb, _ = f(t1)
        if not (np.isfinite(fa) and np.isfinite(fb)) or fa * fb > 0:
            raise NotVisibleError("ground point does not cross the detector row in the window")
        lo, hi = (t0, t1) if fa > 0 else (t1, t0)
        t = t0 + (t1 - t0) * fa / (fa - fb)
        dt = 1e-3
        for _ in range(max_iter):
            ft, col = f(t)
            if abs(ft) < tol:
                if not -0.5 <= col < self.sensor.active_cols - 0.5:
                    raise NotVisibleError("ground point outside the swath")
                return t, target, col
            if ft > 0:
                lo = t
            else:
                hi = t
            deriv = (f(t + dt)[0] - ft) / dt
            cand = t - ft / deriv if deriv else np.nan
            if not np.isfinite(cand) or not min(lo, hi) < cand < max(lo, hi):
                cand = 0.5 * (lo + hi)
            t = cand
        raise ConvergenceError("time search did not converge", residual=abs(ft))


@dataclass(frozen=True)
class VirtualLinearModel:
    """Single-line sensor spanning the acquisition; defines the L1B grid.

    Line ``i`` is observed at ``start_time + i * line_period`` through the
    per-column payload-frame directions in ``pointing``.
    """

    start_time: float
    line_period: float
    num_scans: int
    num_pixels: int
    pointing: np.ndarray
    mode: Mode = Mode.LAC

    def line_times(self, lines=None):
        lines = np.arange(self.num_scans) if lines is None else np.asarray(lines, float)
        return self.start_time + lines * self.line_period

    def ground_ecef(self, camera: CameraModel, lines=None, pixels=None, h=0.0,
                    strict: bool = False) -> np.ndarray:
        """ECEF grid (lines x pixels x 3) seen by the virtual sensor."""
        lines = np.arange(self.num_scans) if lines is None else np.asarray(lines)
        pixels = np.arange(self.num_pixels) if pixels is None else np.asarray(pixels)
        times = self.line_times(lines)
        pos, rot = camera.payload_to_ecef(times)
        dirs = self.pointing[pixels]
        d = np.einsum("lij,pj->lpi", rot, dirs)
        return intersect_ellipsoid(pos[:, None, :], d, h, strict=strict)

    def ground(self, camera: CameraModel, line: float, pixel: int, h: float = 0.0) -> GroundPoint:
        t = self.start_time + line * self.line_period
        pos, rot = camera.payload_to_ecef(t)
        return GroundPoint.from_ecef(intersect_ellipsoid(pos, rot @ self.pointing[pixel], h))


def num_scans_for(mode, total_frames: int) -> int:
    """Output scan lines of the L1B buffer: base (47 LAC / 13 GAC) + 2 per extra frame."""
    if total_frames < 1:
        raise DomainError("at least one raw frame is required")
    return layout_for(mode).base_scans + 2 * (int(total_frames) - 1)


def build_virtual_linear_model(frames: Sequence, mode, sensor: SensorGeometry | None = None,
                               frame_period_s: float | None = None) -> VirtualLinearModel:
    """Virtual linear sensor for a stack of frames.

    ``frames`` may hold frame objects with ``start_time`` or bare times. The
    line period is half the frame period (two output scans per frame) and
    the pointing follows the trailing detector row so that scan 0 lies on the
    first ground line seen by frame 0.
    """
    sensor = sensor or SensorGeometry()
    mode = Mode.parse(mode)
    times = np.array([getattr(f, "start_time", f) for f in frames], dtype=float)
    if times.size == 0:
        raise DomainError("empty frame stack")
    if np.any(np.diff(times) <= 0):
        raise DataError("frame timestamps must be strictly increasing")
    if frame_period_s is None:
        frame_period_s = float(np.median(np.diff(times))) if times.size > 1 \
            else layout_for(mode).frame_period_s
    layout = layout_for(mode)
    n_pix = sensor.active_cols // layout.col_bin
    _, phys_cols = layout.to_physical(np.zeros(n_pix), np.arange(n_pix))
    pointing = sensor.camera_directions(np.zeros(n_pix), phys_cols)
    return VirtualLinearModel(
        start_time=float(times[0]),
        line_period=0.5 * frame_period_s,
        num_scans=num_scans_for(mode, times.size),
        num_pixels=n_pix,
        pointing=pointing,
        mode=mode,
    )


def ground_to_latlon(ecef: np.ndarray):
    lat, lon, _ = ecef_to_geodetic(ecef)
    return lat, lon
