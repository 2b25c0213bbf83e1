"""Frame-camera interior geometry: pixel grid, distortion and look vectors.

Body frame convention: +x along-track (flight direction), +y across-track
(increasing column), +z towards nadir. Detector rows increase along +x.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from ..errors import ConvergenceError, DomainError
from .earth import rot_x, rot_y, rot_z

FOV_EDGE_DEG = 43.5


def edge_correcting_distortion(edge_angle_deg: float = FOV_EDGE_DEG,
                               focal_length_mm: float = 20.0,
                               radius_mm: float = 20.0) -> tuple:
    """Cubic across-track coefficient placing the array edge at ``edge_angle_deg``.

    Returns coefficients (c2, c3, c4, c5) of the ideal->distorted polynomial
    ``D(t) = t + c2 t^2 + ... + c5 t^5`` on the normalised coordinate
    ``t = x / radius``.
    """
    t_edge = focal_length_mm * np.tan(np.radians(edge_angle_deg)) / radius_mm
    c3 = (1.0 - t_edge) / t_edge**3
    return (0.0, float(c3), 0.0, 0.0)


class Mode(str, Enum):
    LAC = "LAC"
    GAC = "GAC"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, Mode):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise DomainError(f"unknown acquisition mode {value!r}") from None


@dataclass(frozen=True)
class ModeLayout:
    """Onboard binning and timing of one acquisition mode."""

    mode: Mode
    row_bin: int
    col_bin: int
    bits: int
    frame_period_s: float
    base_scans: int

    def frame_shape(self, sensor: "SensorGeometry") -> tuple[int, int]:
        return sensor.active_rows // self.row_bin, sensor.active_cols // self.col_bin

    def to_physical(self, rows, cols):
        """Binned (row, col) -> physical detector coordinates of the bin centre."""
        rows = np.asarray(rows, dtype=float)
        cols = np.asarray(cols, dtype=float)
        return (self.row_bin * rows + 0.5 * (self.row_bin - 1),
                self.col_bin * cols + 0.5 * (self.col_bin - 1))

    def to_binned(self, rows, cols):
        rows = np.asarray(rows, dtype=float)
        cols = np.asarray(cols, dtype=float)
        return ((rows - 0.5 * (self.row_bin - 1)) / self.row_bin,
                (cols - 0.5 * (self.col_bin - 1)) / self.col_bin)

    @property
    def max_count(self) -> int:
        return 2**self.bits - 1


# LAC: adjacent-pair row binning, two 64 ms captures per frame.
# GAC: 6x2 binning, seven captures per frame (see README, "Timing").
LAYOUTS = {
    Mode.LAC: ModeLayout(Mode.LAC, row_bin=2, col_bin=1, bits=12, frame_period_s=0.128, base_scans=47),
    Mode.GAC: ModeLayout(Mode.GAC, row_bin=6, col_bin=2, bits=16, frame_period_s=0.448, base_scans=13),
}


def layout_for(mode, frame_period_s: float | None = None) -> ModeLayout:
    layout = LAYOUTS[Mode.parse(mode)]
    if frame_period_s is not None:
        layout = replace(layout, frame_period_s=float(frame_period_s))
    return layout


@dataclass(frozen=True)
class InteriorLayer:
    """Column-dependent small pointing corrections (radians).

    ``along`` and ``across`` hold polynomial coefficients (lowest order first)
    in the normalised column ``u = (col - centre) / half_width``. Positive
    ``along`` points further ahead, positive ``across`` towards higher columns.
    """

    along: tuple = (0.0,)
    across: tuple = (0.0,)

    def angles(self, u):
        u = np.asarray(u, dtype=float)
        return (np.polynomial.polynomial.polyval(u, np.asarray(self.along, float)),
                np.polynomial.polynomial.polyval(u, np.asarray(self.across, float)))

    def __add__(self, other: "InteriorLayer") -> "InteriorLayer":
        if other is None:
            return self
        a = np.polynomial.polynomial.polyadd(self.along, other.along)
        c = np.polynomial.polynomial.polyadd(self.across, other.across)
        return InteriorLayer(tuple(float(v) for v in a), tuple(float(v) for v in c))

    __radd__ = __add__

    def is_zero(self) -> bool:
        return not (np.any(np.asarray(self.along)) or np.any(np.asarray(self.across)))


@dataclass(frozen=True)
class SensorGeometry:
    focal_length_mm: float = 20.0
    pixel_pitch_um: float = 10.0
    active_cols: int = 4000
    active_rows: int = 48
    tilt_deg: float = 0.0
    alignment: tuple = (0.0, 0.0, 0.0)  # roll, pitch, yaw mounting angles (rad)
    distortion_x: tuple = field(default_factory=edge_correcting_distortion)
    distortion_y: tuple = (0.0, 0.0, 0.0, 0.0)
    distortion_radius_mm: float = 20.0

    def __post_init__(self):
        if not self.focal_length_mm > 0:
            raise DomainError("focal_length_mm must be positive")
        if not self.pixel_pitch_um > 0:
            raise DomainError("pixel_pitch_um must be positive")
        if self.active_cols < 1 or self.active_rows < 1:
            raise DomainError("detector must have at least one row and column")
        if abs(self.tilt_deg) > 20.0:
            raise DomainError(f"tilt {self.tilt_deg} deg outside +/-20 deg")
        for name in ("distortion_x", "distortion_y"):
            coeffs = getattr(self, name)
            if len(coeffs) > 4:
                raise DomainError(f"{name}: polynomial degree must be <= 5")
        object.__setattr__(self, "alignment", tuple(float(a) for a in self.alignment))
        object.__setattr__(self, "distortion_x", tuple(float(a) for a in self.distortion_x))
        object.__setattr__(self, "distortion_y", tuple(float(a) for a in self.distortion_y))

    @classmethod
    def ideal(cls, **kw) -> "SensorGeometry":
        """Pinhole camera without distortion."""
        kw.setdefault("distortion_x", (0.0, 0.0, 0.0, 0.0))
        return cls(**kw)

    @property
    def pitch_mm(self) -> float:
        return self.pixel_pitch_um * 1e-3

    @property
    def center_row(self) -> float:
        return 0.5 * (self.active_rows - 1)

    @property
    def center_col(self) -> float:
        return 0.5 * (self.active_cols - 1)

    @property
    def ifov_rad(self) -> float:
        """Nadir angular pixel size."""
        return self.pitch_mm / self.focal_length_mm

    def normalized_col(self, cols):
        return (np.asarray(cols, dtype=float) - self.center_col) / (0.5 * self.active_cols)

    # -- distortion ------------------------------------------------------------

    def _poly(self, coeffs, t):
        out = t.copy()
        tk = t * t
        for c in coeffs:
            if c:
                out = out + c * tk
            tk = tk * t
        return out

    def _dpoly(self, coeffs, t):
        out = np.ones_like(t)
        tk = t
        for k, c in enumerate(coeffs, start=2):
            if c:
                out = out + k * c * tk
            tk = tk * t
        return out

    def distort(self, x_ideal, y_ideal):
        """Ideal focal-plane position (mm) -> distorted (measured) position (mm)."""
        r = self.distortion_radius_mm
        x = np.asarray(x_ideal, dtype=float) / r
        y = np.asarray(y_ideal, dtype=float) / r
        return r * self._poly(self.distortion_x, x), r * self._poly(self.distortion_y, y)

    def undistort(self, x_dist, y_dist, tol: float = 1e-14, max_iter: int = 50):
        """Invert :meth:`distort` per axis with Newton iterations."""
        r = self.distortion_radius_mm
        out = []
        for coeffs, v in ((self.distortion_x, x_dist), (self.distortion_y, y_dist)):
            target = np.asarray(v, dtype=float) / r
            if not any(coeffs):
                out.append(target * r)
                continue
            t = target.copy()
            for _ in range(max_iter):
                step = (self._poly(coeffs, t) - target) / self._dpoly(coeffs, t)
                t = t - step
                if np.all(np.abs(step) < tol):
                    break
            else:
                raise ConvergenceError("distortion inversion did not converge",
                                       residual=float(np.max(np.abs(step))))
            out.append(t * r)
        return out[0], out[1]

    # -- pixel <-> focal plane --------------------------------------------------

    def check_pixel(self, rows, cols):
        rows = np.asarray(rows, dtype=float)
        cols = np.asarray(cols, dtype=float)
        bad = ((rows < -0.5) | (rows >= self.active_rows)
               | (cols < -0.5) | (cols >= self.active_cols) | ~np.isfinite(rows + cols))
        if np.any(bad):
            raise DomainError("pixel index outside the detector array")

    def focal_plane(self, rows, cols):
        """Distorted focal-plane position (mm) of fractional pixel indices."""
        x = (np.asarray(cols, dtype=float) - self.center_col) * self.pitch_mm
        y = (np.asarray(rows, dtype=float) - self.center_row) * self.pitch_mm
        return x, y

    def mounting_matrix(self, tilt_deg=None) -> np.ndarray:
        """Payload-to-body rotation: tilt about the across-track axis after alignment."""
        tilt = self.tilt_deg if tilt_deg is None else tilt_deg
        roll, pitch, yaw = self.alignment
        align = rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)
        return rot_y(np.radians(tilt)) @ align

    def camera_directions(self, rows, cols, interior: InteriorLayer | None = None,
                          check: bool = True) -> np.ndarray:
        """Unit look directions in the payload frame (before alignment and tilt)."""
        rows, cols = np.broadcast_arrays(np.asarray(rows, float), np.asarray(cols, float))
        if check:
            self.check_pixel(rows, cols)
        xd, yd = self.focal_plane(rows, cols)
        xi, yi = self.undistort(xd, yd)
        v = np.stack([yi, xi, np.full_like(xi, self.focal_length_mm)], axis=-1)
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
        if interior is not None and not interior.is_zero():
            along, across = interior.angles(self.normalized_col(cols))
            rot = rot_y(along) @ rot_x(-across)
            v = np.einsum("...ij,...j->...i", rot, v)
        return v


def look_vector(sensor: SensorGeometry, row, col, interior: InteriorLayer | None = None,
                tilt_deg: float | None = None) -> np.ndarray:
    """Unit body-frame look vector of a (fractional) detector pixel."""
    v = sensor.camera_directions(row, col, interior)
    return np.einsum("ij,...j->...i", sensor.mounting_matrix(tilt_deg), v)


def across_track_angle(v) -> np.ndarray:
    """Signed across-track angle (deg) of body-frame vectors."""
    v = np.asarray(v, dtype=float)
    return np.degrees(np.arctan2(v[..., 1], v[..., 2]))


def along_track_angle(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.degrees(np.arctan2(v[..., 0], v[..., 2]))
