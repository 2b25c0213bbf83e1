"""Frame-wise radiometric chain: dark, PRNU, frame-transfer smear and radiance.

Processing order for a raw frame ``V``::

    x = V - DS            (correct_dark)
    x = x * gain          (apply_prnu)
    x = W^-1 x            (correct_smear)
    L = Nonlin(x) * C + D (radiance_from_counts)

All working arrays are float64.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
from scipy import stats

from .errors import (CalibrationMissingError, ConditioningError, DegenerateReferenceError,
                     DomainError, InsufficientDataError, InvalidTimingError)
from .geom.earth import WGS84_A
from .geom.orbit import OrbitElements
from .frames import RawFrame
from .geom.sensor import Mode, SensorGeometry, layout_for

log = logging.getLogger(__name__)

DEFAULT_PORTS = 4
# dark rows are emitted every N frames
DARK_CADENCE = {Mode.LAC: 4, Mode.GAC: 12}


def port_ranges(ncols: int, nports: int = DEFAULT_PORTS) -> list[tuple[int, int]]:
    """Equal partition of the columns into readout-port ranges ``[start, stop)``."""
    if nports < 1 or nports > ncols:
        raise DomainError("invalid number of ports")
    edges = np.linspace(0, ncols, nports + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


# -- dark ------------------------------------------------------------------------


@dataclass
class DarkReference:
    """Night-time dark signal of one band.

    ``profile`` is the column-wise mean image dark (length = frame columns),
    ``row_profile`` the mean shielded-row signal (length = dark-row width,
    mapped to frame columns starting at ``row_offset``).
    """

    band: int
    profile: np.ndarray
    row_profile: np.ndarray
    ports: list = field(default_factory=list)
    row_offset: int = 0

    def __post_init__(self):
        self.profile = np.asarray(self.profile, dtype=float)
        self.row_profile = np.asarray(self.row_profile, dtype=float)
        if not self.ports:
            self.ports = port_ranges(self.profile.size)
        self.ports = [tuple(int(v) for v in p) for p in self.ports]
        starts = [p[0] for p in self.ports]
        stops = [p[1] for p in self.ports]
        if starts[0] != 0 or stops[-1] != self.profile.size or starts[1:] != stops[:-1]:
            raise DomainError("port ranges must partition the columns")

    @property
    def covered(self) -> np.ndarray:
        """Frame columns that have a shielded-row counterpart."""
        cols = np.arange(self.profile.size)
        return (cols >= self.row_offset) & (cols < self.row_offset + self.row_profile.size)


def build_dark_reference(night_frames: Sequence[np.ndarray], night_dark_rows: Sequence[np.ndarray],
                         band: int, nports: int = DEFAULT_PORTS, row_offset: int = 0) -> DarkReference:
    """Reference profiles from a night-imaging session (column means over frames and rows)."""
    frames = np.asarray([np.asarray(f, float) for f in night_frames])
    if frames.size == 0 or len(night_dark_rows) == 0:
        raise InsufficientDataError("night session has no frames or dark rows")
    profile = frames.mean(axis=(0, 1))
    row_profile = np.mean([np.asarray(r, float) for r in night_dark_rows], axis=0)
    return DarkReference(band, profile, row_profile, port_ranges(profile.size, nports), row_offset)


def model_dark(dark_rows: Sequence[np.ndarray], ref: DarkReference, band: int | None = None):
    """Per-column dark estimate for one cadence window.

    Each port's reference profile is scaled by
    ``median(dark row over port) / median(reference row over port)``.
    Returns ``(estimate, flags)``; ``flags`` marks columns without a
    shielded-row counterpart and ports without any coverage (scale 1).
    """
    if band is not None and band != ref.band:
        raise DomainError(f"dark reference is for band {ref.band}, not {band}")
    rows = [np.asarray(r, dtype=float) for r in dark_rows]
    if not rows:
        raise InsufficientDataError("no dark rows in the cadence window")
    current = np.mean(rows, axis=0)
    if current.shape != ref.row_profile.shape:
        raise DomainError("dark row length does not match the reference")
    estimate = np.empty_like(ref.profile)
    flags = ~ref.covered
    for a, b in ref.ports:
        lo = max(a - ref.row_offset, 0)
        hi = min(b - ref.row_offset, ref.row_profile.size)
        if hi <= lo:
            scale = 1.0
            flags[a:b] = True
        else:
            denom = np.median(ref.row_profile[lo:hi])
            if denom == 0:
                raise DegenerateReferenceError(f"reference median is zero on port [{a},{b})")
            scale = np.median(current[lo:hi]) / denom
        estimate[a:b] = ref.profile[a:b] * scale
    return estimate, flags


def dark_estimates(frames: Sequence[RawFrame], ref: DarkReference, cadence: int | None = None):
    """Dark estimate for every frame of a single-band sequence.

    Frames are grouped in windows of ``cadence`` frames. A window without a
    dark row borrows the nearest-in-time row and is flagged.
    Returns ``(estimates (F, cols), fallback (F,) bool)``.
    """
    if not frames:
        raise DomainError("no frames")
    cadence = cadence or DARK_CADENCE[frames[0].mode]
    with_dark = [i for i, f in enumerate(frames) if f.dark_row is not None]
    if not with_dark:
        raise InsufficientDataError("no shielded-row samples in the sequence")
    times = np.array([frames[i].start_time for i in with_dark])
    out = np.empty((len(frames), ref.profile.size))
    fallback = np.zeros(len(frames), dtype=bool)
    for w0 in range(0, len(frames), cadence):
        members = range(w0, min(w0 + cadence, len(frames)))
        rows = [frames[i].dark_row for i in members if frames[i].dark_row is not None]
        if not rows:
            t = frames[w0].start_time
            rows = [frames[with_dark[int(np.argmin(np.abs(times - t)))]].dark_row]
            fallback[list(members)] = True
            log.warning("no dark row in frames %d..%d; using nearest in time", w0, members[-1])
        est, _ = model_dark(rows, ref)
        out[list(members)] = est
    return out, fallback


def correct_dark(frame, dark) -> np.ndarray:
    """``counts - dark`` per column, no clamping."""
    values = frame.counts if isinstance(frame, RawFrame) else frame
    values = np.asarray(values, dtype=float)
    dark = np.asarray(dark, dtype=float)
    if dark.ndim == 1 and dark.shape[0] != values.shape[-1]:
        raise DomainError(f"dark length {dark.shape[0]} != {values.shape[-1]} columns")
    return values - dark


# -- PRNU ------------------------------------------------------------------------


@dataclass
class PRNUTable:
    band: int
    gains: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=float)
        if self.mask is None:
            self.mask = np.zeros(self.gains.shape, dtype=bool)
        if np.any(self.gains <= 0):
            raise DomainError("PRNU gains must be positive")

    @classmethod
    def unit(cls, band: int, ncols: int) -> "PRNUTable":
        return cls(band, np.ones(ncols))


def estimate_prnu(scene_stack, band: int, min_scenes: int = 50, trim: float = 0.1,
                  normalize_scenes: bool = True) -> PRNUTable:
    """Relative column gains from a stack of radiometrically diverse frames.

    ``scene_stack`` is (scenes, rows, cols) of dark-corrected values. Each
    column's trimmed mean over all scenes and rows is compared with the grand
    mean; gains are then renormalised to mean 1. With ``normalize_scenes`` each
    scene is first divided by its own mean so bright scenes do not dominate.
    """
    stack = np.asarray(scene_stack, dtype=float)
    if stack.ndim == 2:
        stack = stack[:, None, :]
    if stack.shape[0] < min_scenes:
        raise InsufficientDataError(f"PRNU needs >= {min_scenes} scenes, got {stack.shape[0]}")
    if normalize_scenes:
        means = stack.mean(axis=(1, 2), keepdims=True)
        stack = np.divide(stack, means, out=np.zeros_like(stack), where=means != 0)
    samples = stack.reshape(-1, stack.shape[-1])
    col_mean = stats.trim_mean(samples, trim, axis=0)
    dead = ~(np.abs(col_mean) > 1e-12 * max(np.abs(col_mean).max(), 1e-300))
    gains = np.ones_like(col_mean)
    live = ~dead
    if not np.any(live):
        raise InsufficientDataError("all columns are dead")
    gains[live] = col_mean[live].mean() / col_mean[live]
    gains[live] /= gains[live].mean()
    if np.any(dead):
        log.warning("band %d: %d dead column(s) masked", band, int(dead.sum()))
    return PRNUTable(band, gains, dead)


def apply_prnu(frame, table: PRNUTable, band: int | None = None) -> np.ndarray:
    """Multiply each column by its relative gain."""
    fb = getattr(frame, "band", band)
    if fb is not None and fb != table.band:
        raise DomainError(f"PRNU table for band {table.band} applied to band {fb}")
    values = frame.counts if isinstance(frame, RawFrame) else frame
    return np.asarray(values, dtype=float) * table.gains


# -- smear -----------------------------------------------------------------------


def nominal_row_rate(orbit=None, sensor=None) -> float:
    """Physical detector rows swept per second by the ground at nadir."""
    orbit = orbit or OrbitElements()
    sensor = sensor or SensorGeometry()
    ground_speed = orbit.mean_motion * WGS84_A
    return ground_speed / (orbit.altitude_m * sensor.ifov_rad)


def _shift_matrix(n: int, shift: float) -> np.ndarray:
    """Linear-interpolation operator sampling row ``i + shift`` with edge clamping."""
    pos = np.clip(np.arange(n) + shift, 0, n - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    frac = pos - lo
    s = np.zeros((n, n))
    s[np.arange(n), lo] += 1 - frac
    s[np.arange(n), hi] += frac
    return s


@dataclass
class SmearModel:
    """Frame-transfer smear operator at binned-row resolution.

    ``weights_raw`` carries the energy bookkeeping (row sums
    ``1 + eps*(row_bin*rows - 1)``); ``weights`` is the same operator scaled to
    unit row sums, so that a flat field is a fixed point and absolute gain
    stays in the radiance coefficients.
    """

    mode: Mode
    row_transfer_us: float
    total_rows: int
    integration_ms: float
    rows: int
    row_bin: int
    advance: float
    epsilon: float
    weights_raw: np.ndarray
    weights: np.ndarray
    condition: float
    _lu: tuple = field(default=None, repr=False)

    def __post_init__(self):
        if self._lu is None:
            self._lu = scipy.linalg.lu_factor(self.weights)


def build_smear_weights(mode="LAC", integration_ms: float = 64.0, row_transfer_us: float = 2.0,
                        total_rows: int = 54, rows: int | None = None, row_bin: int | None = None,
                        advance: float | None = None, active_rows: int = 48,
                        max_condition: float = 1e8) -> SmearModel:
    """Weights matrix ``W`` with ``measured = W @ true`` per column.

    A packet read out of binned row ``i`` picks up ``eps`` of every row it
    crosses. Packets leaving after integration cross the rows below (scene of
    the following instant, shifted by ``advance`` binned rows); packets
    entering before integration cross the rows above (preceding scene).
    Missing neighbour-frame samples are estimated from the current frame.
    """
    mode = Mode.parse(mode)
    layout = layout_for(mode)
    row_bin = row_bin or layout.row_bin
    rows = rows or active_rows // row_bin
    if advance is None:
        advance = nominal_row_rate() * layout.frame_period_s / row_bin
    if not integration_ms > 0 or not row_transfer_us >= 0:
        raise InvalidTimingError("timings must be positive")
    eps = row_transfer_us * 1e-3 / integration_ms
    if eps >= 1 or total_rows * row_transfer_us * 1e-3 >= integration_ms:
        raise InvalidTimingError(f"transfer time not small against integration (eps={eps:g})")
    b = row_bin
    lower = np.tril(np.ones((rows, rows)), -1)
    upper = np.triu(np.ones((rows, rows)), 1)
    s_next = _shift_matrix(rows, advance)
    s_prev = _shift_matrix(rows, -advance)
    within = 0.5 * (b - 1)
    extra = b * lower @ s_next + within * s_next + b * upper @ s_prev + within * s_prev
    w_raw = np.eye(rows) + eps * extra
    w = w_raw / w_raw.sum(axis=1, keepdims=True)
    cond = float(np.linalg.cond(w))
    if not cond <= max_condition:
        raise ConditioningError(f"smear matrix condition number {cond:.3g} exceeds {max_condition:g}")
    return SmearModel(mode, row_transfer_us, total_rows, integration_ms, rows, b, float(advance),
                      eps, w_raw, w, cond)


def apply_smear(frames, model: SmearModel) -> np.ndarray:
    """Forward smear of one frame (rows, cols) or a stack (..., rows, cols)."""
    x = np.asarray(frames, dtype=float)
    if x.shape[-2] != model.rows:
        raise DomainError(f"frame has {x.shape[-2]} rows, smear model {model.rows}")
    return np.einsum("ij,...jk->...ik", model.weights, x)


def correct_smear(frame, model: SmearModel) -> np.ndarray:
    """Solve ``W s = m`` column-wise."""
    m = np.asarray(frame, dtype=float)
    if m.shape[-2] != model.rows:
        raise DomainError(f"frame has {m.shape[-2]} rows, smear model {model.rows}")
    if m.ndim == 2:
        return scipy.linalg.lu_solve(model._lu, m)
    flat = np.moveaxis(m, -2, 0).reshape(model.rows, -1)
    out = scipy.linalg.lu_solve(model._lu, flat)
    return np.moveaxis(out.reshape((model.rows,) + m.shape[:-2] + m.shape[-1:]), 0, -2)


# -- radiance --------------------------------------------------------------------


@dataclass
class BandCoeffs:
    """Count-to-radiance coefficients of one band.

    ``c`` and ``d`` are scalars or per-row vectors. ``lut_x``/``lut_y`` define
    a strictly increasing piecewise-linear Nonlin (linear extrapolation);
    empty means identity.
    """

    c: np.ndarray | float = 0.01
    d: np.ndarray | float = 0.0
    lut_x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lut_y: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.d = np.asarray(self.d, dtype=float)
        self.lut_x = np.asarray(self.lut_x, dtype=float)
        self.lut_y = np.asarray(self.lut_y, dtype=float)
        if np.any(self.c <= 0):
            raise DomainError("radiance gain C must be positive")
        if self.lut_x.shape != self.lut_y.shape:
            raise DomainError("Nonlin table axes differ in length")
        if self.lut_x.size == 1:
            raise DomainError("Nonlin table needs at least two nodes")
        if self.lut_x.size and (np.any(np.diff(self.lut_x) <= 0) or np.any(np.diff(self.lut_y) <= 0)):
            raise DomainError("Nonlin must be strictly increasing")

    def _rowwise(self, v, x):
        return v[:, None] if v.ndim == 1 and x.ndim >= 2 else v

    def nonlin(self, x):
        return _piecewise(x, self.lut_x, self.lut_y)

    def nonlin_inverse(self, y):
        return _piecewise(y, self.lut_y, self.lut_x)

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        return self.nonlin(x) * self._rowwise(self.c, x) + self._rowwise(self.d, x)

    def inverse(self, radiance):
        radiance = np.asarray(radiance, dtype=float)
        return self.nonlin_inverse((radiance - self._rowwise(self.d, radiance))
                                   / self._rowwise(self.c, radiance))


def _piecewise(x, xp, fp):
    x = np.asarray(x, dtype=float)
    if xp.size == 0:
        return x
    y = np.interp(x, xp, fp)
    lo_slope = (fp[1] - fp[0]) / (xp[1] - xp[0])
    hi_slope = (fp[-1] - fp[-2]) / (xp[-1] - xp[-2])
    y = np.where(x < xp[0], fp[0] + (x - xp[0]) * lo_slope, y)
    return np.where(x > xp[-1], fp[-1] + (x - xp[-1]) * hi_slope, y)


@dataclass
class CalibCoeffs:
    bands: dict = field(default_factory=dict)

    def for_band(self, band: int) -> BandCoeffs:
        try:
            return self.bands[int(band)]
        except KeyError:
            raise CalibrationMissingError(f"no radiance coefficients for band {band}") from None


def count_to_radiance(frame, dark, coeffs: CalibCoeffs | BandCoeffs, band: int | None = None):
    """``L = Nonlin(V - DS) * C + D``."""
    band = getattr(frame, "band", band)
    bc = coeffs if isinstance(coeffs, BandCoeffs) else coeffs.for_band(band)
    return bc.forward(correct_dark(frame, dark))


@dataclass
class RadiometricCalibration:
    """Per-band tables needed to turn raw frames into radiance."""

    dark: Mapping[int, DarkReference]
    prnu: Mapping[int, PRNUTable]
    coeffs: CalibCoeffs
    smear: SmearModel | None = None


def radiometric_correction(frames: Sequence[RawFrame], cal: RadiometricCalibration) -> np.ndarray:
    """Radiance cube (frames, rows, cols) for a single-band frame sequence."""
    if not frames:
        raise DomainError("no frames")
    band = frames[0].band
    if band not in cal.dark:
        raise CalibrationMissingError(f"no dark reference for band {band}")
    if band not in cal.prnu:
        raise CalibrationMissingError(f"no PRNU table for band {band}")
    dark, _ = dark_estimates(frames, cal.dark[band])
    x = correct_dark(np.stack([f.counts for f in frames]), dark[:, None, :])
    x = apply_prnu(x, cal.prnu[band], band)
    if cal.smear is not None:
        x = correct_smear(x, cal.smear)
    return cal.coeffs.for_band(band).forward(x)
