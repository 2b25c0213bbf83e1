"""Geometric calibration: tie-point matching, band-to-band registration,
geolocation bias estimation and the tilt-drift model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy import ndimage
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (CalibrationRejectedError, DomainError, InsufficientDataError,
                     InsufficientTiePointsError)
from .geom.earth import geodetic_to_ecef, intersect_ellipsoid
from .geom.model import CameraModel, VirtualLinearModel, build_virtual_linear_model
from .geom.sensor import InteriorLayer, Mode, SensorGeometry, layout_for

log = logging.getLogger(__name__)

REFERENCE_BAND = 7
GEOLOCATION_BAND = 10
MIN_TIE_POINTS = 10
MAX_CORRECTION_RAD = math.radians(2.0)


class TiePoint(NamedTuple):
    ref_row: float
    ref_col: float
    tgt_row: float
    tgt_col: float
    score: float

    @property
    def d_along(self) -> float:
        return self.tgt_row - self.ref_row

    @property
    def d_across(self) -> float:
        return self.tgt_col - self.ref_col


def tie_arrays(ties: Sequence[TiePoint]) -> dict:
    a = np.array(ties, dtype=float).reshape(-1, 5)
    return {"row": a[:, 0], "col": a[:, 1], "d_along": a[:, 2] - a[:, 0],
            "d_across": a[:, 3] - a[:, 1], "score": a[:, 4]}


# -- matching --------------------------------------------------------------------


def _filled(img: np.ndarray, valid: np.ndarray) -> np.ndarray:
    out = np.array(img, dtype=float)
    fill = float(np.mean(out[valid])) if np.any(valid) else 0.0
    out[~valid] = fill
    return out


def coarse_offset(reference: np.ndarray, target: np.ndarray, valid=None) -> tuple[int, int]:
    """Integer (row, col) shift of ``target`` relative to ``reference`` by phase correlation."""
    if valid is None:
        valid = np.isfinite(reference) & np.isfinite(target)
    a = _filled(reference, valid)
    b = _filled(target, valid)
    win = np.outer(np.hanning(a.shape[0]), np.hanning(a.shape[1]))
    fa = np.fft.fft2((a - a[valid].mean()) * win)
    fb = np.fft.fft2((b - b[valid].mean()) * win)
    cross = np.conj(fa) * fb
    cross /= np.maximum(np.abs(cross), 1e-30)
    corr = np.fft.ifft2(cross).real
    r, c = np.unravel_index(int(np.argmax(corr)), corr.shape)
    if r > a.shape[0] // 2:
        r -= a.shape[0]
    if c > a.shape[1] // 2:
        c -= a.shape[1]
    return int(r), int(c)


def _parabolic(cm, c0, cp):
    den = cm - 2.0 * c0 + cp
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den < 0, 0.5 * (cm - cp) / den, 0.0)


def dense_match(reference: np.ndarray, target: np.ndarray, spacing: int = 16, patch: int = 15,
                search: int = 3, threshold: float = 0.8, coarse: bool = True,
                min_points: int = MIN_TIE_POINTS, reference_valid=None, target_valid=None,
                min_std: float = 1e-9, refine: int = 5) -> list[TiePoint]:
    """Normalised cross-correlation tie points on a regular grid of nodes.

    The offset of each tie point is ``target position - reference position``.
    A global phase-correlation shift centres the search when ``coarse`` is
    set, so displacements beyond ``search`` pixels are still found.
    ``refine`` extra passes resample the target at the current estimate and
    take a 2-D Newton step on the NCC surface with a shrinking stencil,
    which removes the pixel-locking bias of a single parabolic fit.
    """
    ref = np.asarray(reference, dtype=float)
    tgt = np.asarray(target, dtype=float)
    if ref.shape != tgt.shape:
        raise DomainError("rasters must share a grid")
    if patch < 9 or patch % 2 == 0:
        raise DomainError("patch size must be odd and >= 9")
    rv = np.isfinite(ref) if reference_valid is None else (reference_valid & np.isfinite(ref))
    tv = np.isfinite(tgt) if target_valid is None else (target_valid & np.isfinite(tgt))
    if not (np.any(rv) and np.any(tv)):
        raise InsufficientTiePointsError("rasters do not overlap")
    dr0, dc0 = coarse_offset(ref, tgt, rv & tv) if coarse else (0, 0)
    h = patch // 2
    s = search
    ny, nx = ref.shape
    rows = np.arange(h, ny - h, spacing)
    cols = np.arange(h, nx - h, spacing)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    rr, cc = rr.ravel(), cc.ravel()
    ok = ((rr + dr0 - h - s >= 0) & (rr + dr0 + h + s < ny)
          & (cc + dc0 - h - s >= 0) & (cc + dc0 + h + s < nx))
    rr, cc = rr[ok], cc[ok]
    if rr.size == 0:
        raise InsufficientTiePointsError("no grid node fits the search window")

    ref_f = np.where(rv, ref, np.nan)
    tgt_f = np.where(tv, tgt, np.nan)
    rwin = sliding_window_view(ref_f, (patch, patch))
    twin = sliding_window_view(tgt_f, (patch, patch))
    rp = rwin[rr - h, cc - h].reshape(rr.size, -1)
    rp = rp - rp.mean(axis=1, keepdims=True)
    rn = np.sqrt((rp * rp).sum(axis=1))
    scores = np.full((rr.size, 2 * s + 1, 2 * s + 1), np.nan)
    for i, dy in enumerate(range(-s, s + 1)):
        for j, dx in enumerate(range(-s, s + 1)):
            tp = twin[rr - h + dr0 + dy, cc - h + dc0 + dx].reshape(rr.size, -1)
            tp = tp - tp.mean(axis=1, keepdims=True)
            tn = np.sqrt((tp * tp).sum(axis=1))
            with np.errstate(invalid="ignore", divide="ignore"):
                scores[:, i, j] = (rp * tp).sum(axis=1) / (rn * tn)
    flat = np.where(np.isfinite(scores), scores, -np.inf).reshape(rr.size, -1)
    best = np.argmax(flat, axis=1)
    bi, bj = np.divmod(best, 2 * s + 1)
    peak = flat[np.arange(rr.size), best]
    keep = (np.isfinite(peak) & (peak >= threshold) & (rn > min_std * patch)
            & (bi > 0) & (bi < 2 * s) & (bj > 0) & (bj < 2 * s))
    idx = np.nonzero(keep)[0]
    ties = []
    if idx.size:
        n = np.arange(rr.size)[idx]
        bi_, bj_ = bi[idx], bj[idx]
        sy = _parabolic(scores[n, bi_ - 1, bj_], scores[n, bi_, bj_], scores[n, bi_ + 1, bj_])
        sx = _parabolic(scores[n, bi_, bj_ - 1], scores[n, bi_, bj_], scores[n, bi_, bj_ + 1])
        dy = dr0 + bi_ - s + sy
        dx = dc0 + bj_ - s + sx
        if refine:
            dy, dx = _refine(ref_f, tgt_f, rr[idx], cc[idx], dy, dx, h, refine)
        for k, r0, c0, oy, ox, sc in zip(n, rr[idx], cc[idx], dy, dx, peak[idx]):
            if np.isfinite(oy) and np.isfinite(ox):
                ties.append(TiePoint(float(r0), float(c0), float(r0 + oy), float(c0 + ox),
                                     float(min(sc, 1.0))))
    if len(ties) < min_points:
        raise InsufficientTiePointsError(f"only {len(ties)} tie points survived (need {min_points})")
    return ties


def _ncc_rows(a, b):
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return (a * b).sum(axis=1) / np.sqrt((a * a).sum(axis=1) * (b * b).sum(axis=1))


def _refine(ref, tgt, rows, cols, dy, dx, h, passes):
    """Newton refinement of the NCC peak on a cubic-spline resampled target."""
    valid = np.isfinite(tgt)
    coef = ndimage.spline_filter(_filled(tgt, valid), order=3)
    off = np.arange(-h, h + 1, dtype=float)
    oy, ox = np.meshgrid(off, off, indexing="ij")
    py = rows[:, None] + oy.ravel()[None, :]
    px = cols[:, None] + ox.ravel()[None, :]
    rp = ref[py.astype(int), px.astype(int)]
    dy, dx = dy.astype(float).copy(), dx.astype(float).copy()

    def sample(ey, ex):
        yy = py + (dy + ey)[:, None]
        xx = px + (dx + ex)[:, None]
        v = ndimage.map_coordinates(coef, [yy.ravel(), xx.ravel()], order=3, mode="nearest",
                                    prefilter=False).reshape(yy.shape)
        return _ncc_rows(rp, v)

    for k in range(passes):
        # Newton step on a shrinking 3x3 stencil; the cross term couples the axes
        e = max(0.5**k, 0.05)
        f = {(i, j): sample(i * e, j * e) for i in (-1, 0, 1) for j in (-1, 0, 1)}
        gy = (f[1, 0] - f[-1, 0]) / (2 * e)
        gx = (f[0, 1] - f[0, -1]) / (2 * e)
        hyy = (f[1, 0] - 2 * f[0, 0] + f[-1, 0]) / e**2
        hxx = (f[0, 1] - 2 * f[0, 0] + f[0, -1]) / e**2
        hxy = (f[1, 1] - f[1, -1] - f[-1, 1] + f[-1, -1]) / (4 * e**2)
        det = hyy * hxx - hxy**2
        concave = (hyy < 0) & (det > 0)
        with np.errstate(invalid="ignore", divide="ignore"):
            step_y = np.where(concave, -(hxx * gy - hxy * gx) / det, 0.0)
            step_x = np.where(concave, -(hyy * gx - hxy * gy) / det, 0.0)
        dy += np.clip(np.nan_to_num(step_y), -e, e)
        dx += np.clip(np.nan_to_num(step_x), -e, e)
    return dy, dx


# -- statistics ------------------------------------------------------------------


def ce90(radial) -> float:
    """90th percentile of radial errors, nearest-rank convention."""
    r = np.sort(np.abs(np.asarray(radial, dtype=float).ravel()))
    if r.size < 10:
        raise InsufficientDataError("CE90 needs at least 10 samples")
    return float(r[math.ceil(0.9 * r.size) - 1])


@dataclass(frozen=True)
class ErrorStats:
    """Along/across error summary. UB/LB are the 95th/5th percentiles of
    per-column-bin medians, clamped to bracket the overall median."""

    median_along: float
    median_across: float
    ub_along: float
    lb_along: float
    ub_across: float
    lb_across: float
    mean_along: float
    mean_across: float
    sigma3_along: float
    sigma3_across: float
    ce90: float
    median_radial: float
    n: int
    units: str = "px"

    def scaled(self, factor: float, units: str) -> "ErrorStats":
        vals = {k: getattr(self, k) * factor for k in self.__dataclass_fields__
                if k not in ("n", "units")}
        return ErrorStats(**vals, n=self.n, units=units)

    def as_table(self) -> str:
        rows = [("median", self.median_along, self.median_across),
                ("UB", self.ub_along, self.ub_across), ("LB", self.lb_along, self.lb_across),
                ("mean", self.mean_along, self.mean_across),
                ("3sigma", self.sigma3_along, self.sigma3_across)]
        lines = [f"{'stat':<8}{'along':>12}{'across':>12}   [{self.units}]"]
        lines += [f"{name:<8}{a:>12.4f}{c:>12.4f}" for name, a, c in rows]
        lines.append(f"{'CE90':<8}{self.ce90:>12.4f}   n={self.n}")
        return "\n".join(lines)


def error_stats(along, across, position=None, bins: int = 10, units: str = "px") -> ErrorStats:
    along = np.asarray(along, dtype=float)
    across = np.asarray(across, dtype=float)
    if along.size < 10:
        raise InsufficientDataError("error statistics need at least 10 points")
    radial = np.hypot(along, across)
    med_a, med_c = float(np.median(along)), float(np.median(across))
    if position is None:
        position = np.arange(along.size)
    position = np.asarray(position, dtype=float)
    edges = np.linspace(position.min(), position.max() + 1e-9, bins + 1)
    which = np.clip(np.digitize(position, edges) - 1, 0, bins - 1)
    bm_a = [np.median(along[which == b]) for b in range(bins) if np.any(which == b)]
    bm_c = [np.median(across[which == b]) for b in range(bins) if np.any(which == b)]
    return ErrorStats(
        median_along=med_a, median_across=med_c,
        ub_along=max(float(np.percentile(bm_a, 95)), med_a),
        lb_along=min(float(np.percentile(bm_a, 5)), med_a),
        ub_across=max(float(np.percentile(bm_c, 95)), med_c),
        lb_across=min(float(np.percentile(bm_c, 5)), med_c),
        mean_along=float(along.mean()), mean_across=float(across.mean()),
        sigma3_along=float(3 * along.std(ddof=1)), sigma3_across=float(3 * across.std(ddof=1)),
        ce90=ce90(radial), median_radial=float(np.median(radial)), n=int(along.size), units=units)


# -- angles ----------------------------------------------------------------------


def offsets_to_angles(along_px, across_px, sensor: SensorGeometry | None = None,
                      altitude_m: float = 732_500.0, igfov_m: float | None = None):
    """Pitch (from along) and roll (from across) for pixel offsets at nadir."""
    sensor = sensor or SensorGeometry()
    g = altitude_m * sensor.ifov_rad if igfov_m is None else igfov_m
    return (np.arctan(np.asarray(along_px, float) * g / altitude_m),
            np.arctan(np.asarray(across_px, float) * g / altitude_m))


def angles_to_offsets(pitch, roll, sensor: SensorGeometry | None = None,
                      altitude_m: float = 732_500.0, igfov_m: float | None = None):
    sensor = sensor or SensorGeometry()
    g = altitude_m * sensor.ifov_rad if igfov_m is None else igfov_m
    return (np.tan(np.asarray(pitch, float)) * altitude_m / g,
            np.tan(np.asarray(roll, float)) * altitude_m / g)


# -- L1B geometry helpers --------------------------------------------------------


def product_vlm(product, sensor: SensorGeometry) -> VirtualLinearModel:
    if product.level != "L1B":
        raise DomainError("angle conversion needs an L1B product")
    g = product.grid
    layout = layout_for(product.mode)
    n = product.shape[1]
    _, pc = layout.to_physical(np.zeros(n), np.arange(n))
    return VirtualLinearModel(g["start_time"], g["line_period"], g["num_scans"], n,
                              sensor.camera_directions(np.zeros(n), pc), Mode.parse(product.mode))


def pixel_u(product, sensor: SensorGeometry, pixels) -> np.ndarray:
    """Normalised detector column of L1B product pixels."""
    _, pc = layout_for(product.mode).to_physical(0.0, np.asarray(pixels, float))
    return sensor.normalized_col(pc)


def _camera_tangents(camera: CameraModel, t, xyz):
    pos, rot = camera.payload_to_ecef(t)
    vc = np.einsum("...ji,...j->...i", rot, xyz - pos)
    return vc[..., 0] / vc[..., 2], vc[..., 1] / vc[..., 2]


def _grid_derivatives(vlm: VirtualLinearModel, camera: CameraModel, lines, pixels):
    """Ground point and its derivatives along lines and pixels (ECEF)."""
    lines = np.asarray(lines, float)
    pixels = np.asarray(pixels, float)
    p0 = np.clip(np.floor(pixels).astype(int), 0, vlm.num_pixels - 2)
    f = pixels - p0

    def ground(ls, ps):
        t = vlm.start_time + ls * vlm.line_period
        pos, rot = camera.payload_to_ecef(t)
        d = np.einsum("nij,nj->ni", rot, vlm.pointing[ps])
        return intersect_ellipsoid(pos, d, 0.0, strict=False)

    g0 = ground(lines, p0)
    g1 = ground(lines, p0 + 1)
    x = g0 + f[:, None] * (g1 - g0)
    d_pix = g1 - g0
    gl = ground(lines + 1.0, p0) + f[:, None] * (ground(lines + 1.0, p0 + 1) - ground(lines + 1.0, p0))
    return x, gl - x, d_pix


# -- band-to-band registration ---------------------------------------------------


@dataclass
class BBRProfile:
    """Per-band registration offsets relative to the reference band.

    Pixel coefficients describe the measured offset (target - reference, in
    product pixels) as a polynomial in the normalised detector column; the
    angular coefficients describe the interior correction to apply to the band.
    """

    band: int
    along_px: tuple = (0.0,)
    across_px: tuple = (0.0,)
    along_rad: tuple = (0.0,)
    across_rad: tuple = (0.0,)
    residual_rms: float = 0.0
    n_points: int = 0
    flagged_bins: tuple = ()

    def offsets(self, u):
        P = np.polynomial.polynomial
        return P.polyval(u, self.along_px), P.polyval(u, self.across_px)

    def interior(self) -> InteriorLayer:
        return InteriorLayer(tuple(self.along_rad), tuple(self.across_rad))


def _fit(u, y, degree):
    deg = int(min(degree, max(0, np.unique(np.round(u, 3)).size - 1)))
    return np.polynomial.polynomial.polyfit(u, y, deg)


def measure_offsets_as_angles(product, camera: CameraModel, ties: Sequence[TiePoint]):
    """Convert product-pixel offsets at tie points into interior-angle changes.

    Returns ``(u, d_along_rad, d_across_rad)``: the rotation that moves a look
    direction from the reference location of each tie point to its target.
    """
    arr = tie_arrays(ties)
    vlm = product_vlm(product, camera.sensor)
    lines, pix = arr["row"], arr["col"]
    x, d_line, d_pix = _grid_derivatives(vlm, camera, lines, pix)
    t = vlm.start_time + lines * vlm.line_period
    x2 = x + arr["d_along"][:, None] * d_line + arr["d_across"][:, None] * d_pix
    a1, c1 = _camera_tangents(camera, t, x)
    a2, c2 = _camera_tangents(camera, t, x2)
    return pixel_u(product, camera.sensor, pix), np.arctan(a2) - np.arctan(a1), \
        np.arctan(c2) - np.arctan(c1)


def estimate_bbr(product, camera: CameraModel | None = None, reference_band: int = REFERENCE_BAND,
                 degree: int = 3, bins: int = 8, spacing: int = 12, patch: int = 15,
                 search: int = 4, threshold: float = 0.8) -> dict:
    """Registration profiles of every band against ``reference_band``.

    With a ``camera`` (the reference-band processing geometry of an L1B
    product) the profiles also carry the interior correction angles.
    """
    ref_idx = product.band_index(reference_band)
    ref = product.radiance[ref_idx]
    ref_valid = product.quality[ref_idx] == 0
    out = {reference_band: BBRProfile(reference_band)}
    sensor = camera.sensor if camera is not None else None
    for b in product.bands:
        if b == reference_band:
            continue
        i = product.band_index(b)
        ties = dense_match(ref, product.radiance[i], spacing=spacing, patch=patch, search=search,
                           threshold=threshold, reference_valid=ref_valid,
                           target_valid=product.quality[i] == 0)
        arr = tie_arrays(ties)
        if sensor is not None and product.level == "L1B":
            u = pixel_u(product, sensor, arr["col"])
        else:
            u = 2.0 * arr["col"] / max(product.shape[1] - 1, 1) - 1.0
        edges = np.linspace(-1.0, 1.0 + 1e-9, bins + 1)
        counts = np.histogram(u, edges)[0]
        flagged = tuple(int(k) for k in np.nonzero(counts < 3)[0])
        if flagged:
            log.warning("band %d: FOV bins %s have too few tie points; interpolated", b, flagged)
        along_c = _fit(u, arr["d_along"], degree)
        across_c = _fit(u, arr["d_across"], degree)
        P = np.polynomial.polynomial
        res = np.concatenate([arr["d_along"] - P.polyval(u, along_c),
                              arr["d_across"] - P.polyval(u, across_c)])
        prof = BBRProfile(b, tuple(map(float, along_c)), tuple(map(float, across_c)),
                          residual_rms=float(np.sqrt(np.mean(res**2))), n_points=len(ties),
                          flagged_bins=flagged)
        if camera is not None and product.level == "L1B":
            uu, da, dc = measure_offsets_as_angles(product, camera, ties)
            # the band looks where the reference shows the feature: undo the offset
            prof.along_rad = tuple(map(float, -_fit(uu, da, degree)))
            prof.across_rad = tuple(map(float, -_fit(uu, dc, degree)))
        out[b] = prof
    return out


def bbr_stats(samples: Mapping[int, Sequence]) -> dict:
    """Per band: (mean, 3 sigma) for along and across offsets over products."""
    out = {}
    for b, vals in samples.items():
        v = np.asarray(vals, dtype=float).reshape(-1, 2)
        if v.shape[0] < 2:
            raise InsufficientDataError(f"band {b}: BBR statistics need >= 2 products")
        out[int(b)] = {"along_mean": float(v[:, 0].mean()), "along_3sigma": float(3 * v[:, 0].std(ddof=1)),
                       "across_mean": float(v[:, 1].mean()), "across_3sigma": float(3 * v[:, 1].std(ddof=1))}
    return out


# -- geolocation -----------------------------------------------------------------


@dataclass
class ResidualField:
    """Geolocation errors of product pixels (product position - true position)."""

    lines: np.ndarray
    pixels: np.ndarray
    along_px: np.ndarray
    across_px: np.ndarray
    along_m: np.ndarray
    across_m: np.ndarray
    score: np.ndarray
    level: str = "L1B"
    mode: str = "LAC"
    grid: dict = field(default_factory=dict)

    def __len__(self):
        return self.lines.size


def estimate_geolocation_error(product, reference: np.ndarray, band: int = GEOLOCATION_BAND,
                               reference_valid=None, spacing: int = 12, patch: int = 15,
                               search: int = 4, threshold: float = 0.8):
    """Match the product band against a reference raster on the same grid.

    Returns ``(ErrorStats in km, ResidualField)``.
    """
    i = product.band_index(band)
    img = product.radiance[i]
    valid = product.quality[i] == 0
    reference = np.asarray(reference, dtype=float)
    if reference.shape != img.shape:
        raise DomainError("reference must be resampled onto the product grid")
    ties = dense_match(reference, img, spacing=spacing, patch=patch, search=search,
                       threshold=threshold, reference_valid=reference_valid, target_valid=valid)
    arr = tie_arrays(ties)
    along_m, across_m = _pixel_spacing(product, arr["row"], arr["col"])
    field_ = ResidualField(arr["row"], arr["col"], arr["d_along"], arr["d_across"],
                           arr["d_along"] * along_m, arr["d_across"] * across_m, arr["score"],
                           product.level, Mode.parse(product.mode).value, dict(product.grid))
    stats = error_stats(field_.along_m / 1e3, field_.across_m / 1e3, arr["col"], units="km")
    return stats, field_


def _pixel_spacing(product, rows, cols):
    """Local ground spacing (m) of product lines and pixels from the lat/lon layers."""
    xyz = geodetic_to_ecef(product.lat, product.lon, 0.0)
    dl = np.linalg.norm(np.gradient(xyz, axis=0), axis=-1)
    dp = np.linalg.norm(np.gradient(xyz, axis=1), axis=-1)
    r = np.clip(np.rint(rows).astype(int), 0, xyz.shape[0] - 1)
    c = np.clip(np.rint(cols).astype(int), 0, xyz.shape[1] - 1)
    return dl[r, c], dp[r, c]


@dataclass
class AttitudeCorrection:
    """Constant roll/pitch biases (rad) plus an optional interior layer."""

    roll: float = 0.0
    pitch: float = 0.0
    interior: InteriorLayer | None = None

    def __post_init__(self):
        if not (abs(self.roll) < MAX_CORRECTION_RAD and abs(self.pitch) < MAX_CORRECTION_RAD):
            raise CalibrationRejectedError("attitude correction exceeds the 2 deg sanity bound")

    def __add__(self, other: "AttitudeCorrection") -> "AttitudeCorrection":
        if other is None:
            return self
        layer = self.interior + other.interior if self.interior is not None else other.interior
        return AttitudeCorrection(self.roll + other.roll, self.pitch + other.pitch, layer)


def _sensitivities(vlm, camera: CameraModel, lines, pixels, step: float = 1e-5):
    """d(ground)/d(roll, pitch) projected on the local line/pixel directions (m/rad)."""
    x, d_line, d_pix = _grid_derivatives(vlm, camera, lines, pixels)
    e_line = d_line / np.linalg.norm(d_line, axis=-1, keepdims=True)
    e_pix = d_pix / np.linalg.norm(d_pix, axis=-1, keepdims=True)
    out = np.empty((lines.size, 2, 2))
    for k, kw in enumerate(({"roll_bias": camera.roll_bias + step},
                            {"pitch_bias": camera.pitch_bias + step})):
        xk, _, _ = _grid_derivatives(vlm, camera.with_(**kw), lines, pixels)
        dx = (xk - x) / step
        out[:, 0, k] = np.einsum("ni,ni->n", dx, e_line)
        out[:, 1, k] = np.einsum("ni,ni->n", dx, e_pix)
    return out


def residual_angles(residuals: ResidualField, camera: CameraModel):
    """Per-point (roll, pitch) that would explain each residual, and the column u."""
    vlm = VirtualLinearModel(residuals.grid["start_time"], residuals.grid["line_period"],
                             residuals.grid["num_scans"], residuals.grid["num_pixels"],
                             _pointing(camera.sensor, residuals.mode, residuals.grid["num_pixels"]),
                             Mode.parse(residuals.mode))
    s = _sensitivities(vlm, camera, residuals.lines, residuals.pixels)
    err = np.stack([residuals.along_m, residuals.across_m], axis=-1)
    # product shows a feature displaced by -S*b when the true attitude carries bias b
    b = -np.linalg.solve(s, err[..., None])[..., 0]
    _, pc = layout_for(residuals.mode).to_physical(0.0, residuals.pixels)
    return b[:, 0], b[:, 1], camera.sensor.normalized_col(pc)


def _pointing(sensor: SensorGeometry, mode, n: int):
    _, pc = layout_for(mode).to_physical(np.zeros(n), np.arange(n))
    return sensor.camera_directions(np.zeros(n), pc)


def calibrate_geolocation(residuals: ResidualField, camera: CameraModel, degree: int = 3,
                          min_points: int = 100, min_span: float = 0.8,
                          spread_factor: float = 10.0, interior: bool = True) -> AttitudeCorrection:
    """Constant roll/pitch bias (median) plus a column polynomial for the remainder.

    ``camera`` is the reference processing geometry used to make the product.
    """
    if residuals.level != "L1B":
        raise DomainError("geolocation calibration works on L1B residual fields")
    if len(residuals) < min_points:
        raise InsufficientTiePointsError(f"{len(residuals)} residual points, need {min_points}")
    roll, pitch, u = residual_angles(residuals, camera)
    if (u.max() - u.min()) / 2.0 < min_span:
        raise InsufficientTiePointsError("residual points do not span enough of the swath")
    r0, p0 = float(np.median(roll)), float(np.median(pitch))
    layer = None
    dr, dp = roll - r0, pitch - p0
    if interior and degree > 0:
        ca = _fit(u, dp, degree)
        cr = _fit(u, dr, degree)
        P = np.polynomial.polynomial
        # interior 'along' acts like pitch; interior 'across' has the opposite sense of roll
        layer = InteriorLayer(tuple(map(float, ca)), tuple(map(float, -cr)))
        dr = dr - P.polyval(u, cr)
        dp = dp - P.polyval(u, ca)
        if layer.is_zero():
            layer = None
    dev = np.hypot(dr, dp)
    scale = max(math.hypot(r0, p0), 0.1 * camera.sensor.ifov_rad)
    if np.percentile(dev, 95) > spread_factor * scale:
        raise CalibrationRejectedError("residual field is inconsistent with an attitude bias")
    return AttitudeCorrection(r0, p0, layer)


# -- tilt drift ------------------------------------------------------------------


@dataclass(frozen=True)
class TiltDriftModel:
    """Pitch residual (rad) = slope * tilt (deg) + intercept."""

    slope: float = 0.0
    intercept: float = 0.0
    residual_rms: float = 0.0
    n: int = 0

    def pitch(self, tilt_deg):
        return self.slope * np.asarray(tilt_deg, float) + self.intercept


def fit_tilt_drift(samples: Sequence[tuple[float, float]]) -> TiltDriftModel:
    data = np.asarray(samples, dtype=float).reshape(-1, 2)
    tilt, resid = data[:, 0], data[:, 1]
    if np.unique(tilt).size < 3:
        raise DomainError("tilt-drift fit needs at least 3 distinct tilt angles")
    a = np.stack([tilt, np.ones_like(tilt)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(a, resid, rcond=None)
    rms = float(np.sqrt(np.mean((resid - a @ [slope, intercept]) ** 2)))
    return TiltDriftModel(float(slope), float(intercept), rms, int(tilt.size))
