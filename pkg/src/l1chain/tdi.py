"""Ground time-delay integration.

Every output pixel is tied to a ground location (virtual linear sensor for
L1B, LCC map grid for L1C). That location is projected into every raw frame;
the frame pixels around each match are weighted by their ground distance to
the query and accumulated.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import DomainError
from .frames import FrameStack
from .geom.earth import ecef_to_geodetic, geodetic_to_ecef
from .geom.lcc import LCCProjection, MapGrid
from .geom.model import CameraModel, VirtualLinearModel, build_virtual_linear_model
from .geom.sensor import Mode, layout_for
from .parallel import pmap, worker_count

log = logging.getLogger(__name__)

SENTINEL = -9999.0
Q_UNFILLED = 1
Q_GEOMETRY = 2
KERNELS = ("exponential", "nearest", "nearest_binned")
LEVELS = ("L1B", "L1C")


@dataclass(frozen=True)
class TDIConfig:
    sigma: float = 0.5
    w_x: int = 1  # half-extent along frame rows
    w_y: int = 1  # half-extent along frame columns
    kernel: str = "exponential"
    level: str = "L1B"
    normalize: bool = True
    distance: str = "squared"  # squared | linear
    height: float = 0.0
    pixel_size_m: float | None = None  # L1C only
    chunk_lines: int = 32
    workers: int | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")
        if self.w_x < 0 or self.w_y < 0:
            raise DomainError("window half-extents must be >= 0")
        kernel = {"exp": "exponential", "nn": "nearest", "nnbin": "nearest_binned"}.get(self.kernel.lower(), self.kernel.lower())
        if kernel not in KERNELS:
            raise DomainError(f"unknown kernel {self.kernel!r}")
        object.__setattr__(self, "kernel", kernel)
        level = self.level.upper()
        if level not in LEVELS:
            raise DomainError(f"unknown level {self.level!r}")
        object.__setattr__(self, "level", level)
        if self.distance not in ("squared", "linear"):
            raise DomainError(f"unknown distance {self.distance!r}")


class NeighborSample(NamedTuple):
    frame: int
    l: int
    m: int
    distance: float
    value: float


@dataclass
class ProductGrid:
    """Multi-band L1B/L1C raster with geolocation, counts and quality layers."""

    level: str
    mode: Mode
    bands: list
    radiance: np.ndarray  # (bands, lines, pixels)
    counts: np.ndarray
    quality: np.ndarray
    n_eff: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    grid: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.radiance.shape[1:]

    def band(self, b: int) -> np.ndarray:
        return self.radiance[self.bands.index(int(b))]

    def band_index(self, b: int) -> int:
        try:
            return self.bands.index(int(b))
        except ValueError:
            raise DomainError(f"band {b} not in product") from None

    def valid(self, b: int) -> np.ndarray:
        return self.quality[self.band_index(b)] == 0

    def map_grid(self) -> MapGrid:
        if self.level != "L1C":
            raise DomainError("only L1C products carry a map grid")
        g = self.grid
        proj = LCCProjection(g["lat1"], g["lat2"], g["lat0"], g["lon0"], g["false_easting"],
                             g["false_northing"], g["pixel_size"])
        return MapGrid(proj, g["x0"], g["y0"], g["rows"], g["cols"])


def allocate_output(model, bands: Sequence[int], mode=Mode.LAC) -> ProductGrid:
    """Empty product with every pixel flagged unfilled."""
    if isinstance(model, VirtualLinearModel):
        shape = (model.num_scans, model.num_pixels)
        level = "L1B"
        grid = {"start_time": model.start_time, "line_period": model.line_period,
                "num_scans": model.num_scans, "num_pixels": model.num_pixels}
        mode = model.mode
    elif isinstance(model, MapGrid):
        shape = (model.rows, model.cols)
        level = "L1C"
        p = model.projection
        grid = {"lat1": p.lat1, "lat2": p.lat2, "lat0": p.lat0, "lon0": p.lon0,
                "false_easting": p.false_easting, "false_northing": p.false_northing,
                "pixel_size": p.pixel_size, "x0": model.x0, "y0": model.y0,
                "rows": model.rows, "cols": model.cols}
    else:
        raise DomainError("output model must be a VirtualLinearModel or MapGrid")
    if shape[0] < 1 or shape[1] < 1 or not bands:
        raise DomainError("output grid has zero area")
    nb = len(bands)
    return ProductGrid(
        level=level, mode=Mode.parse(mode), bands=[int(b) for b in bands],
        radiance=np.full((nb,) + shape, SENTINEL),
        counts=np.zeros((nb,) + shape, dtype=np.uint16),
        quality=np.full((nb,) + shape, Q_UNFILLED, dtype=np.uint8),
        n_eff=np.zeros((nb,) + shape),
        lat=np.full(shape, np.nan), lon=np.full(shape, np.nan), grid=grid)


# -- kernels ---------------------------------------------------------------------


def kernel_weights(d, sigma: float, normalize: bool = True) -> np.ndarray:
    """``exp(-d / sigma**2)``; with ``normalize`` computed stably and summing to 1."""
    d = np.asarray(d, dtype=float)
    if normalize:
        w = np.exp(-(d - d.min()) / sigma**2) if d.size else d
        return w / w.sum() if d.size else w
    return np.exp(-d / sigma**2)


def bin_exponential(samples: Sequence[NeighborSample], sigma: float = 0.5,
                    normalize: bool = True) -> tuple[float, float]:
    """Weighted value and raw weight sum; ``(nan, 0)`` for an empty list."""
    if not samples:
        return math.nan, 0.0
    d = np.array([s.distance for s in samples])
    v = np.array([s.value for s in samples])
    raw = np.exp(-d / sigma**2)
    if normalize:
        return float(np.dot(kernel_weights(d, sigma), v)), float(raw.sum())
    return float(np.dot(raw, v)), float(raw.sum())


def bin_nearest(samples: Sequence[NeighborSample]) -> float:
    """Value of the closest sample; ties go to the lowest frame, then lowest (l, m)."""
    if not samples:
        return math.nan
    best = min(samples, key=lambda s: (s.distance, s.frame, s.l, s.m))
    return float(best.value)


def bin_nearest_binned(samples: Sequence[NeighborSample]) -> float:
    """Mean over frames of each frame's closest sample (direct binning)."""
    if not samples:
        return math.nan
    per_frame: dict[int, NeighborSample] = {}
    for s in samples:
        cur = per_frame.get(s.frame)
        if cur is None or (s.distance, s.l, s.m) < (cur.distance, cur.l, cur.m):
            per_frame[s.frame] = s
    return float(np.mean([s.value for s in per_frame.values()]))


# -- output grid geometry --------------------------------------------------------


def grid_jacobian_pinv(xyz: np.ndarray) -> np.ndarray:
    """Per-pixel pseudo-inverse (2x3) of d(ECEF)/d(line, pixel)."""
    d_line = np.gradient(xyz, axis=0) if xyz.shape[0] > 1 else np.full_like(xyz, np.nan)
    d_pix = np.gradient(xyz, axis=1) if xyz.shape[1] > 1 else np.full_like(xyz, np.nan)
    if xyz.shape[0] == 1:
        # single line: along-track spacing from the pixel direction's normal
        d_line = np.cross(d_pix, xyz / np.linalg.norm(xyz, axis=-1, keepdims=True))
    if xyz.shape[1] == 1:
        d_pix = np.cross(xyz / np.linalg.norm(xyz, axis=-1, keepdims=True), d_line)
    jac = np.stack([d_line, d_pix], axis=-1)  # (..., 3, 2)
    jtj = np.einsum("...ki,...kj->...ij", jac, jac)
    det = jtj[..., 0, 0] * jtj[..., 1, 1] - jtj[..., 0, 1] ** 2
    inv = np.empty_like(jtj)
    inv[..., 0, 0] = jtj[..., 1, 1] / det
    inv[..., 1, 1] = jtj[..., 0, 0] / det
    inv[..., 0, 1] = inv[..., 1, 0] = -jtj[..., 0, 1] / det
    return np.einsum("...ij,...kj->...ik", inv, jac)


def l1b_grid(stack: FrameStack, camera: CameraModel, height: float = 0.0):
    vlm = build_virtual_linear_model(stack.times, stack.mode, stack.sensor, stack.frame_period)
    xyz = vlm.ground_ecef(camera, h=height)
    return vlm, xyz


def footprint_latlon(stack: FrameStack, camera: CameraModel, height: float = 0.0):
    s = stack.sensor
    rows = np.array([-0.5, s.active_rows - 0.5])
    cols = np.linspace(-0.5, s.active_cols - 0.5, 65)
    r, c = np.meshgrid(rows, cols, indexing="ij")
    edge_r = np.linspace(-0.5, s.active_rows - 0.5, 5)
    r = np.concatenate([r.ravel(), edge_r, edge_r])
    c = np.concatenate([c.ravel(), np.full(5, -0.5), np.full(5, s.active_cols - 0.5)])
    pts = [camera.pixel_to_ground_ecef(t, r, c, height, strict=False) for t in stack.times]
    lat, lon, _ = ecef_to_geodetic(np.concatenate(pts))
    ok = np.isfinite(lat)
    return lat[ok], lon[ok]


def l1c_grid(stack: FrameStack, camera: CameraModel, cfg: TDIConfig,
             projection: LCCProjection | None = None, grid: MapGrid | None = None):
    if grid is None:
        lat, lon = footprint_latlon(stack, camera, cfg.height)
        if projection is None:
            size = cfg.pixel_size_m or 366.0 * (1 if stack.mode == Mode.LAC else 3)
            projection = LCCProjection.for_scene(float(np.median(lat)), float(np.median(lon)),
                                                 pixel_size=size)
        grid = MapGrid.covering(projection, lat, lon)
    lat, lon = grid.latlon()
    return grid, geodetic_to_ecef(lat, lon, cfg.height)


# -- resampling ------------------------------------------------------------------


@dataclass
class _Accum:
    swg: np.ndarray
    sw: np.ndarray
    sw2: np.ndarray
    count: np.ndarray
    best_d: np.ndarray
    best_v: np.ndarray
    nb_sum: np.ndarray
    nb_n: np.ndarray


def _new_accum(shape) -> _Accum:
    return _Accum(np.zeros(shape), np.zeros(shape), np.zeros(shape),
                  np.zeros(shape, dtype=np.int64), np.full(shape, np.inf), np.full(shape, np.nan),
                  np.zeros(shape), np.zeros(shape, dtype=np.int64))


def tdi_band(cube: np.ndarray, times: Sequence[float], camera: CameraModel, layout, grid_xyz: np.ndarray,
             cfg: TDIConfig, pinv: np.ndarray | None = None):
    """Resample one band's radiance cube (frames, rows, cols) onto ``grid_xyz``.

    Returns ``(value, count, quality, n_eff)``. Work is split into disjoint
    blocks of output lines; each block sees the frames in index order, so
    results do not depend on the number of workers.
    """
    cube = np.asarray(cube, dtype=float)
    nf, nr, nc = cube.shape
    if nf == 0:
        raise DomainError("no frames")
    shape = grid_xyz.shape[:2]
    if pinv is None:
        pinv = grid_jacobian_pinv(grid_xyz)
    geo_bad = ~np.all(np.isfinite(grid_xyz), axis=-1) | ~np.all(np.isfinite(pinv), axis=(-2, -1))
    acc = _new_accum(shape)
    sensor = camera.sensor
    brow = np.arange(nr, dtype=float)
    bcol = np.arange(nc, dtype=float)
    prow, pcol = layout.to_physical(brow[:, None], bcol[None, :])
    offsets = [(dl, dm) for dl in range(-cfg.w_x, cfg.w_x + 1) for dm in range(-cfg.w_y, cfg.w_y + 1)]
    blocks = [(a, min(a + cfg.chunk_lines, shape[0])) for a in range(0, shape[0], cfg.chunk_lines)]
    step = max(1, shape[1] // 64)
    margin = 2.0 * layout.row_bin * (cfg.chunk_lines + 2)
    inv_s2 = 1.0 / cfg.sigma**2

    for k in range(nf):
        t = float(times[k])
        frame_xyz = camera.pixel_to_ground_ecef(t, prow, pcol, cfg.height, strict=False, check=False)
        values = cube[k]

        def work(block, k=k, t=t, frame_xyz=frame_xyz, values=values):
            a, b = block
            # coarse prefilter on a decimated copy of the block
            probe = grid_xyz[[a, b - 1], ::step]
            pr, pc, front = camera.project_at(t, probe)
            if not np.any(front & (pr > -margin) & (pr < sensor.active_rows + margin)):
                return
            xyz = grid_xyz[a:b]
            rows, cols, front = camera.project_at(t, xyz)
            rb, cb = layout.to_binned(rows, cols)
            hit = front & (rb >= -0.5) & (rb < nr - 0.5) & (cb >= -0.5) & (cb < nc - 0.5)
            hit &= ~geo_bad[a:b]
            if not np.any(hit):
                return
            ii, jj = np.nonzero(hit)
            l0 = np.floor(rb[ii, jj] + 0.5).astype(int)
            m0 = np.floor(cb[ii, jj] + 0.5).astype(int)
            q = xyz[ii, jj]
            pv = pinv[a:b][ii, jj]
            gi, gj = ii + a, jj
            acc.count[gi, gj] += 1
            fbest_d = np.full(ii.size, np.inf)
            fbest_v = np.zeros(ii.size)
            for dl, dm in offsets:
                l = l0 + dl
                m = m0 + dm
                ok = (l >= 0) & (l < nr) & (m >= 0) & (m < nc)
                l = np.where(ok, l, 0)
                m = np.where(ok, m, 0)
                delta = frame_xyz[l, m] - q
                dd = np.einsum("nij,nj->ni", pv, delta)
                d = dd[:, 0] ** 2 + dd[:, 1] ** 2
                if cfg.distance == "linear":
                    d = np.sqrt(d)
                ok &= np.isfinite(d)
                g = values[l, m]
                w = np.where(ok, np.exp(-np.where(ok, d, 0.0) * inv_s2), 0.0)
                acc.swg[gi, gj] += w * np.where(ok, g, 0.0)
                acc.sw[gi, gj] += w
                acc.sw2[gi, gj] += w * w
                better = ok & (d < acc.best_d[gi, gj])
                acc.best_d[gi[better], gj[better]] = d[better]
                acc.best_v[gi[better], gj[better]] = g[better]
                closer = ok & (d < fbest_d)
                fbest_d[closer] = d[closer]
                fbest_v[closer] = g[closer]
            seen = np.isfinite(fbest_d)
            acc.nb_sum[gi[seen], gj[seen]] += fbest_v[seen]
            acc.nb_n[gi[seen], gj[seen]] += 1

        pmap(work, blocks, cfg.workers)

    filled = acc.count > 0
    quality = np.where(geo_bad, Q_GEOMETRY, np.where(filled, 0, Q_UNFILLED)).astype(np.uint8)
    value = np.full(shape, SENTINEL)
    n_eff = np.zeros(shape)
    good = filled & (acc.sw > 0)
    n_eff[good] = acc.sw[good] ** 2 / acc.sw2[good]
    if cfg.kernel == "nearest":
        value[filled] = acc.best_v[filled]
        n_eff[filled] = 1.0
    elif cfg.kernel == "nearest_binned":
        good = filled & (acc.nb_n > 0)
        value[good] = acc.nb_sum[good] / acc.nb_n[good]
        n_eff[good] = acc.nb_n[good]
    elif cfg.normalize:
        value[good] = acc.swg[good] / acc.sw[good]
    else:
        value[filled] = acc.swg[filled]
    if cfg.kernel != "nearest":
        quality[filled & ~good] = Q_UNFILLED
    count = np.minimum(acc.count, np.iinfo(np.uint16).max).astype(np.uint16)
    return value, count, quality, n_eff


def gather_samples(i: int, j: int, cube: np.ndarray, times: Sequence[float], camera: CameraModel,
                   layout, grid_xyz: np.ndarray, cfg: TDIConfig) -> list[NeighborSample]:
    """All neighbourhood samples contributing to output pixel ``(i, j)``."""
    pinv = grid_jacobian_pinv(grid_xyz)[i, j]
    q = grid_xyz[i, j]
    nr, nc = cube.shape[1:]
    out = []
    for k, t in enumerate(times):
        r, c, front = camera.project_at(float(t), q[None, :])
        rb, cb = layout.to_binned(r, c)
        rb, cb = float(rb[0]), float(cb[0])
        if not (front[0] and -0.5 <= rb < nr - 0.5 and -0.5 <= cb < nc - 0.5):
            continue
        l0, m0 = int(math.floor(rb + 0.5)), int(math.floor(cb + 0.5))
        for dl in range(-cfg.w_x, cfg.w_x + 1):
            for dm in range(-cfg.w_y, cfg.w_y + 1):
                l, m = l0 + dl, m0 + dm
                if not (0 <= l < nr and 0 <= m < nc):
                    continue
                pr, pc = layout.to_physical(l, m)
                xyz = camera.pixel_to_ground_ecef(float(t), pr, pc, cfg.height, check=False)
                dd = pinv @ (xyz - q)
                d = float(dd @ dd)
                if cfg.distance == "linear":
                    d = math.sqrt(d)
                out.append(NeighborSample(k, l, m, d, float(cube[k, l, m])))
    return out


def resample_stack(cubes: Mapping[int, np.ndarray], stack: FrameStack, cameras: Mapping[int, CameraModel],
                   reference: CameraModel, cfg: TDIConfig, *, projection: LCCProjection | None = None,
                   grid: MapGrid | None = None, metadata: dict | None = None) -> ProductGrid:
    """Ground TDI of already-calibrated radiance cubes."""
    if len(stack) == 0:
        raise DomainError("no frames")
    bands = sorted(int(b) for b in cubes)
    layout = stack.layout
    if cfg.level == "L1B":
        model, xyz = l1b_grid(stack, reference, cfg.height)
    else:
        model, xyz = l1c_grid(stack, reference, cfg, projection, grid)
    product = allocate_output(model, bands, stack.mode)
    pinv = grid_jacobian_pinv(xyz)
    lat, lon, _ = ecef_to_geodetic(xyz)
    product.lat, product.lon = lat, lon
    for n, b in enumerate(bands):
        v, c, q, ne = tdi_band(cubes[b], stack.times, cameras[b], layout, xyz, cfg, pinv)
        product.radiance[n], product.counts[n], product.quality[n], product.n_eff[n] = v, c, q, ne
        log.info("band %d: %d of %d pixels filled", b, int((q == 0).sum()), q.size)
    product.metadata.update({
        "kernel": cfg.kernel, "sigma": cfg.sigma, "w_x": cfg.w_x, "w_y": cfg.w_y,
        "normalize": cfg.normalize, "distance": cfg.distance, "height": cfg.height,
        "frame_times": [float(stack.times[0]), float(stack.times[-1])],
        "num_frames": len(stack), "mode": stack.mode.value, "level": cfg.level,
    })
    product.metadata.update(metadata or {})
    return product


def run_tdi(frames: FrameStack, calibration, cfg: TDIConfig | None = None, *,
            bands: Sequence[int] | None = None, projection: LCCProjection | None = None,
            grid: MapGrid | None = None, strict: bool = False) -> ProductGrid:
    """Radiometric correction followed by ground TDI for every band.

    ``calibration`` is a :class:`l1chain.calibration.CalibrationSet`.
    """
    cfg = cfg or TDIConfig()
    if len(frames) == 0:
        raise DomainError("no frames")
    bands = [int(b) for b in (bands or frames.bands)]
    calibration.check_sensor(frames.sensor)
    cubes = {b: calibration.radiance(frames.frames[b], strict=strict) for b in bands}
    cameras = {b: calibration.camera(frames, b) for b in bands}
    reference = calibration.camera(frames, None)
    return resample_stack(cubes, frames, cameras, reference, cfg, projection=projection, grid=grid,
                          metadata={"calibration_version": calibration.version})
