"""Synthetic acquisitions with known truth.

A textured radiance scene on a latitude/longitude grid is imaged by the
rigorous camera model. Raw counts are produced by running the radiometric
chain backwards and injecting the enabled effects.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import DomainError
from .frames import FrameStack, RawFrame
from .geom.earth import ecef_to_geodetic
from .geom.model import CameraModel, Jitter, TiltSchedule
from .geom.orbit import AttitudeProvider, AttitudeState, OrbitElements
from .geom.sensor import InteriorLayer, Mode, SensorGeometry, layout_for
from .parallel import pmap
from .radiometry import (DARK_CADENCE, BandCoeffs, CalibCoeffs, DarkReference, apply_smear,
                         build_dark_reference, build_smear_weights, nominal_row_rate, port_ranges)

log = logging.getLogger(__name__)

M_PER_DEG = 111_319.49
MAX_BIAS_RAD = math.radians(2.0)
SHIELDED_FRACTION = 3824 / 4000


def default_radiance(band: int) -> float:
    """Typical ocean-scene radiance per band (mW cm-2 um-1 sr-1)."""
    return max(10.0 - 0.55 * (band - 1), 2.5)


# -- scene -----------------------------------------------------------------------


@dataclass
class Scene:
    """Per-band radiance on a regular latitude/longitude grid (cell centres)."""

    lat_min: float
    lon_min: float
    dlat: float
    dlon: float
    radiance: dict
    seed: int = 0
    slope: float = -2.0
    cell_m: float = 120.0

    @property
    def shape(self):
        return next(iter(self.radiance.values())).shape

    @property
    def bands(self):
        return sorted(self.radiance)

    @property
    def lat_max(self):
        return self.lat_min + (self.shape[0] - 1) * self.dlat

    @property
    def lon_max(self):
        return self.lon_min + (self.shape[1] - 1) * self.dlon

    def index(self, lat, lon):
        return ((np.asarray(lat) - self.lat_min) / self.dlat,
                (np.asarray(lon) - self.lon_min) / self.dlon)

    def sample(self, band: int, lat, lon) -> np.ndarray:
        """Bilinear radiance at (lat, lon); NaN outside the grid."""
        i, j = self.index(lat, lon)
        ny, nx = self.shape
        inside = (i >= 0) & (i <= ny - 1) & (j >= 0) & (j <= nx - 1)
        vals = ndimage.map_coordinates(self.radiance[band], [np.ravel(i), np.ravel(j)], order=1,
                                       mode="nearest", prefilter=False, output=np.float64)
        vals = vals.reshape(np.shape(i))
        return np.where(inside, vals, np.nan)


def power_law_field(rng: np.random.Generator, shape, slope: float) -> np.ndarray:
    """Zero-mean, unit-std random field whose PSD falls as ``f**slope``."""
    ny, nx = shape
    fy = np.fft.fftfreq(ny)[:, None]
    fx = np.fft.rfftfreq(nx)[None, :]
    f = np.hypot(fy, fx)
    f[0, 0] = np.inf
    amp = f ** (slope / 2.0)
    spec = amp * (rng.standard_normal(amp.shape) + 1j * rng.standard_normal(amp.shape))
    field_ = np.fft.irfft2(spec, s=shape)
    field_ -= field_.mean()
    return field_ / field_.std()


@dataclass(frozen=True)
class UniformPatch:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    value: float | None = None  # None -> band mean radiance


@dataclass(frozen=True)
class PointTarget:
    lat: float
    lon: float
    amplitude: float = 1.0  # relative to band mean
    radius_m: float = 150.0


def generate_scene(seed: int, extent: Sequence[float], bands: Sequence[int], *,
                   cell_m: float = 120.0, slope: float = -2.0, contrast: float = 0.1,
                   band_correlation: float = 0.9, smoothing_m: float = 0.0,
                   mean_radiance: dict | None = None, point_targets: Sequence[PointTarget] = (),
                   uniform_patches: Sequence[UniformPatch] = ()) -> Scene:
    """Band-correlated power-law texture over ``extent = (lat_min, lat_max, lon_min, lon_max)``.

    ``smoothing_m`` applies a Gaussian low-pass (standard deviation in metres)
    before the texture is scaled to ``contrast``.
    """
    lat_min, lat_max, lon_min, lon_max = map(float, extent)
    if not (lat_max > lat_min and lon_max > lon_min and cell_m > 0):
        raise DomainError("scene extent must be positive")
    lat_c = 0.5 * (lat_min + lat_max)
    dlat = cell_m / M_PER_DEG
    dlon = cell_m / (M_PER_DEG * math.cos(math.radians(lat_c)))
    shape = (int(math.ceil((lat_max - lat_min) / dlat)) + 1,
             int(math.ceil((lon_max - lon_min) / dlon)) + 1)
    common = power_law_field(np.random.default_rng([seed, 0]), shape, slope)
    # common-field weight giving an inter-band texture correlation of ``band_correlation``
    rho = math.sqrt(float(np.clip(band_correlation, 0.0, 1.0)))
    lat = lat_min + dlat * np.arange(shape[0])
    lon = lon_min + dlon * np.arange(shape[1])
    out = {}
    for b in bands:
        own = power_law_field(np.random.default_rng([seed, 1, b]), shape, slope)
        tex = rho * common + math.sqrt(1 - rho**2) * own
        if smoothing_m > 0:
            tex = ndimage.gaussian_filter(tex, smoothing_m / cell_m, mode="wrap")
            tex = (tex - tex.mean()) / tex.std()
        mean = (mean_radiance or {}).get(b, default_radiance(b))
        img = mean * (1.0 + contrast * tex)
        for pt in point_targets:
            di = (lat[:, None] - pt.lat) * M_PER_DEG
            dj = (lon[None, :] - pt.lon) * M_PER_DEG * math.cos(math.radians(pt.lat))
            img += mean * pt.amplitude * np.exp(-(di**2 + dj**2) / (2 * pt.radius_m**2))
        for p in uniform_patches:
            rows = (lat >= p.lat_min) & (lat <= p.lat_max)
            cols = (lon >= p.lon_min) & (lon <= p.lon_max)
            img[np.ix_(rows, cols)] = mean if p.value is None else p.value
        out[int(b)] = np.maximum(img, 0.0).astype(np.float32)
    return Scene(lat_min, lon_min, dlat, dlon, out, seed, slope, cell_m)


# -- effects ---------------------------------------------------------------------


@dataclass
class EffectsConfig:
    """Switchable detector and geometry effects. All defaults off = ideal camera."""

    dark: bool = False
    dark_level: float = 100.0
    dark_profile_rms: float = 1.0
    port_biases: tuple = (0.0, 0.0, 0.0, 0.0)
    dark_read_noise: float = 1.0
    prnu: bool = False
    prnu_rms: float = 0.02
    smear: bool = False
    integration_ms: float = 64.0
    row_transfer_us: float = 2.0
    noise: str = "none"  # none | snr | shot_read
    snr: float = 200.0
    read_noise: float = 2.0
    electrons_per_count: float = 10.0
    quantize: bool = True
    misalignment: dict = field(default_factory=dict)  # band -> InteriorLayer
    roll_bias: float = 0.0
    pitch_bias: float = 0.0
    tilt_drift_slope: float = 0.0  # rad per deg of tilt
    tilt_drift_intercept: float = 0.0
    jitter_amplitude_deg: float = 0.0
    jitter_frequency_hz: float = 0.5
    drift_rate_deg_s: float = 0.0
    # fixed detector patterns (PRNU, dark profile) belong to the instrument, not the pass
    instrument_seed: int = 0

    def __post_init__(self):
        if self.noise not in ("none", "snr", "shot_read"):
            raise DomainError(f"unknown noise model {self.noise!r}")

    @classmethod
    def nominal_platform(cls, **kw) -> "EffectsConfig":
        """Platform stability at the mission's stated jitter and drift bounds."""
        kw.setdefault("jitter_amplitude_deg", 1.53e-3)
        kw.setdefault("drift_rate_deg_s", 6e-4)
        return cls(**kw)


def _check_angle(value: float, what: str):
    if not abs(value) < MAX_BIAS_RAD:
        raise DomainError(f"{what} {value:g} rad exceeds the 2 deg sanity bound")


def inject_geolocation_bias(effects: EffectsConfig, roll: float, pitch: float) -> EffectsConfig:
    _check_angle(roll, "roll bias")
    _check_angle(pitch, "pitch bias")
    return replace(effects, roll_bias=float(roll), pitch_bias=float(pitch))


def inject_tilt_drift(effects: EffectsConfig, slope: float, intercept: float = 0.0) -> EffectsConfig:
    _check_angle(slope * 20.0, "tilt drift at 20 deg")
    _check_angle(intercept, "tilt drift intercept")
    return replace(effects, tilt_drift_slope=float(slope), tilt_drift_intercept=float(intercept))


def inject_band_misalignment(effects: EffectsConfig, band: int, profile: InteriorLayer) -> EffectsConfig:
    u = np.linspace(-1, 1, 201)
    along, across = profile.angles(u)
    _check_angle(float(np.max(np.abs(along))), "along-track misalignment")
    _check_angle(float(np.max(np.abs(across))), "across-track misalignment")
    mis = dict(effects.misalignment)
    mis[int(band)] = profile
    return replace(effects, misalignment=mis)


def misalignment_from_pixels(sensor: SensorGeometry, along_px: Sequence[float],
                             across_px: Sequence[float]) -> InteriorLayer:
    """Interior layer from polynomial coefficients expressed in nadir pixels."""
    ifov = sensor.ifov_rad
    return InteriorLayer(tuple(ifov * float(c) for c in along_px),
                         tuple(ifov * float(c) for c in across_px))


# -- truth -----------------------------------------------------------------------


@dataclass
class TruthBundle:
    """Everything injected into a simulation, in JSON-friendly form."""

    seed: int
    mode: str
    bands: list
    effects: dict
    prnu_gains: dict = field(default_factory=dict)
    dark_image: dict = field(default_factory=dict)
    dark_row: dict = field(default_factory=dict)
    ports: list = field(default_factory=list)
    frames: list = field(default_factory=list)
    dropped_frames: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TruthBundle":
        data = json.loads(text)
        data["prnu_gains"] = {int(k): v for k, v in data["prnu_gains"].items()}
        data["dark_image"] = {int(k): v for k, v in data["dark_image"].items()}
        data["dark_row"] = {int(k): v for k, v in data["dark_row"].items()}
        return cls(**data)

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "TruthBundle":
        return cls.from_json(Path(path).read_text())

    def effects_config(self) -> EffectsConfig:
        return effects_from_dict(self.effects)


def effects_to_dict(e: EffectsConfig) -> dict:
    d = asdict(e)
    d["port_biases"] = list(e.port_biases)
    d["misalignment"] = {str(b): {"along": list(l.along), "across": list(l.across)}
                         for b, l in e.misalignment.items()}
    return d


def effects_from_dict(d: dict) -> EffectsConfig:
    d = dict(d)
    d["port_biases"] = tuple(d.get("port_biases", ()))
    d["misalignment"] = {int(b): InteriorLayer(tuple(v["along"]), tuple(v["across"]))
                         for b, v in d.get("misalignment", {}).items()}
    return EffectsConfig(**d)


def truth_camera(stack: FrameStack, effects: EffectsConfig, band: int) -> CameraModel:
    """Geometry actually realised in the simulation for ``band``."""
    jitter = None
    if effects.jitter_amplitude_deg:
        jitter = Jitter(effects.jitter_amplitude_deg, effects.jitter_frequency_hz)
    return stack.knowledge_camera(
        interior=effects.misalignment.get(int(band)),
        roll_bias=effects.roll_bias,
        pitch_bias=effects.pitch_bias,
        tilt_pitch_slope=effects.tilt_drift_slope,
        tilt_pitch_intercept=effects.tilt_drift_intercept,
        jitter=jitter,
    )


# -- acquisition -----------------------------------------------------------------


def lab_coefficients(bands: Sequence[int], mode, mean_radiance: dict | None = None) -> CalibCoeffs:
    """Ground-calibration coefficients putting the band's typical radiance near mid-range."""
    layout = layout_for(mode)
    target = 0.5 * layout.max_count if layout.bits <= 12 else 24_000.0
    out = {}
    for b in bands:
        mean = (mean_radiance or {}).get(b, default_radiance(b))
        out[int(b)] = BandCoeffs(c=mean / target, d=0.0)
    return CalibCoeffs(out)


def knowledge_attitude(t0: float, t1: float, drift_rate_deg_s: float) -> list:
    """On-board attitude knowledge: a known linear drift in roll and pitch."""
    if not drift_rate_deg_s:
        return [AttitudeState(t0)]
    d = math.radians(drift_rate_deg_s) * (t1 - t0)
    return [AttitudeState(t0, 0.0, 0.0, 0.0, drift_rate_deg_s), AttitudeState(t1, d, d, 0.0, drift_rate_deg_s)]


def plan_extent(orbit: OrbitElements, sensor: SensorGeometry, mode, n_frames: int, *,
                t0: float = 0.0, tilt: TiltSchedule | None = None, margin_km: float = 15.0):
    """Lat/lon box covering every frame footprint plus ``margin_km``."""
    layout = layout_for(mode)
    cam = CameraModel(sensor=sensor, orbit=orbit, tilt=tilt)
    times = t0 + layout.frame_period_s * np.arange(n_frames)
    times = times[np.unique(np.linspace(0, n_frames - 1, min(n_frames, 16)).round().astype(int))]
    rows = np.array([-0.5, sensor.active_rows - 0.5])
    cols = np.linspace(-0.5, sensor.active_cols - 0.5, 33)
    r, c = np.meshgrid(rows, cols, indexing="ij")
    pts = np.concatenate([cam.pixel_to_ground_ecef(t, r, c).reshape(-1, 3) for t in times])
    lat, lon, _ = ecef_to_geodetic(pts)
    mlat = margin_km * 1e3 / M_PER_DEG
    mlon = mlat / math.cos(math.radians(float(np.mean(lat))))
    return (float(lat.min() - mlat), float(lat.max() + mlat),
            float(lon.min() - mlon), float(lon.max() + mlon))


def _dark_shapes(seed: int, band: int, ncols: int, e: EffectsConfig, ports):
    rng = np.random.default_rng([seed, 3, band])
    prof = ndimage.gaussian_filter1d(rng.standard_normal(ncols), 8.0, mode="nearest")
    prof *= e.dark_profile_rms / max(prof.std(), 1e-12)
    image = e.dark_level + prof
    bias = np.zeros(ncols)
    for (a, b), v in zip(ports, tuple(e.port_biases) + (0.0,) * len(ports)):
        bias[a:b] = v
    width = max(1, int(round(SHIELDED_FRACTION * ncols)))
    return image, bias, width


def simulate_acquisition(scene: Scene, orbit: OrbitElements, sensor: SensorGeometry, mode,
                         effects: EffectsConfig | None = None, duration: float | None = None, *,
                         n_frames: int | None = None, bands: Sequence[int] | None = None,
                         t0: float = 0.0, tilt: TiltSchedule | None = None, seed: int = 0,
                         coeffs: CalibCoeffs | None = None, night: bool = False,
                         workers: int | None = None):
    """Render raw frames of ``scene`` and return ``(FrameStack, TruthBundle)``.

    Counts are produced as ``quantize(noise(dark + response * W @ Lcounts))``
    where ``Lcounts`` inverts the radiance coefficients. Frames whose footprint
    leaves the scene are dropped with a warning.
    """
    effects = effects or EffectsConfig()
    mode = Mode.parse(mode)
    layout = layout_for(mode)
    bands = [int(b) for b in (bands or scene.bands)]
    if n_frames is None:
        if duration is None:
            raise DomainError("give duration or n_frames")
        n_frames = max(1, int(math.floor(duration / layout.frame_period_s + 1e-9)))
    tilt = tilt or TiltSchedule.constant(sensor.tilt_deg)
    coeffs = coeffs or lab_coefficients(bands, mode)
    times = t0 + layout.frame_period_s * np.arange(n_frames)
    att = knowledge_attitude(t0, float(times[-1]) + layout.frame_period_s, effects.drift_rate_deg_s)
    nrows, ncols = layout.frame_shape(sensor)
    ports = port_ranges(ncols)
    base = FrameStack(mode, sensor, orbit, layout.frame_period_s, {}, att, tilt)
    cams = {b: truth_camera(base, effects, b) for b in bands}
    prow = np.arange(sensor.active_rows, dtype=float)[:, None]
    pcol = np.arange(sensor.active_cols, dtype=float)[None, :]

    def render(k):
        out = {}
        for b in bands:
            xyz = cams[b].pixel_to_ground_ecef(times[k], prow, pcol, strict=False)
            lat, lon, _ = ecef_to_geodetic(xyz)
            rad = np.zeros(lat.shape) if night else scene.sample(b, lat, lon)
            if not np.all(np.isfinite(rad)):
                return None
            binned = rad.reshape(nrows, layout.row_bin, ncols, layout.col_bin).mean(axis=(1, 3))
            out[b] = binned
        return out

    rendered = pmap(render, range(n_frames), workers)
    keep = [k for k, r in enumerate(rendered) if r is not None]
    dropped = [k for k, r in enumerate(rendered) if r is None]
    if dropped:
        log.warning("%d frame(s) leave the scene and were dropped", len(dropped))
    if not keep:
        raise DomainError("no frame lies inside the scene")

    smear = None
    if effects.smear:
        smear = build_smear_weights(mode, effects.integration_ms, effects.row_transfer_us,
                                    rows=nrows, row_bin=layout.row_bin,
                                    advance=nominal_row_rate(orbit, sensor) * layout.frame_period_s
                                    / layout.row_bin)
    truth = TruthBundle(seed, mode.value, bands, effects_to_dict(effects), ports=ports,
                        dropped_frames=dropped)
    per_band = {}
    for b in bands:
        gains = np.ones(ncols)
        if effects.prnu:
            z = np.random.default_rng([effects.instrument_seed, 2, b]).standard_normal(ncols)
            # exactly prnu_rms around a unit mean
            gains = 1.0 + effects.prnu_rms * (z - z.mean()) / z.std()
            truth.prnu_gains[b] = gains.tolist()
        dark_img, bias, width = _dark_shapes(effects.instrument_seed, b, ncols, effects, ports)
        if effects.dark:
            truth.dark_image[b] = (dark_img + bias).tolist()
            truth.dark_row[b] = (dark_img + bias)[:width].tolist()
        per_band[b] = (1.0 / gains, dark_img + bias, width)

    cadence = DARK_CADENCE[mode]
    bc = {b: coeffs.for_band(b) for b in bands}

    def finish(k):
        frames = {}
        for b in bands:
            rng = np.random.default_rng([seed, 1, b, k])
            response, dark, width = per_band[b]
            signal = bc[b].inverse(rendered[k][b])
            if smear is not None:
                signal = apply_smear(signal, smear)
            signal = signal * response
            x = signal + dark if effects.dark else signal.copy()
            if effects.noise == "snr":
                x += rng.standard_normal(x.shape) * np.abs(signal) / effects.snr
            elif effects.noise == "shot_read":
                var = np.maximum(signal, 0) / effects.electrons_per_count + effects.read_noise**2
                x += rng.standard_normal(x.shape) * np.sqrt(var)
            dark_row = None
            if k % cadence == 0:
                dark_row = dark[:width].copy() if effects.dark else np.zeros(width)
                if effects.dark and effects.noise != "none":
                    dark_row += effects.dark_read_noise * rng.standard_normal(width)
            if effects.quantize:
                x = np.clip(np.rint(x), 0, layout.max_count).astype(np.uint16)
                if dark_row is not None:
                    dark_row = np.clip(np.rint(dark_row), 0, layout.max_count).astype(np.uint16)
            frames[b] = RawFrame(b, mode, float(times[k]), x, dark_row,
                                 float(tilt(times[k])), index=k)
        return frames

    finished = pmap(finish, keep, workers)
    stack_frames = {b: [f[b] for f in finished] for b in bands}
    ref_cam = cams[bands[0]]
    for k in keep:
        t = float(times[k])
        pos, vel = ref_cam.state(t)
        r, p, y = ref_cam.attitude_angles(t)
        centre = ref_cam.pixel_to_ground(t, sensor.center_row, sensor.center_col)
        truth.frames.append({
            "index": k, "time": t, "position": pos.tolist(), "velocity": vel.tolist(),
            "roll": float(r), "pitch": float(p), "yaw": float(y), "tilt": float(tilt(t)),
            "centre_lat": centre.latitude, "centre_lon": centre.longitude,
        })
    stack = FrameStack(mode, sensor, orbit, layout.frame_period_s, stack_frames, att, tilt,
                       {"seed": seed, "source": "simulator"})
    return stack, truth


def simulate_night_session(sensor: SensorGeometry, mode, effects: EffectsConfig, bands,
                           orbit: OrbitElements | None = None, n_frames: int = 32,
                           seed: int = 0) -> dict:
    """Dark references from a night pass (zero radiance, port biases absent)."""
    orbit = orbit or OrbitElements()
    night_fx = replace(effects, port_biases=(0.0,) * len(effects.port_biases), prnu=False,
                       smear=False)
    dummy = Scene(-90.0, -180.0, 1.0, 1.0, {b: np.zeros((2, 2)) for b in bands})
    stack, _ = simulate_acquisition(dummy, orbit, sensor, mode, night_fx, n_frames=n_frames,
                                    bands=bands, seed=seed + 7919, night=True)
    refs = {}
    for b in bands:
        fs = stack.frames[b]
        rows = [f.dark_row for f in fs if f.dark_row is not None]
        refs[b] = build_dark_reference([f.counts for f in fs], rows, b)
    return refs


def truth_on_grid(scene: Scene, band: int, lat, lon) -> np.ndarray:
    """Scene radiance sampled at product pixel centres."""
    return scene.sample(band, lat, lon)
