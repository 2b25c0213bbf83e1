"""Raw binned frames and the multi-band frame stack with its ancillary geometry."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DomainError
from .geom.model import CameraModel, TiltSchedule
from .geom.orbit import AttitudeProvider, AttitudeState, OrbitElements
from .geom.sensor import InteriorLayer, Mode, SensorGeometry, layout_for


@dataclass
class RawFrame:
    """One binned detector frame of a single band."""

    band: int
    mode: Mode
    start_time: float
    counts: np.ndarray
    dark_row: np.ndarray | None = None
    tilt_deg: float = 0.0
    index: int = 0

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        if not 1 <= int(self.band) <= 13:
            raise DomainError(f"band {self.band} outside 1..13")
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise DomainError("frame counts must be 2-D")
        if np.issubdtype(counts.dtype, np.integer):
            top = layout_for(self.mode).max_count
            if counts.size and (counts.min() < 0 or counts.max() > top):
                raise DomainError(f"counts outside {layout_for(self.mode).bits}-bit range")
        self.counts = counts

    @property
    def shape(self):
        return self.counts.shape


@dataclass
class FrameStack:
    """Frames of all bands captured at common instants, plus knowledge geometry.

    ``attitude`` holds the on-board attitude knowledge samples; the tilt
    schedule is the commanded tilt. Neither includes unknown biases.
    """

    mode: Mode
    sensor: SensorGeometry
    orbit: OrbitElements
    frame_period: float
    frames: dict = field(default_factory=dict)
    attitude: list = field(default_factory=lambda: [AttitudeState(0.0)])
    tilt: TiltSchedule = field(default_factory=TiltSchedule)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        self.frames = {int(b): list(fs) for b, fs in self.frames.items()}
        times = None
        for band, fs in self.frames.items():
            t = np.array([f.start_time for f in fs])
            if t.size > 1 and np.any(np.diff(t) <= 0):
                raise DataError(f"band {band}: frame timestamps must be strictly increasing")
            if times is not None and (t.shape != times.shape or np.any(t != times)):
                raise DataError("bands must share frame timestamps")
            times = t

    @property
    def bands(self) -> list[int]:
        return sorted(self.frames)

    @property
    def times(self) -> np.ndarray:
        if not self.frames:
            return np.zeros(0)
        return np.array([f.start_time for f in self.frames[self.bands[0]]])

    def __len__(self):
        return len(self.times)

    @property
    def layout(self):
        return layout_for(self.mode, self.frame_period)

    def knowledge_camera(self, interior: InteriorLayer | None = None, **kw) -> CameraModel:
        return CameraModel(sensor=self.sensor, orbit=self.orbit,
                           attitude=AttitudeProvider(self.attitude), tilt=self.tilt,
                           interior=interior, **kw)

    def subset(self, bands=None, frames: slice | None = None) -> "FrameStack":
        bands = self.bands if bands is None else [int(b) for b in bands]
        sel = frames or slice(None)
        return FrameStack(self.mode, self.sensor, self.orbit, self.frame_period,
                          {b: self.frames[b][sel] for b in bands}, list(self.attitude),
                          self.tilt, dict(self.metadata))
