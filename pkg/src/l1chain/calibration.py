"""Versioned bundle of every calibration table the processor consumes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import CalibrationMissingError, DomainError, GeometryMismatchError
from .frames import FrameStack, RawFrame
from .geocal import REFERENCE_BAND, AttitudeCorrection, BBRProfile, TiltDriftModel, estimate_bbr
from .geom.model import CameraModel
from .geom.sensor import InteriorLayer, SensorGeometry, layout_for
from .radiometry import (CalibCoeffs, DarkReference, PRNUTable, apply_prnu, build_smear_weights,
                         correct_dark, correct_smear, dark_estimates)
from .tdi import TDIConfig, run_tdi

log = logging.getLogger(__name__)


@dataclass
class SmearParams:
    integration_ms: float = 64.0
    row_transfer_us: float = 2.0


@dataclass
class CalibrationSet:
    """Radiometric and geometric tables plus the sensor they belong to.

    Missing tables are skipped with a warning unless processing is strict.
    The geometric corrections compose as: processing camera for a band =
    knowledge + attitude correction + tilt drift + (common interior + band BBR).
    """

    version: str = "0"
    sensor: SensorGeometry = field(default_factory=SensorGeometry)
    coeffs: CalibCoeffs | None = None
    dark: dict = field(default_factory=dict)
    prnu: dict = field(default_factory=dict)
    smear: SmearParams | None = None
    bbr: dict = field(default_factory=dict)
    attitude: AttitudeCorrection | None = None
    tilt_drift: TiltDriftModel | None = None
    provenance: dict = field(default_factory=dict)

    def check_sensor(self, sensor: SensorGeometry):
        if sensor != self.sensor:
            raise GeometryMismatchError("calibration set was built for a different sensor geometry")

    def with_(self, **kw) -> "CalibrationSet":
        return replace(self, **kw)

    # -- radiometry ------------------------------------------------------------

    def radiance(self, frames: Sequence[RawFrame], strict: bool = False) -> np.ndarray:
        """Radiance cube (frames, rows, cols) for one band's frames."""
        if not frames:
            raise DomainError("no frames")
        band = frames[0].band
        mode = frames[0].mode
        layout = layout_for(mode)
        missing = [name for name, have in (("dark", band in self.dark), ("prnu", band in self.prnu),
                                           ("smear", self.smear is not None)) if not have]
        if self.coeffs is None or band not in self.coeffs.bands:
            raise CalibrationMissingError(f"no radiance coefficients for band {band}")
        if missing and strict:
            raise CalibrationMissingError(f"band {band}: missing {', '.join(missing)} table(s)")
        for name in missing:
            log.warning("band %d: no %s table; correction skipped", band, name)
        x = np.stack([f.counts for f in frames]).astype(float)
        if band in self.dark:
            dark, fallback = dark_estimates(frames, self.dark[band])
            x = correct_dark(x, dark[:, None, :])
        if band in self.prnu:
            x = apply_prnu(x, self.prnu[band], band)
        if self.smear is not None:
            model = build_smear_weights(mode, self.smear.integration_ms, self.smear.row_transfer_us,
                                        rows=x.shape[1], row_bin=layout.row_bin)
            x = correct_smear(x, model)
        return self.coeffs.for_band(band).forward(x)

    # -- geometry --------------------------------------------------------------

    def interior(self, band: int | None) -> InteriorLayer | None:
        layer = self.attitude.interior if self.attitude is not None else None
        if band is not None and band in self.bbr:
            b = self.bbr[band]
            b = b.interior() if isinstance(b, BBRProfile) else b
            layer = b if layer is None else layer + b
        return layer

    def camera(self, stack: FrameStack, band: int | None) -> CameraModel:
        """Processing geometry for ``band``; ``None`` gives the band-free reference."""
        kw = {}
        if self.attitude is not None:
            kw.update(roll_bias=self.attitude.roll, pitch_bias=self.attitude.pitch)
        if self.tilt_drift is not None:
            kw.update(tilt_pitch_slope=self.tilt_drift.slope,
                      tilt_pitch_intercept=self.tilt_drift.intercept)
        return stack.knowledge_camera(interior=self.interior(band), **kw)

    def apply_attitude(self, correction: AttitudeCorrection) -> "CalibrationSet":
        """New set with ``correction`` composed onto the current attitude correction."""
        total = correction if self.attitude is None else self.attitude + correction
        return self.with_(attitude=total)


def calibrate_bbr(stack: FrameStack, calibration: CalibrationSet, product=None, *, passes: int = 1,
                  degree: int = 3, reference_band: int = REFERENCE_BAND,
                  cfg: TDIConfig | None = None):
    """Closed-loop band-to-band calibration on L1B products of ``stack``.

    Each pass measures every band against the reference, composes the
    correction onto the band's interior layer and reprocesses. Later passes
    also absorb registration shifts introduced by the resampling kernel, which
    vary faster across the swath than the optics do, so more than one pass
    usually wants a higher ``degree``. Returns the new set and the profiles
    measured in each pass.
    """
    if passes < 1:
        raise DomainError("passes must be >= 1")
    cfg = cfg or TDIConfig()
    if cfg.level != "L1B":
        raise DomainError("band-to-band calibration works on L1B products")
    history = []
    cal = calibration
    for k in range(passes):
        if product is None or k > 0:
            product = run_tdi(stack, cal, cfg)
        profiles = estimate_bbr(product, cal.camera(stack, None), reference_band, degree=degree)
        history.append(profiles)
        bbr = dict(cal.bbr)
        for b, p in profiles.items():
            if b == reference_band:
                continue
            prev = bbr.get(b)
            if isinstance(prev, BBRProfile):
                prev = prev.interior()
            bbr[b] = p if prev is None else p.interior() + prev
        cal = cal.with_(bbr=bbr)
    return cal, history


def radiometric_set(bands: Sequence[int], sensor: SensorGeometry, coeffs: CalibCoeffs,
                    dark: Mapping[int, DarkReference] | None = None,
                    prnu: Mapping[int, PRNUTable] | None = None,
                    smear: SmearParams | None = None, version: str = "0") -> CalibrationSet:
    return CalibrationSet(version=version, sensor=sensor, coeffs=coeffs,
                          dark={int(b): v for b, v in (dark or {}).items() if int(b) in bands},
                          prnu={int(b): v for b, v in (prnu or {}).items() if int(b) in bands},
                          smear=smear)
