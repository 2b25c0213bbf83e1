"""INI run configuration with strict key checking.

Example::

    [run]
    version = 1
    seed = 7
    mode = LAC

    [sensor]
    active_cols = 512

    [scene]
    frames = 40
    contrast = 0.1

    [effects]
    noise = snr
    snr = 200

    [misalignment]
    b10_along = 1.5, 0.3
    b10_across = -0.5

    [tdi]
    kernel = exp
    level = L1B

Misalignment coefficients are polynomial terms in nadir pixels over the
normalised detector column.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, L1ChainError
from .geom.orbit import OrbitElements
from .geom.sensor import Mode, SensorGeometry
from .sim import EffectsConfig, misalignment_from_pixels
from .tdi import TDIConfig

CONFIG_VERSION = 1


@dataclass
class ScenePlan:
    """Synthetic scene and acquisition extent."""

    frames: int = 40
    bands: tuple = (7, 10)
    t0: float = 0.0
    tilt_deg: float = 0.0
    cell_m: float = 120.0
    slope: float = -3.0
    contrast: float = 0.1
    smoothing_m: float = 0.0
    band_correlation: float = 0.995
    margin_km: float = 15.0

    def __post_init__(self):
        if self.frames < 1:
            raise ConfigError("[scene] frames must be positive")
        if abs(self.tilt_deg) > 20.0:
            raise ConfigError(f"[scene] tilt {self.tilt_deg} deg outside +/-20 deg")
        if not 0.0 <= self.band_correlation <= 1.0:
            raise ConfigError("[scene] band_correlation must lie in [0, 1]")


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    mode: str = "LAC"
    sensor: SensorGeometry = field(default_factory=SensorGeometry)
    orbit: OrbitElements = field(default_factory=OrbitElements)
    scene: ScenePlan = field(default_factory=ScenePlan)
    effects: EffectsConfig = field(default_factory=EffectsConfig)
    tdi: TDIConfig = field(default_factory=TDIConfig)


_SCALARS = (bool, int, float, str)


def _convert(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            return configparser.ConfigParser.BOOLEAN_STATES[raw.strip().lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [v.strip() for v in raw.split(",") if v.strip()]
            kind = type(default[0]) if default else float
            return tuple(kind(v) for v in items)
        if default is None:
            return None if raw.strip().lower() in ("", "none") else float(raw)
        return raw.strip()
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from exc


def _build(cls, section: str, items: dict, skip=()):
    proto = cls()
    known = {f.name: f for f in fields(cls) if f.name not in skip}
    kw = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        default = getattr(proto, key)
        if not isinstance(default, _SCALARS + (tuple, type(None))):
            raise ConfigError(f"[{section}] {key} cannot be set from a config file")
        kw[key] = _convert(section, key, raw, default)
    try:
        return cls(**kw)
    except ConfigError:
        raise
    except (L1ChainError, TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def _misalignment(sensor: SensorGeometry, items: dict) -> dict:
    coeffs: dict[int, dict] = {}
    for key, raw in items.items():
        band, _, axis = key.partition("_")
        if not (band.startswith("b") and band[1:].isdigit() and axis in ("along", "across")):
            raise ConfigError(f"[misalignment] unknown key {key!r} (expected b<band>_along/across)")
        coeffs.setdefault(int(band[1:]), {})[axis] = _convert("misalignment", key, raw, (0.0,))
    return {b: misalignment_from_pixels(sensor, v.get("along", (0.0,)), v.get("across", (0.0,)))
            for b, v in coeffs.items()}


SECTIONS = ("run", "sensor", "orbit", "scene", "effects", "misalignment", "tdi")


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
    run = dict(cp["run"]) if cp.has_section("run") else {}
    version = int(run.pop("version", CONFIG_VERSION))
    if version != CONFIG_VERSION:
        raise ConfigError(f"config version {version} is not supported (expected {CONFIG_VERSION})")
    for key in run:
        if key not in ("seed", "mode"):
            raise ConfigError(f"[run] unknown key {key!r}")
    sec = lambda n: dict(cp[n]) if cp.has_section(n) else {}  # noqa: E731
    sensor = _build(SensorGeometry, "sensor", sec("sensor"))
    effects = _build(EffectsConfig, "effects", sec("effects"), skip=("misalignment",))
    mis = _misalignment(sensor, sec("misalignment"))
    if mis:
        effects = dataclasses.replace(effects, misalignment=mis)
    mode = run.get("mode", "LAC")
    try:
        mode = Mode.parse(mode).value
    except (L1ChainError, ValueError) as exc:
        raise ConfigError(f"[run] mode: {exc}") from exc
    return RunConfig(version=version, seed=int(run.get("seed", 0)), mode=mode, sensor=sensor,
                     orbit=_build(OrbitElements, "orbit", sec("orbit")),
                     scene=_build(ScenePlan, "scene", sec("scene")), effects=effects,
                     tdi=_build(TDIConfig, "tdi", sec("tdi"), skip=("workers",)))


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
