"""Circular sun-synchronous orbit propagation and attitude interpolation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import DataError, DomainError
from .earth import EARTH_GM, EARTH_ROTATION_RATE, WGS84_A, rot_x, rot_y, rot_z


@dataclass(frozen=True)
class OrbitElements:
    """Near-circular orbit described in the Earth-fixed frame at ``epoch``.

    ``node_longitude_deg`` is the geographic longitude of the ascending node
    at epoch and ``arg_latitude_deg`` the satellite's argument of latitude at
    epoch. Altitude is measured above the equatorial radius.
    """

    altitude_m: float = 732_500.0
    inclination_deg: float = 98.331
    node_longitude_deg: float = 0.0
    arg_latitude_deg: float = 0.0
    epoch: float = 0.0

    def __post_init__(self):
        if not self.altitude_m > 0:
            raise DomainError("altitude must be positive")

    @property
    def semi_major_axis(self) -> float:
        return WGS84_A + self.altitude_m

    @property
    def mean_motion(self) -> float:
        return math.sqrt(EARTH_GM / self.semi_major_axis**3)

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.mean_motion


@dataclass(frozen=True)
class OrbitState:
    epoch: float
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        if not np.any(self.velocity):
            raise DomainError("velocity must be nonzero")


def _orbit_ecef(el: OrbitElements, t):
    t = np.asarray(t, dtype=float)
    a = el.semi_major_axis
    n = el.mean_motion
    inc = math.radians(el.inclination_deg)
    node = math.radians(el.node_longitude_deg)
    u = math.radians(el.arg_latitude_deg) + n * (t - el.epoch)
    cu, su = np.cos(u), np.sin(u)
    ci, si = math.cos(inc), math.sin(inc)
    cn, sn = math.cos(node), math.sin(node)
    # inertial frame coincides with Earth-fixed at epoch
    r = a * np.stack([cu * cn - su * ci * sn, cu * sn + su * ci * cn, su * si], -1)
    v = a * n * np.stack([-su * cn - cu * ci * sn, -su * sn + cu * ci * cn, cu * si], -1)
    theta = EARTH_ROTATION_RATE * (t - el.epoch)
    c, s = np.cos(theta), np.sin(theta)
    # rotate by -theta about z
    r_e = np.stack([c * r[..., 0] + s * r[..., 1], -s * r[..., 0] + c * r[..., 1], r[..., 2]], -1)
    v_i = np.stack([c * v[..., 0] + s * v[..., 1], -s * v[..., 0] + c * v[..., 1], v[..., 2]], -1)
    w = EARTH_ROTATION_RATE
    v_e = v_i - np.stack([-w * r_e[..., 1], w * r_e[..., 0], np.zeros_like(r_e[..., 0])], -1)
    return r_e, v_e


def propagate_orbit(elements: OrbitElements, t: float) -> OrbitState:
    """Earth-fixed state of a circular orbit at time ``t`` (no J2)."""
    r, v = _orbit_ecef(elements, t)
    return OrbitState(float(t), r, v)


class Ephemeris:
    """Vectorised orbit provider: ``positions(t)``/``velocities(t)`` on arrays."""

    def __init__(self, elements: OrbitElements):
        self.elements = elements

    def state(self, t):
        return _orbit_ecef(self.elements, t)

    def __call__(self, t) -> OrbitState:
        return propagate_orbit(self.elements, t)


def lvlh_matrix(position: np.ndarray, velocity: np.ndarray) -> np.ndarray:
    """Orbital reference frame (columns x, y, z) in ECEF; z to geocentre."""
    r = np.asarray(position, dtype=float)
    v = np.asarray(velocity, dtype=float)
    z = -r / np.linalg.norm(r, axis=-1, keepdims=True)
    h = np.cross(r, v)
    y = -h / np.linalg.norm(h, axis=-1, keepdims=True)
    x = np.cross(y, z)
    return np.stack([x, y, z], axis=-1)


def attitude_matrix(roll, pitch, yaw) -> np.ndarray:
    """Body-to-orbital rotation for 3-2-1 (yaw, pitch, roll) Euler angles in rad."""
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


@dataclass(frozen=True)
class AttitudeState:
    epoch: float
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0
    drift_rate: float = 0.0  # deg/s
    jitter_amplitude: float = 0.0  # deg

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.roll, self.pitch, self.yaw)):
            raise DomainError("attitude angles must be finite")


class AttitudeProvider:
    """Linear interpolation of roll/pitch/yaw between attitude samples.

    Outside the sampled interval the end values are held. A single sample
    gives a constant attitude.
    """

    def __init__(self, samples: Sequence[AttitudeState] | None = None):
        samples = list(samples) if samples else [AttitudeState(0.0)]
        times = np.array([s.epoch for s in samples], dtype=float)
        if np.any(np.diff(times) <= 0):
            raise DataError("attitude samples must have strictly increasing epochs")
        self.samples = samples
        self._t = times
        self._angles = np.array([[s.roll, s.pitch, s.yaw] for s in samples], dtype=float)

    @classmethod
    def constant(cls, roll=0.0, pitch=0.0, yaw=0.0) -> "AttitudeProvider":
        return cls([AttitudeState(0.0, roll, pitch, yaw)])

    def angles(self, t):
        t = np.asarray(t, dtype=float)
        if len(self._t) == 1:
            out = np.broadcast_to(self._angles[0], t.shape + (3,))
            return out[..., 0], out[..., 1], out[..., 2]
        return tuple(np.interp(t, self._t, self._angles[:, k]) for k in range(3))

    def __call__(self, t) -> AttitudeState:
        r, p, y = self.angles(t)
        return AttitudeState(float(t), float(r), float(p), float(y))
