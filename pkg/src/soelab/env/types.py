from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from soelab.kernels import geometry as geo


class NonFiniteError(ValueError):
    """A state or command carried NaN or infinity."""


def _check_finite(**values: float) -> None:
    bad = [k for k, v in values.items() if not math.isfinite(v)]
    if bad:
        raise NonFiniteError(f"non-finite input: {', '.join(f'{k}={values[k]!r}' for k in bad)}")


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float

    def __post_init__(self) -> None:
        _check_finite(x=self.x, y=self.y, heading=self.heading)
        object.__setattr__(self, "heading", geo.wrap_angle(float(self.heading)))


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.7
    length: float = 4.5
    width: float = 1.9
    max_steer: float = 0.6
    accel_min: float = -5.0
    accel_max: float = 3.0

    @property
    def action_low(self) -> np.ndarray:
        return np.array([self.accel_min, -self.max_steer])

    @property
    def action_high(self) -> np.ndarray:
        return np.array([self.accel_max, self.max_steer])


DEFAULT_VEHICLE = VehicleParams()


@dataclass(frozen=True)
class EgoState:
    pose: Pose
    speed: float
    acceleration: float = 0.0
    steering_angle: float = 0.0

    def __post_init__(self) -> None:
        _check_finite(speed=self.speed, acceleration=self.acceleration, steering_angle=self.steering_angle)
        if self.speed < 0.0:
            raise ValueError(f"speed must be >= 0, got {self.speed}")


@dataclass(frozen=True)
class Action:
    accel_cmd: float
    steer_cmd: float

    def is_finite(self) -> bool:
        return math.isfinite(self.accel_cmd) and math.isfinite(self.steer_cmd)

    def clamped(self, vehicle: VehicleParams = DEFAULT_VEHICLE) -> "Action":
        return Action(
            min(max(self.accel_cmd, vehicle.accel_min), vehicle.accel_max),
            min(max(self.steer_cmd, -vehicle.max_steer), vehicle.max_steer),
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.accel_cmd, self.steer_cmd])


@dataclass(frozen=True)
class IDMParams:
    a_max: float = 2.0
    b: float = 2.0
    v0: float = 10.0
    delta: float = 4.0
    s0: float = 2.0
    headway: float = 1.5
    b_hard: float = 4.0


@dataclass(frozen=True, eq=False)
class Route:
    """Reference centerline with lane width and speed limit.

    Arc length, segment unit vectors and vertex curvature are derived once on
    construction; all arrays are read-only.
    """

    centerline: np.ndarray
    lane_half_width: float
    speed_limit: float
    cum_s: np.ndarray = field(init=False, repr=False)
    units: np.ndarray = field(init=False, repr=False)
    curvature: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        pts = np.ascontiguousarray(self.centerline, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("centerline must be an (M>=2, 2) array")
        if not np.all(np.isfinite(pts)):
            raise NonFiniteError("centerline has non-finite points")
        if not self.lane_half_width > 0 or not self.speed_limit > 0:
            raise ValueError("lane_half_width and speed_limit must be positive")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0.0):
            raise ValueError("consecutive centerline points must be distinct")
        cum_s = np.concatenate([[0.0], np.cumsum(seg_len)])
        units = seg / seg_len[:, None]
        headings = np.arctan2(units[:, 1], units[:, 0])
        kappa = np.zeros(pts.shape[0])
        if pts.shape[0] > 2:
            dh = np.array([geo.wrap_angle(float(h)) for h in np.diff(headings)])
            kappa[1:-1] = dh / (0.5 * (seg_len[:-1] + seg_len[1:]))
        for name, arr in (("centerline", pts), ("cum_s", cum_s), ("units", units), ("curvature", kappa)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def length(self) -> float:
        return float(self.cum_s[-1])

    def project(self, x: float, y: float) -> tuple[float, float]:
        """Arc length and left-positive lateral offset of a point."""
        s, d, _ = geo.project(self.centerline, self.cum_s, self.units, float(x), float(y))
        return float(s), float(d)

    def point_at(self, s: float) -> tuple[float, float, float]:
        return geo.point_at(self.centerline, self.cum_s, self.units, float(s))

    def pose_at(self, s: float, d: float = 0.0) -> tuple[float, float, float]:
        return geo.pose_at(self.centerline, self.cum_s, self.units, float(s), float(d))

    def heading_at(self, s: float) -> float:
        return self.point_at(s)[2]

    def curvature_at(self, s: float) -> float:
        return float(np.interp(s, self.cum_s, self.curvature))

    def max_abs_curvature(self, s0: float, s1: float) -> float:
        return float(geo.max_abs_curvature(self.cum_s, self.curvature, float(s0), float(s1)))

    def transformed(self, dx: float, dy: float, rot: float) -> "Route":
        c, s = math.cos(rot), math.sin(rot)
        pts = self.centerline @ np.array([[c, s], [-s, c]]) + np.array([dx, dy])
        return Route(pts, self.lane_half_width, self.speed_limit)
