"""Traffic agent motion in the route frame."""

from __future__ import annotations

import math

import numpy as np

from soelab.env.scenario import AgentArrays
from soelab.env.types import IDMParams, Route
from soelab.kernels import dynamics as kd
from soelab.kernels import geometry as geo

CURVE_LAT_ACCEL = 2.5  # m/s^2 used to cap cornering speed
LANE_MARGIN = 0.3  # m of extra lateral slack when deciding who follows whom
STANDSTILL = 0.05  # m/s below which a braking vehicle snaps to rest

VEHICLE, PARKED, PEDESTRIAN = 0, 1, 2


def curve_speed(route: Route, s: float, v: float, desired: float) -> float:
    """Desired speed capped by the tightest curvature in the preview window."""
    kappa = geo.max_abs_curvature(route.cum_s, route.curvature, s, s + max(15.0, 3.0 * v))
    if kappa > 1e-6:
        return min(desired, math.sqrt(CURVE_LAT_ACCEL / kappa))
    return desired


class AgentSim:
    """Mutable agent state for one rollout.

    ``step`` runs IDM for vehicles (optionally treating the ego as a
    potential leader), walks pedestrians and leaves parked cars alone.
    """

    def __init__(self, route: Route, arrays: AgentArrays, idm: IDMParams = IDMParams()):
        self.route = route
        self.a = arrays
        self.idm = idm
        self.s = [float(x) for x in arrays.s]
        self.d = [float(x) for x in arrays.d]
        self.v = [float(x) for x in arrays.speed]
        self.n = len(self.s)

    def poses(self) -> np.ndarray:
        out = np.empty((self.n, 4))
        r = self.route
        for j in range(self.n):
            x, y, h = geo.pose_at(r.centerline, r.cum_s, r.units, self.s[j], self.d[j])
            if self.a.kind[j] == PEDESTRIAN:
                h = geo.wrap_angle(h + self.a.lateral_dir[j] * 0.5 * math.pi)
            out[j, 0] = x
            out[j, 1] = y
            out[j, 2] = h
            out[j, 3] = self.v[j]
        return out

    def _leader(self, j: int, ego) -> tuple[float, float]:
        a = self.a
        lj, wj = a.dims[j, 0], a.dims[j, 1]
        sj, dj = self.s[j], self.d[j]
        gap = math.inf
        v_lead = 0.0
        if a.stop_s[j] < math.inf:
            gap = a.stop_s[j] - sj - 0.5 * lj
        for k in range(self.n):
            if k == j or self.s[k] <= sj:
                continue
            if abs(self.d[k] - dj) >= 0.5 * (wj + a.dims[k, 1]) + LANE_MARGIN:
                continue
            g = self.s[k] - sj - 0.5 * (lj + a.dims[k, 0])
            if g < gap:
                gap = g
                v_lead = self.v[k] if a.kind[k] == VEHICLE else 0.0
        if ego is not None:
            es, ed, ev, el, ew = ego
            if es > sj and abs(ed - dj) < 0.5 * (wj + ew) + LANE_MARGIN:
                g = es - sj - 0.5 * (lj + el)
                if g < gap:
                    gap = g
                    v_lead = ev
        return gap, v_lead

    def step(self, t: float, dt: float, ego=None) -> None:
        """Advance all agents by ``dt``; ``ego`` is (s, d, speed, length, width) or None."""
        a = self.a
        p = self.idm
        new_v = list(self.v)
        new_s = list(self.s)
        new_d = list(self.d)
        for j in range(self.n):
            kind = a.kind[j]
            if kind == VEHICLE:
                v = self.v[j]
                gap, v_lead = self._leader(j, ego)
                v0 = curve_speed(self.route, self.s[j], v, a.desired_speed[j])
                acc = kd.idm(1e9 if gap == math.inf else gap, v, v_lead,
                             p.a_max, p.b, v0, p.delta, p.s0, p.headway, p.b_hard)
                nv = v + acc * dt
                if nv < STANDSTILL and acc < 0.0:
                    nv = 0.0
                new_v[j] = nv
                new_s[j] = self.s[j] + v * dt
            elif kind == PEDESTRIAN:
                direction = a.lateral_dir[j]
                remaining = (a.d_end[j] - self.d[j]) * direction
                if t + 1e-9 >= a.start_time[j] and remaining > 0.0:
                    step = min(a.desired_speed[j] * dt, remaining)
                    new_d[j] = self.d[j] + direction * step
                    new_v[j] = a.desired_speed[j] if step < remaining else 0.0
                else:
                    new_v[j] = 0.0
        self.s, self.d, self.v = new_s, new_d, new_v
