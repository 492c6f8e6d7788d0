"""Scalar motion kernels shared by the ego and traffic agents."""

from __future__ import annotations

import math

from soelab._backend import njit
from soelab.kernels.geometry import wrap_angle


@njit
def bicycle_step(x, y, heading, speed, accel, steer, dt, wheelbase):
    """One explicit-Euler kinematic bicycle update; returns (x, y, heading, speed)."""
    nx = x + speed * math.cos(heading) * dt
    ny = y + speed * math.sin(heading) * dt
    nh = wrap_angle(heading + speed / wheelbase * math.tan(steer) * dt)
    nv = speed + accel * dt
    if nv < 0.0:
        nv = 0.0
    return nx, ny, nh, nv


@njit
def idm(gap, v, v_lead, a_max, b, v0, delta, s0, headway, b_hard):
    """Intelligent Driver Model acceleration clamped to [-b_hard, a_max]."""
    if gap <= 0.0:
        return -b_hard
    dyn = v * headway + v * (v - v_lead) / (2.0 * math.sqrt(a_max * b))
    if dyn < 0.0:
        dyn = 0.0
    s_star = s0 + dyn
    if v0 > 0.0:
        free = (v / v0) ** delta
    else:
        free = 1.0 if v <= 0.0 else math.inf
    acc = a_max * (1.0 - free - (s_star / gap) ** 2)
    if acc < -b_hard:
        acc = -b_hard
    if acc > a_max:
        acc = a_max
    return acc
