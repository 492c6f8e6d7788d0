from __future__ import annotations

from soelab.env.types import (
    DEFAULT_VEHICLE,
    Action,
    EgoState,
    IDMParams,
    Pose,
    VehicleParams,
    _check_finite,
)
from soelab.kernels import dynamics as kd


def step_bicycle(state: EgoState, action: Action, dt: float, vehicle: VehicleParams = DEFAULT_VEHICLE) -> EgoState:
    """Advance the ego by ``dt`` seconds under a held (accel, steer) command.

    The command is clamped to the vehicle's bounds before integration.  The
    recorded acceleration is the realised one, so it reads 0 when the speed
    floor at standstill absorbs a braking command.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    _check_finite(accel_cmd=action.accel_cmd, steer_cmd=action.steer_cmd, dt=dt)
    act = action.clamped(vehicle)
    p = state.pose
    x, y, h, v = kd.bicycle_step(p.x, p.y, p.heading, state.speed, act.accel_cmd, act.steer_cmd, dt, vehicle.wheelbase)
    return EgoState(Pose(x, y, h), v, (v - state.speed) / dt, act.steer_cmd)


def idm_accel(gap: float, v: float, v_lead: float, params: IDMParams = IDMParams()) -> float:
    """IDM acceleration toward a leader ``gap`` metres ahead.

    Free road is a very large gap.  ``gap <= 0`` means the boxes already
    touch and yields the emergency value ``-params.b_hard``.
    """
    _check_finite(v=v, v_lead=v_lead)
    if gap != gap:
        raise ValueError("gap is NaN")
    p = params
    return float(kd.idm(float(gap), float(v), float(v_lead), p.a_max, p.b, p.v0, p.delta, p.s0, p.headway, p.b_hard))
