from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from soelab.env.agents import AgentSim
from soelab.env.scenario import NON_REACTIVE, REACTIVE, Scenario, normalize_mode
from soelab.env.types import DEFAULT_VEHICLE, Action, EgoState, IDMParams, Pose, Route, VehicleParams
from soelab.kernels import dynamics as kd
from soelab.kernels import geometry as geo

COMPLETED = "completed"
COLLIDED = "collided"
OFF_ROUTE = "off_route"
FAULT = "fault"

EGO_COLUMNS = ("x", "y", "heading", "speed", "accel", "steer")


@dataclass(frozen=True, eq=False)
class WorldState:
    """What a policy sees at a plan tick."""

    route: Route
    time: float
    ego: EgoState
    agents: np.ndarray  # (A, 4): x, y, heading, speed
    agent_dims: np.ndarray  # (A, 2): length, width
    agent_kinds: tuple[str, ...]
    vehicle: VehicleParams = DEFAULT_VEHICLE
    plan_dt: float = 0.5


class PlanningPolicy(Protocol):
    def act(self, world: WorldState, tick: int) -> Action: ...


def expert_index_of(policy, tick: int) -> int:
    fn = getattr(policy, "expert_index", None)
    return 0 if fn is None else int(fn(tick))


@dataclass(eq=False)
class TrajectoryLog:
    scenario_id: str
    mode: str
    sim_dt: float
    plan_dt: float
    ego0: np.ndarray  # (6,) initial ego row
    frenet0: np.ndarray  # (2,) initial (s, d)
    times: np.ndarray  # (N,) time at the end of each sim step
    ego: np.ndarray  # (N, 6) see EGO_COLUMNS, after each step
    actions: np.ndarray  # (N, 2) command held during the step
    expert_index: np.ndarray  # (N,) expert active during the step
    frenet: np.ndarray  # (N, 2) route (s, d) after each step
    agents: np.ndarray  # (N, A, 4) agent x, y, heading, speed after each step
    agent_dims: np.ndarray  # (A, 2)
    plan_ticks: np.ndarray  # (P,)
    plan_experts: np.ndarray  # (P,) sigma(t) per tick
    termination: str
    fault: str | None = None
    lane_half_width: float = math.inf
    speed_limit: float = math.inf
    kind: str = ""

    def __len__(self) -> int:
        return int(self.times.shape[0])

    @property
    def collided(self) -> bool:
        return self.termination == COLLIDED

    def trajectory_bytes(self) -> bytes:
        """Bytes of everything that describes motion (not schedule bookkeeping)."""
        h = hashlib.sha256()
        for arr in (self.ego0, self.frenet0, self.times, self.ego, self.actions, self.frenet, self.agents,
                    self.plan_ticks):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(self.termination.encode())
        return h.digest()

    def to_bytes(self) -> bytes:
        h = hashlib.sha256(self.trajectory_bytes())
        h.update(np.ascontiguousarray(self.expert_index).tobytes())
        h.update(np.ascontiguousarray(self.plan_experts).tobytes())
        return h.digest()

    def to_csv(self, path) -> None:
        """One row per sim step: time, ego columns, command, expert index, route s/d."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", *EGO_COLUMNS, "accel_cmd", "steer_cmd", "expert_index", "route_s", "route_d"])
            for i in range(len(self)):
                w.writerow([repr(float(self.times[i])), *(repr(float(v)) for v in self.ego[i]),
                            *(repr(float(v)) for v in self.actions[i]), int(self.expert_index[i]),
                            repr(float(self.frenet[i, 0])), repr(float(self.frenet[i, 1]))])


def rollout(policy, scenario: Scenario, mode: str = NON_REACTIVE, *, vehicle: VehicleParams = DEFAULT_VEHICLE,
            idm: IDMParams = IDMParams(), off_route_factor: float = 2.0) -> TrajectoryLog:
    """Closed-loop episode: the policy drives, agents replay or react.

    The policy is queried once per plan tick with the tick index (0-based,
    reset per scenario) and its command is held for ``plan_dt``.  The
    episode ends early on box overlap, on lateral deviation beyond
    ``off_route_factor * lane_half_width``, or on a non-finite command.
    """
    return _simulate(policy, scenario, normalize_mode(mode), vehicle, idm, off_route_factor, stop_on_failure=True)


def _simulate(policy, sc: Scenario, mode: str, vehicle: VehicleParams, idm: IDMParams, off_route_factor: float,
              stop_on_failure: bool) -> TrajectoryLog:
    reactive = mode == REACTIVE
    route = sc.route
    pts, cum_s, units = route.centerline, route.cum_s, route.units
    arrays = sc.agent_arrays
    n_agents = len(sc.agents)
    if not reactive and n_agents and arrays.scripts is None:
        raise ValueError(f"scenario {sc.id} has no scripted agent trajectories for non-reactive mode")
    n = sc.n_steps
    k = sc.steps_per_plan
    dt = sc.sim_dt
    el, ew, wb = vehicle.length, vehicle.width, vehicle.wheelbase
    limit_d = off_route_factor * route.lane_half_width

    sim = AgentSim(route, arrays, idm)
    agents_now = sim.poses() if reactive or not n_agents else arrays.scripts[0].copy()
    dims = arrays.dims

    e = sc.ego_init
    x, y, h, v, acc, steer = e.pose.x, e.pose.y, e.pose.heading, e.speed, e.acceleration, e.steering_angle
    ego_s, ego_d, _ = geo.project(pts, cum_s, units, x, y)

    times = np.empty(n)
    ego_log = np.empty((n, 6))
    act_log = np.empty((n, 2))
    idx_log = np.empty(n, dtype=np.int64)
    fr_log = np.empty((n, 2))
    ag_log = np.empty((n, n_agents, 4))
    ticks: list[int] = []
    experts: list[int] = []
    termination = COMPLETED
    fault = None
    accel_cmd = steer_cmd = 0.0
    active = 0
    executed = 0

    for step in range(n):
        t = step * dt
        if step % k == 0:
            tick = step // k
            world = WorldState(route, t, EgoState(Pose(x, y, h), v, acc, steer), agents_now, dims, arrays.kinds,
                               vehicle, sc.plan_dt)
            action = policy.act(world, tick)
            active = expert_index_of(policy, tick)
            ticks.append(tick)
            experts.append(active)
            if not action.is_finite():
                termination = FAULT
                fault = f"non-finite action at tick {tick}: {action}"
                break
            action = action.clamped(vehicle)
            accel_cmd, steer_cmd = action.accel_cmd, action.steer_cmd

        nx, ny, nh, nv = kd.bicycle_step(x, y, h, v, accel_cmd, steer_cmd, dt, wb)
        if n_agents:
            if reactive:
                sim.step(t, dt, (ego_s, ego_d, v, el, ew))
                agents_now = sim.poses()
            else:
                agents_now = arrays.scripts[step + 1]
        acc = (nv - v) / dt
        x, y, h, v, steer = nx, ny, nh, nv, steer_cmd
        ego_s, ego_d, _ = geo.project(pts, cum_s, units, x, y)

        times[step] = (step + 1) * dt
        ego_log[step] = (x, y, h, v, acc, steer)
        act_log[step] = (accel_cmd, steer_cmd)
        idx_log[step] = active
        fr_log[step] = (ego_s, ego_d)
        if n_agents:
            ag_log[step] = agents_now
        executed = step + 1

        if stop_on_failure:
            if n_agents and geo.any_overlap(x, y, h, el, ew, agents_now, dims):
                termination = COLLIDED
                break
            if abs(ego_d) > limit_d:
                termination = OFF_ROUTE
                break

    e0 = sc.ego_init
    s0, d0, _ = geo.project(pts, cum_s, units, e0.pose.x, e0.pose.y)
    return TrajectoryLog(
        scenario_id=sc.id,
        mode=mode,
        sim_dt=dt,
        plan_dt=sc.plan_dt,
        ego0=np.array([e0.pose.x, e0.pose.y, e0.pose.heading, e0.speed, e0.acceleration, e0.steering_angle]),
        frenet0=np.array([s0, d0]),
        times=times[:executed],
        ego=ego_log[:executed],
        actions=act_log[:executed],
        expert_index=idx_log[:executed],
        frenet=fr_log[:executed],
        agents=ag_log[:executed],
        agent_dims=dims.copy(),
        plan_ticks=np.array(ticks, dtype=np.int64),
        plan_experts=np.array(experts, dtype=np.int64),
        termination=termination,
        fault=fault,
        lane_half_width=route.lane_half_width,
        speed_limit=route.speed_limit,
        kind=sc.kind,
    )


def replay_agents(policy, sc: Scenario, vehicle: VehicleParams = DEFAULT_VEHICLE,
                  idm: IDMParams = IDMParams()) -> np.ndarray:
    """Agent trajectories (T+1, A, 4) from a reactive run with ``policy`` driving the ego.

    Used to produce log-replay scripts: agents behave as they did around the
    demonstrator, and ego failures do not cut the recording short.
    """
    log = _simulate(policy, sc, REACTIVE, vehicle, idm, math.inf, stop_on_failure=False)
    first = AgentSim(sc.route, sc.agent_arrays, idm).poses()
    return np.concatenate([first[None], log.agents], axis=0)
