from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from soelab.env.types import EgoState, Pose, Route

SCENARIO_KINDS = (
    "straight_with_lead",
    "stopping_with_lead",
    "parked_vehicle_pass",
    "lane_change",
    "left_turn",
    "right_turn",
    "high_speed_cruise",
    "pedestrian_crossing",
)
AGENT_KINDS = ("vehicle", "parked", "pedestrian")

NON_REACTIVE = "non_reactive"
REACTIVE = "reactive"
_MODE_ALIASES = {
    "non_reactive": NON_REACTIVE,
    "cl-nr": NON_REACTIVE,
    "cl_nr": NON_REACTIVE,
    "nr": NON_REACTIVE,
    "reactive": REACTIVE,
    "cl-r": REACTIVE,
    "cl_r": REACTIVE,
    "r": REACTIVE,
}
MODE_LABELS = {NON_REACTIVE: "CL-NR", REACTIVE: "CL-R"}


def normalize_mode(mode: str) -> str:
    try:
        return _MODE_ALIASES[mode.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown closed-loop mode {mode!r}") from None


@dataclass(frozen=True, eq=False)
class AgentState:
    """A traffic participant.

    Motion is parameterised in the route frame: vehicles run IDM along a lane
    at constant lateral offset ``d``; pedestrians walk across at constant
    arc length ``s`` once ``start_time`` has passed.  ``scripted_trajectory``
    rows are (x, y, heading, speed) at every sim step including t=0.
    """

    pose: Pose
    speed: float
    length: float
    width: float
    kind: str = "vehicle"
    s: float = 0.0
    d: float = 0.0
    desired_speed: float = 0.0
    stop_s: float = math.inf
    start_time: float = 0.0
    lateral_dir: float = 0.0
    d_end: float = 0.0
    scripted_trajectory: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"unknown agent kind {self.kind!r}")
        if self.speed < 0 or self.length <= 0 or self.width <= 0:
            raise ValueError("agent speed must be >= 0 and dimensions positive")

    def behaviour_dict(self) -> dict:
        return {
            "kind": self.kind,
            "length": self.length,
            "width": self.width,
            "s": self.s,
            "d": self.d,
            "speed": self.speed,
            "desired_speed": self.desired_speed,
            "stop_s": None if math.isinf(self.stop_s) else self.stop_s,
            "start_time": self.start_time,
            "lateral_dir": self.lateral_dir,
            "d_end": self.d_end,
        }


@dataclass(frozen=True, eq=False)
class Scenario:
    id: str
    kind: str
    seed: int
    route: Route
    agents: tuple[AgentState, ...]
    ego_init: EgoState
    duration: float
    sim_dt: float = 0.1
    plan_dt: float = 0.5
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if not self.sim_dt > 0 or not self.plan_dt > 0 or self.duration < 0:
            raise ValueError("sim_dt, plan_dt must be positive and duration non-negative")
        n = self.duration / self.sim_dt
        k = self.plan_dt / self.sim_dt
        if abs(n - round(n)) > 1e-9 or abs(k - round(k)) > 1e-9 or round(k) < 1:
            raise ValueError("duration and plan_dt must be integer multiples of sim_dt")
        for a in self.agents:
            traj = a.scripted_trajectory
            if traj is not None and traj.shape[0] < self.n_steps + 1:
                raise ValueError(f"agent script covers {traj.shape[0]} samples, need {self.n_steps + 1}")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.sim_dt))

    @property
    def steps_per_plan(self) -> int:
        return int(round(self.plan_dt / self.sim_dt))

    @property
    def n_plan_ticks(self) -> int:
        return -(-self.n_steps // self.steps_per_plan)

    def to_dict(self) -> dict:
        """Canonical, JSON-ready description (scripted trajectories included)."""
        e = self.ego_init
        return {
            "id": self.id,
            "kind": self.kind,
            "seed": int(self.seed),
            "duration": self.duration,
            "sim_dt": self.sim_dt,
            "plan_dt": self.plan_dt,
            "params": self.params,
            "route": {
                "centerline": self.route.centerline.tolist(),
                "lane_half_width": self.route.lane_half_width,
                "speed_limit": self.route.speed_limit,
            },
            "ego_init": [e.pose.x, e.pose.y, e.pose.heading, e.speed, e.acceleration, e.steering_angle],
            "agents": [
                {
                    **a.behaviour_dict(),
                    "pose": [a.pose.x, a.pose.y, a.pose.heading],
                    "scripted_trajectory": None if a.scripted_trajectory is None else a.scripted_trajectory.tolist(),
                }
                for a in self.agents
            ],
        }

    def to_bytes(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()

    @cached_property
    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    @cached_property
    def agent_arrays(self) -> "AgentArrays":
        return AgentArrays.from_agents(self.agents)


_KIND_CODE = {"vehicle": 0, "parked": 1, "pedestrian": 2}


@dataclass(frozen=True, eq=False)
class AgentArrays:
    """Column view of the agents used by the simulator."""

    kind: np.ndarray
    dims: np.ndarray
    s: np.ndarray
    d: np.ndarray
    speed: np.ndarray
    desired_speed: np.ndarray
    stop_s: np.ndarray
    start_time: np.ndarray
    lateral_dir: np.ndarray
    d_end: np.ndarray
    kinds: tuple[str, ...]
    scripts: np.ndarray | None

    @classmethod
    def from_agents(cls, agents) -> "AgentArrays":
        def col(name):
            return np.array([float(getattr(a, name)) for a in agents], dtype=np.float64)

        scripts = None
        if agents and all(a.scripted_trajectory is not None for a in agents):
            scripts = np.stack([a.scripted_trajectory for a in agents], axis=1)
        return cls(
            kind=np.array([_KIND_CODE[a.kind] for a in agents], dtype=np.int64),
            dims=np.array([[a.length, a.width] for a in agents], dtype=np.float64).reshape(-1, 2),
            s=col("s"),
            d=col("d"),
            speed=col("speed"),
            desired_speed=col("desired_speed"),
            stop_s=col("stop_s"),
            start_time=col("start_time"),
            lateral_dir=col("lateral_dir"),
            d_end=col("d_end"),
            kinds=tuple(a.kind for a in agents),
            scripts=scripts,
        )
