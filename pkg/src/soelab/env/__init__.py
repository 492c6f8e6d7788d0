"""Deterministic 2D closed-loop driving environment."""

from soelab.env.dynamics import idm_accel, step_bicycle
from soelab.env.generate import (
    PROFILES,
    generate_scenario,
    load_scenarios,
    read_scenario_set,
    write_scenario_set,
)
from soelab.env.rollout import (
    COLLIDED,
    COMPLETED,
    FAULT,
    OFF_ROUTE,
    TrajectoryLog,
    WorldState,
    replay_agents,
    rollout,
)
from soelab.env.scenario import (
    MODE_LABELS,
    NON_REACTIVE,
    REACTIVE,
    SCENARIO_KINDS,
    AgentState,
    Scenario,
    normalize_mode,
)
from soelab.env.types import (
    DEFAULT_VEHICLE,
    Action,
    EgoState,
    IDMParams,
    NonFiniteError,
    Pose,
    Route,
    VehicleParams,
)

__all__ = [name for name in dir() if not name.startswith("_")]
