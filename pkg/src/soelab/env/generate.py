"""Seeded scenario construction for the toy scenario taxonomy.

Each kind draws its free parameters from a per-scenario random stream keyed
by (kind, seed, profile).  The ``shifted`` profile widens the ranges and
randomises choices the nominal profile keeps fixed (crossing side, lane
change direction, start perturbations); it is the distribution-shift knob.
Agent scripts for non-reactive mode are recorded from a reactive run with
the rule-based expert driving, i.e. log replay around the demonstrator.
"""

from __future__ import annotations

import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from soelab import rng as rngmod
from soelab.env.scenario import SCENARIO_KINDS, AgentState, Scenario
from soelab.env.types import DEFAULT_VEHICLE, EgoState, Pose, Route

PROFILES = ("nominal", "shifted")
START_S = 40.0  # ego starts this far along the route so followers fit behind
LANE_WIDTH = 3.5
CAR_DIMS = (4.5, 1.9)
PED_DIMS = (0.6, 0.6)

# (nominal range, shifted range) for every drawn quantity
_RANGES: dict[str, tuple[tuple[float, float], tuple[float, float]]] = {
    "lane_half_width": ((1.65, 1.85), (1.55, 1.85)),
    "ego_lat0": ((-1.0, 1.0), (-1.1, 1.1)),
    "ego_head0": ((-0.12, 0.12), (-0.15, 0.15)),
    "urban_limit": ((10.0, 13.0), (9.0, 15.0)),
    "ego_speed_frac": ((0.55, 0.9), (0.35, 1.0)),
    "lead_gap": ((22.0, 40.0), (16.0, 45.0)),
    "lead_speed_margin": ((2.0, 5.0), (1.0, 7.0)),
    "follower_gap": ((8.0, 18.0), (6.0, 18.0)),
    "follower_speed_frac": ((1.0, 1.1), (1.0, 1.15)),
    "follower_prob": ((0.6, 0.6), (0.75, 0.75)),
    "stop_lead_gap": ((15.0, 30.0), (12.0, 35.0)),
    "stop_lead_speed": ((6.0, 10.0), (5.0, 12.0)),
    "stop_distance": ((25.0, 45.0), (15.0, 50.0)),
    "parked_ahead": ((35.0, 70.0), (30.0, 75.0)),
    "parked_intrusion": ((0.2, 0.4), (0.25, 0.5)),
    "lc_straight": ((20.0, 40.0), (15.0, 40.0)),
    "lc_length": ((40.0, 60.0), (30.0, 60.0)),
    "lc_lead_ahead": ((60.0, 90.0), (55.0, 90.0)),
    "lc_adjacent_ahead": ((5.0, 30.0), (5.0, 30.0)),
    "lc_adjacent_speed": ((5.0, 8.0), (4.0, 9.0)),
    "turn_straight": ((45.0, 60.0), (40.0, 60.0)),
    "turn_radius": ((12.0, 20.0), (9.0, 16.0)),
    "turn_lead_prob": ((0.5, 0.5), (0.6, 0.6)),
    "turn_lead_gap": ((20.0, 35.0), (15.0, 35.0)),
    "hs_limit": ((22.0, 28.0), (20.0, 32.0)),
    "hs_speed_frac": ((0.7, 0.95), (0.55, 1.0)),
    "hs_straight": ((40.0, 80.0), (30.0, 80.0)),
    "hs_radius": ((300.0, 600.0), (200.0, 600.0)),
    "hs_angle": ((0.15, 0.35), (0.15, 0.45)),
    "hs_lead_prob": ((0.6, 0.6), (0.6, 0.6)),
    "hs_lead_gap": ((50.0, 90.0), (40.0, 90.0)),
    "hs_lead_margin": ((2.0, 5.0), (2.0, 7.0)),
    "ped_ahead": ((45.0, 65.0), (38.0, 65.0)),
    "ped_offset": ((2.0, 4.0), (1.5, 4.0)),
    "ped_speed": ((1.0, 1.6), (0.9, 1.9)),
    "ped_start": ((0.0, 1.5), (0.0, 2.0)),
    "hs_bend_draw": ((0.0, 1.0), (0.0, 1.0)),
    "frame_rot": ((-math.pi, math.pi), (-math.pi, math.pi)),
    "frame_dx": ((-500.0, 500.0), (-500.0, 500.0)),
    "frame_dy": ((-500.0, 500.0), (-500.0, 500.0)),
}


class _Draw:
    def __init__(self, gen: np.random.Generator, profile: str, overrides: dict):
        self.gen = gen
        self.col = PROFILES.index(profile)
        self.overrides = overrides
        self.values: dict[str, float] = {}

    def u(self, name: str, lo: float | None = None, hi: float | None = None) -> float:
        r_lo, r_hi = _RANGES[name][self.col]
        lo = r_lo if lo is None else lo
        hi = r_hi if hi is None else hi
        x = float(self.gen.uniform(lo, hi))  # always consume, so overrides do not shift later draws
        if name in self.overrides:
            x = float(self.overrides[name])
        self.values[name] = x
        return x

    def coin(self, name: str) -> bool:
        return self.u(name + "_draw", 0.0, 1.0) < _RANGES[name][self.col][0]

    def side(self, name: str, nominal: float) -> float:
        x = self.u(name, 0.0, 1.0)
        if self.col == 0 and name not in self.overrides:
            x = 0.0 if nominal > 0 else 1.0
            self.values[name] = x
        return 1.0 if x < 0.5 else -1.0


for _n in ("follower_prob", "turn_lead_prob", "hs_lead_prob"):
    _RANGES[_n + "_draw"] = ((0.0, 1.0), (0.0, 1.0))
for _n in ("ped_side", "lc_side", "parked_side"):
    _RANGES[_n] = ((0.0, 1.0), (0.0, 1.0))


def build_centerline(segments, ds: float = 1.0) -> np.ndarray:
    """Polyline from ("straight", L) / ("arc", R, angle) / ("shift", L, offset) pieces."""
    pts = [np.zeros(2)]
    heading = 0.0
    for seg in segments:
        p = pts[-1]
        c, s = math.cos(heading), math.sin(heading)
        if seg[0] == "straight":
            n = max(1, math.ceil(seg[1] / ds))
            for i in range(1, n + 1):
                t = seg[1] * i / n
                pts.append(p + t * np.array([c, s]))
        elif seg[0] == "arc":
            radius, angle = seg[1], seg[2]
            sgn = 1.0 if angle > 0 else -1.0
            center = p + sgn * radius * np.array([-s, c])
            n = max(1, math.ceil(radius * abs(angle) / ds))
            phi0 = heading - sgn * 0.5 * math.pi
            for i in range(1, n + 1):
                phi = phi0 + angle * i / n
                pts.append(center + radius * np.array([math.cos(phi), math.sin(phi)]))
            heading += angle
        elif seg[0] == "shift":
            length, offset = seg[1], seg[2]
            n = max(1, math.ceil(length / ds))
            for i in range(1, n + 1):
                lx = length * i / n
                ly = 0.5 * offset * (1.0 - math.cos(math.pi * i / n))
                pts.append(p + lx * np.array([c, s]) + ly * np.array([-s, c]))
        else:
            raise ValueError(f"unknown segment {seg[0]!r}")
    return np.array(pts)


def _vehicle(route: Route, s: float, d: float, speed: float, desired: float, stop_s: float = math.inf,
             kind: str = "vehicle") -> AgentState:
    x, y, h = route.pose_at(s, d)
    return AgentState(Pose(x, y, h), speed, *CAR_DIMS, kind=kind, s=s, d=d, desired_speed=desired, stop_s=stop_s)


def generate_scenario(kind: str, seed: int, overrides: dict | None = None, *, duration: float = 10.0,
                      sim_dt: float = 0.1, plan_dt: float = 0.5) -> Scenario:
    """Deterministically build a scenario; identical arguments give an identical scenario.

    ``overrides`` may pin any drawn parameter by name, and may carry
    ``profile`` ("nominal" | "shifted") and ``duration``.
    """
    if kind not in SCENARIO_KINDS:
        raise ValueError(f"unknown scenario kind {kind!r}; expected one of {SCENARIO_KINDS}")
    overrides = dict(overrides or {})
    profile = overrides.pop("profile", "nominal")
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    duration = float(overrides.pop("duration", duration))
    gen = rngmod.stream("scenario", kind, int(seed), profile)
    dr = _Draw(gen, profile, overrides)

    hw = dr.u("lane_half_width")
    lat0 = dr.u("ego_lat0")
    head0 = dr.u("ego_head0")
    agents_spec: list[tuple] = []

    if kind == "high_speed_cruise":
        limit = dr.u("hs_limit")
        v_ego = limit * dr.u("hs_speed_frac")
    else:
        limit = dr.u("urban_limit")
        v_ego = limit * dr.u("ego_speed_frac")
    tail = START_S + limit * duration + 120.0

    if kind in ("straight_with_lead", "stopping_with_lead", "parked_vehicle_pass", "pedestrian_crossing"):
        segments = [("straight", tail)]
    elif kind == "lane_change":
        lc_side = dr.side("lc_side", 1.0)
        a, b = dr.u("lc_straight"), dr.u("lc_length")
        segments = [("straight", START_S + a), ("shift", b, lc_side * LANE_WIDTH), ("straight", tail)]
    elif kind in ("left_turn", "right_turn"):
        radius = dr.u("turn_radius")
        angle = 0.5 * math.pi if kind == "left_turn" else -0.5 * math.pi
        segments = [("straight", START_S + dr.u("turn_straight")), ("arc", radius, angle), ("straight", tail)]
    else:  # high_speed_cruise
        ang = dr.u("hs_angle") * (1.0 if dr.u("hs_bend_draw") < 0.5 else -1.0)
        segments = [("straight", START_S + dr.u("hs_straight")), ("arc", dr.u("hs_radius"), ang), ("straight", tail)]

    route0 = Route(build_centerline(segments), hw, limit)
    ego_len = DEFAULT_VEHICLE.length

    if kind == "straight_with_lead":
        lead_v = max(1.0, limit - dr.u("lead_speed_margin"))
        agents_spec.append(("veh", START_S + dr.u("lead_gap") + ego_len, 0.0, lead_v, lead_v, math.inf))
    elif kind == "stopping_with_lead":
        lead_s = START_S + dr.u("stop_lead_gap") + ego_len
        lead_v = min(dr.u("stop_lead_speed"), limit)
        agents_spec.append(("veh", lead_s, 0.0, lead_v, lead_v, lead_s + dr.u("stop_distance")))
    elif kind == "parked_vehicle_pass":
        side = dr.side("parked_side", -1.0)
        intrusion = dr.u("parked_intrusion")
        clearance_cap = hw - 0.5 * DEFAULT_VEHICLE.width - 0.15
        intrusion = min(intrusion, clearance_cap)
        d = side * (hw + 0.5 * CAR_DIMS[1] - intrusion)
        agents_spec.append(("parked", START_S + dr.u("parked_ahead"), d, 0.0, 0.0, math.inf))
    elif kind == "lane_change":
        lead_v = max(1.0, limit - dr.u("lead_speed_margin"))
        agents_spec.append(("veh", START_S + dr.u("lc_lead_ahead"), 0.0, lead_v, lead_v, math.inf))
        shift_end = START_S + dr.values["lc_straight"] + dr.values["lc_length"]
        adj_v = dr.u("lc_adjacent_speed")
        agents_spec.append(("veh", shift_end + dr.u("lc_adjacent_ahead"), -lc_side * LANE_WIDTH, adj_v, adj_v,
                            math.inf))
    elif kind in ("left_turn", "right_turn"):
        if dr.coin("turn_lead_prob"):
            lead_v = 0.8 * limit
            agents_spec.append(("veh", START_S + dr.u("turn_lead_gap") + ego_len, 0.0, lead_v, limit, math.inf))
    elif kind == "high_speed_cruise":
        if dr.coin("hs_lead_prob"):
            lead_v = limit - dr.u("hs_lead_margin")
            agents_spec.append(("veh", START_S + dr.u("hs_lead_gap") + ego_len, 0.0, lead_v, lead_v, math.inf))
    elif kind == "pedestrian_crossing":
        direction = dr.side("ped_side", 1.0)
        agents_spec.append(("ped", START_S + dr.u("ped_ahead"), -direction * (hw + dr.u("ped_offset")),
                            dr.u("ped_speed"), dr.u("ped_start"), direction))

    # a same-lane follower is what separates reactive from replayed traffic: it
    # brakes for the actual ego in CL-R but replays its expert-era script in CL-NR
    if dr.coin("follower_prob"):
        v_f = min(limit, v_ego * dr.u("follower_speed_frac"))
        agents_spec.append(("veh", START_S - dr.u("follower_gap") - ego_len, 0.0, v_f, limit, math.inf))

    rot = dr.u("frame_rot")
    dx = dr.u("frame_dx")
    dy = dr.u("frame_dy")
    route = route0.transformed(dx, dy, rot)

    agents = []
    for spec in agents_spec:
        if spec[0] in ("veh", "parked"):
            _, s, d, v, desired, stop_s = spec
            agents.append(_vehicle(route, s, d, v, desired, stop_s, "vehicle" if spec[0] == "veh" else "parked"))
        else:
            _, s, d, walk, start, direction = spec
            x, y, h = route.pose_at(s, d)
            agents.append(AgentState(Pose(x, y, h + direction * 0.5 * math.pi), walk if start <= 0.0 else 0.0,
                                     *PED_DIMS, kind="pedestrian", s=s, d=d, desired_speed=walk, start_time=start,
                                     lateral_dir=direction, d_end=direction * (hw + 3.0)))

    ex, ey, eh = route.pose_at(START_S, lat0)
    ego = EgoState(Pose(ex, ey, eh + head0), v_ego)
    params = {k: dr.values[k] for k in sorted(dr.values)}
    params["profile"] = profile
    sc = Scenario(
        id=f"{kind}-{profile}-{int(seed)}",
        kind=kind,
        seed=int(seed),
        route=route,
        agents=tuple(agents),
        ego_init=ego,
        duration=duration,
        sim_dt=sim_dt,
        plan_dt=plan_dt,
        params=params,
    )
    if not agents:
        return sc
    return attach_scripts(sc)


def attach_scripts(sc: Scenario) -> Scenario:
    """Record non-reactive agent scripts around the rule-based expert."""
    from soelab.env.rollout import replay_agents
    from soelab.expert import ExpertPolicy

    traj = replay_agents(ExpertPolicy(), sc)
    agents = tuple(replace(a, scripted_trajectory=np.ascontiguousarray(traj[:, j])) for j, a in enumerate(sc.agents))
    for a in agents:
        a.scripted_trajectory.setflags(write=False)
    return replace(sc, agents=agents)


# --------------------------------------------------------------------------
# scenario set files
# --------------------------------------------------------------------------

SCENARIO_SET_VERSION = 1


def write_scenario_set(path, entries) -> None:
    """Write a list of (kind, seed, overrides) triples as JSON."""
    rows = [{"kind": k, "seed": int(s), "overrides": dict(o or {})} for k, s, o in entries]
    doc = {"format": "soelab-scenario-set", "version": SCENARIO_SET_VERSION, "scenarios": rows}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read_scenario_set(path) -> list[tuple[str, int, dict]]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "soelab-scenario-set" or doc.get("version") != SCENARIO_SET_VERSION:
        raise ValueError(f"{path}: not a version-{SCENARIO_SET_VERSION} scenario set")
    out = []
    for row in doc["scenarios"]:
        if row["kind"] not in SCENARIO_KINDS:
            raise ValueError(f"{path}: unknown scenario kind {row['kind']!r}")
        out.append((row["kind"], int(row["seed"]), dict(row.get("overrides", {}))))
    return out


def load_scenarios(entries) -> list[Scenario]:
    return [generate_scenario(k, s, o) for k, s, o in entries]


# --------------------------------------------------------------------------
# experiment splits
# --------------------------------------------------------------------------

SPLITS = ("train", "val", "shifted_val", "test")
_SPLIT_BASE = {"train": 0, "val": 1_000_000, "shifted_val": 2_000_000, "test": 3_000_000}
SPLIT_STRIDE = 10_000_000
SHIFTED_SPLITS = ("shifted_val", "test")
# more turns, parked cars and crossings than the uniform nominal mix
SHIFTED_KIND_WEIGHTS = {
    "straight_with_lead": 0.08,
    "stopping_with_lead": 0.10,
    "parked_vehicle_pass": 0.16,
    "lane_change": 0.14,
    "left_turn": 0.14,
    "right_turn": 0.14,
    "high_speed_cruise": 0.08,
    "pedestrian_crossing": 0.16,
}


def split_entries(split: str, count: int, experiment_seed: int) -> list[tuple[str, int, dict]]:
    """Scenario specs for one split; seed ranges of different splits never overlap."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")
    if not 0 <= count <= 1_000_000:
        raise ValueError("split size must be in [0, 1e6]")
    base = int(experiment_seed) * SPLIT_STRIDE + _SPLIT_BASE[split]
    if split in SHIFTED_SPLITS:
        gen = rngmod.stream("split-kinds", int(experiment_seed), split)
        p = np.array([SHIFTED_KIND_WEIGHTS[k] for k in SCENARIO_KINDS])
        kinds = [SCENARIO_KINDS[i] for i in gen.choice(len(SCENARIO_KINDS), size=count, p=p / p.sum())]
        return [(k, base + i, {"profile": "shifted"}) for i, k in enumerate(kinds)]
    return [(SCENARIO_KINDS[i % len(SCENARIO_KINDS)], base + i, {}) for i in range(count)]
