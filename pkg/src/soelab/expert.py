"""Rule-based demonstrator, the shared feature map, and demonstration datasets.

Feature layout (``FEATURE_NAMES``), all in the route/ego frame so the vector
is unchanged by a rigid motion of the whole world:

====  ======================  =====  ==========================================
idx   name                    unit   notes
====  ======================  =====  ==========================================
0     speed                   m/s    ego speed
1     lateral_offset          m      left of centerline is positive
2     heading_error           rad    ego heading minus route tangent, wrapped
3-7   curvature_{5..30}m      1/m    route curvature ahead of the ego
8     lead_gap                m      bumper to bumper, in [0, 100]; 100 if none
9     lead_rel_speed          m/s    lead speed minus ego speed; 0 if none
10    obstacle_ds             m      nearest static obstacle / pedestrian, +-50
11    obstacle_dd             m      its lateral offset from the ego, +-50
12    speed_limit             m/s
13    lane_half_width         m
====  ======================  =====  ==========================================
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from soelab.env.agents import CURVE_LAT_ACCEL
from soelab.env.rollout import COMPLETED, WorldState, rollout
from soelab.env.scenario import NON_REACTIVE, Scenario, normalize_mode
from soelab.env.types import DEFAULT_VEHICLE, Action, EgoState, IDMParams, Route, VehicleParams
from soelab.kernels import dynamics as kd
from soelab.kernels import geometry as geo

LOOKAHEAD_S = (5.0, 10.0, 15.0, 20.0, 30.0)
GAP_CAP = 100.0
OBSTACLE_CAP = 50.0
FEATURE_NAMES = (
    "speed",
    "lateral_offset",
    "heading_error",
    *(f"curvature_{int(s)}m" for s in LOOKAHEAD_S),
    "lead_gap",
    "lead_rel_speed",
    "obstacle_ds",
    "obstacle_dd",
    "speed_limit",
    "lane_half_width",
)
N_FEATURES = len(FEATURE_NAMES)
STD_FLOOR = 1e-6


@dataclass(frozen=True)
class Perception:
    """Route-frame summary of a world state."""

    s: float
    d: float
    heading_error: float
    lead_gap: float  # math.inf when there is no lead
    lead_speed: float
    obstacles: tuple  # (ds, d, kind, direction, length, width) per static obstacle / pedestrian


def perceive(world: WorldState) -> Perception:
    route = world.route
    pts, cum_s, units = route.centerline, route.cum_s, route.units
    ego = world.ego
    s, d, _ = geo.project(pts, cum_s, units, ego.pose.x, ego.pose.y)
    heading_err = geo.wrap_angle(ego.pose.heading - geo.point_at(pts, cum_s, units, s)[2])
    el = world.vehicle.length
    hw = route.lane_half_width
    lead_gap, lead_speed = math.inf, 0.0
    obstacles = []
    for j, kind in enumerate(world.agent_kinds):
        ax, ay, ah, av = world.agents[j]
        al, aw = world.agent_dims[j]
        sa, da, _ = geo.project(pts, cum_s, units, ax, ay)
        rel_h = geo.wrap_angle(ah - geo.point_at(pts, cum_s, units, sa)[2])
        ds = sa - s
        if kind == "vehicle":
            if ds > 0.0 and abs(da) < hw:
                gap = ds - 0.5 * (el + al)
                if gap < lead_gap:
                    lead_gap, lead_speed = gap, av * math.cos(rel_h)
        elif ds > -0.5 * (el + al):
            direction = 1.0 if math.sin(rel_h) >= 0.0 else -1.0
            obstacles.append((ds, da, kind, direction, al, aw))
    obstacles.sort(key=lambda o: o[0])
    return Perception(s, d, heading_err, lead_gap, lead_speed, tuple(obstacles))


def featurize(world: WorldState, perception: Perception | None = None) -> np.ndarray:
    """Fixed-length feature vector (see module docstring for layout)."""
    p = perception or perceive(world)
    route = world.route
    out = np.empty(N_FEATURES)
    out[0] = world.ego.speed
    out[1] = p.d
    out[2] = p.heading_error
    for i, ahead in enumerate(LOOKAHEAD_S):
        out[3 + i] = route.curvature_at(p.s + ahead)
    if math.isinf(p.lead_gap):
        out[8], out[9] = GAP_CAP, 0.0
    else:
        out[8] = min(max(p.lead_gap, 0.0), GAP_CAP)
        out[9] = p.lead_speed - world.ego.speed
    if p.obstacles:
        ds, da = p.obstacles[0][0], p.obstacles[0][1]
        out[10] = min(max(ds, -OBSTACLE_CAP), OBSTACLE_CAP)
        out[11] = min(max(da - p.d, -OBSTACLE_CAP), OBSTACLE_CAP)
    else:
        out[10] = out[11] = OBSTACLE_CAP
    out[12] = route.speed_limit
    out[13] = route.lane_half_width
    return out


def lookahead_distance(speed: float) -> float:
    return max(4.0, 1.2 * speed)


def pure_pursuit_steer(ego: EgoState, route: Route, lookahead: float,
                       vehicle: VehicleParams = DEFAULT_VEHICLE) -> float:
    """Steering toward the route point ``lookahead`` metres of arc ahead of the ego's projection."""
    if not lookahead > 0:
        raise ValueError(f"lookahead must be positive, got {lookahead}")
    s, _ = route.project(ego.pose.x, ego.pose.y)
    if s >= route.length:
        return 0.0
    tx, ty, _ = route.point_at(s + lookahead)
    alpha = math.atan2(ty - ego.pose.y, tx - ego.pose.x) - ego.pose.heading
    delta = math.atan(2.0 * vehicle.wheelbase * math.sin(alpha) / lookahead)
    return min(max(delta, -vehicle.max_steer), vehicle.max_steer)


def _blocking(ob, hw: float, ego_width: float) -> bool:
    ds, d, kind, direction, _, width = ob
    if kind == "pedestrian":
        return ds > 0.0 and d * direction <= hw + 0.5 and abs(d) <= hw + 4.5
    return abs(d) - 0.5 * width < 0.5 * ego_width + 0.1


@dataclass(frozen=True)
class ExpertConfig:
    idm: IDMParams = IDMParams()
    comfort_decel: float = 1.5  # used to start slowing before curves


def curve_speed_target(route: Route, s: float, v: float, decel: float) -> float:
    """Highest speed from which every curve ahead can be met at its lateral-acceleration limit."""
    horizon = 10.0 + v * v / (2.0 * decel)
    lo, hi = np.searchsorted(route.cum_s, (s, s + horizon))
    kappa = np.abs(route.curvature[lo:hi])
    if kappa.size == 0 or kappa.max() <= 1e-6:
        return math.inf
    x = route.cum_s[lo:hi] - s
    v_curve_sq = CURVE_LAT_ACCEL / np.maximum(kappa, 1e-9)
    return float(np.sqrt(np.min(v_curve_sq + 2.0 * decel * x)))


def expert_act(world: WorldState, perception: Perception | None = None,
               config: ExpertConfig = ExpertConfig()) -> Action:
    """Pure pursuit steering plus IDM speed control, capped by limit, curves and in-lane obstacles."""
    p = perception or perceive(world)
    route, ego, veh = world.route, world.ego, world.vehicle
    v = ego.speed
    steer = pure_pursuit_steer(ego, route, lookahead_distance(v), veh)
    q = config.idm
    limit = route.speed_limit
    v0 = min(limit, curve_speed_target(route, p.s, v, config.comfort_decel))
    gap = 1e9 if math.isinf(p.lead_gap) else p.lead_gap
    acc = kd.idm(gap, v, p.lead_speed, q.a_max, q.b, v0, q.delta, q.s0, q.headway, q.b_hard)
    for ob in p.obstacles:
        if _blocking(ob, route.lane_half_width, veh.width):
            g = ob[0] - 0.5 * (veh.length + ob[4])
            acc = min(acc, kd.idm(g, v, 0.0, q.a_max, q.b, v0, q.delta, q.s0, q.headway, q.b_hard))
    acc = min(acc, (limit - v) / world.plan_dt)
    return Action(acc, steer).clamped(veh)


class ExpertPolicy:
    """The demonstrator as a planning policy."""

    def __init__(self, config: ExpertConfig = ExpertConfig()):
        self.config = config

    def act(self, world: WorldState, tick: int) -> Action:
        return expert_act(world, config=self.config)


class _Recorder:
    def __init__(self, config: ExpertConfig):
        self.config = config
        self.features: list[np.ndarray] = []
        self.actions: list[np.ndarray] = []

    def act(self, world: WorldState, tick: int) -> Action:
        p = perceive(world)
        a = expert_act(world, p, self.config)
        self.features.append(featurize(world, p))
        self.actions.append(a.as_array())
        return a


def demonstrate(scenario: Scenario, mode: str = NON_REACTIVE, config: ExpertConfig = ExpertConfig()):
    """Expert rollout of one scenario; returns (features, actions, log)."""
    rec = _Recorder(config)
    log = rollout(rec, scenario, mode)
    feats = np.array(rec.features).reshape(-1, N_FEATURES)
    acts = np.array(rec.actions).reshape(-1, 2)
    return feats, acts, log


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------

DATASET_MAGIC = b"SOEDSET\0"
DATASET_VERSION = 1


class DatasetFormatError(ValueError):
    pass


@dataclass(eq=False)
class Dataset:
    """Demonstrations with provenance and normalisation statistics.

    ``mean``/``std`` are computed from these rows only (std floored at 1e-6).
    """

    features: np.ndarray  # (N, F)
    targets: np.ndarray  # (N, 2)
    scenario_index: np.ndarray  # (N,) index into scenario_ids
    scenario_ids: list[str]
    excluded: list[dict] = field(default_factory=list)
    mode: str = NON_REACTIVE
    mean: np.ndarray = field(init=False)
    std: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.features = np.ascontiguousarray(self.features, dtype=np.float64).reshape(-1, N_FEATURES)
        self.targets = np.ascontiguousarray(self.targets, dtype=np.float64).reshape(-1, 2)
        self.scenario_index = np.ascontiguousarray(self.scenario_index, dtype=np.int64)
        if not (len(self.features) == len(self.targets) == len(self.scenario_index)):
            raise ValueError("features, targets and scenario_index must have equal length")
        self.mean, self.std = normalization_stats(self.features)

    def __len__(self) -> int:
        return int(self.features.shape[0])

    def normalized_features(self) -> np.ndarray:
        return normalize(self.features, self.mean, self.std)

    def to_bytes(self) -> bytes:
        header = json.dumps({
            "n": len(self), "n_features": N_FEATURES, "feature_names": list(FEATURE_NAMES),
            "scenario_ids": self.scenario_ids, "excluded": self.excluded, "mode": self.mode,
        }, sort_keys=True, separators=(",", ":")).encode()
        body = b"".join([
            DATASET_MAGIC, struct.pack("<HI", DATASET_VERSION, len(header)), header,
            self.mean.astype("<f8").tobytes(), self.std.astype("<f8").tobytes(),
            self.features.astype("<f8").tobytes(), self.targets.astype("<f8").tobytes(),
            self.scenario_index.astype("<i8").tobytes(),
        ])
        return body + hashlib.sha256(body).digest()

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Dataset":
        body, trailer = raw[:-32], raw[-32:]
        if not raw.startswith(DATASET_MAGIC):
            raise DatasetFormatError("not a dataset file")
        if hashlib.sha256(body).digest() != trailer:
            raise DatasetFormatError("dataset digest mismatch")
        off = len(DATASET_MAGIC)
        version, hlen = struct.unpack_from("<HI", body, off)
        if version != DATASET_VERSION:
            raise DatasetFormatError(f"dataset version {version}, expected {DATASET_VERSION}")
        off += 6
        head = json.loads(body[off:off + hlen])
        off += hlen
        n, f = head["n"], head["n_features"]

        def take(count, dtype):
            nonlocal off
            arr = np.frombuffer(body, dtype=dtype, count=count, offset=off).copy()
            off += arr.nbytes
            return arr

        take(f, "<f8"), take(f, "<f8")  # stats are recomputed and must agree
        feats = take(n * f, "<f8").reshape(n, f)
        targets = take(n * 2, "<f8").reshape(n, 2)
        idx = take(n, "<i8")
        return cls(feats, targets, idx, list(head["scenario_ids"]), list(head["excluded"]), head["mode"])

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.from_bytes(Path(path).read_bytes())


def normalization_stats(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if len(features) == 0:
        return np.zeros(N_FEATURES), np.ones(N_FEATURES)
    mean = features.mean(axis=0)
    std = np.maximum(features.std(axis=0), STD_FLOOR)
    return mean, std


def normalize(features: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (features - mean) / std


def _collect_one(args):
    sc, mode = args
    feats, acts, log = demonstrate(sc, mode)
    return sc.id, feats, acts, log.termination, len(log)


def collect(scenarios: list[Scenario], mode: str = NON_REACTIVE, map_fn=map) -> Dataset:
    """Expert demonstrations at every plan tick of every scenario.

    Scenarios where the expert fails (collision, off-route, fault) are
    dropped and listed in ``Dataset.excluded``.  Row order follows the
    scenario list regardless of ``map_fn`` (which may be a pool's map).
    """
    if not scenarios:
        raise ValueError("collect needs at least one scenario")
    mode = normalize_mode(mode)
    results = list(map_fn(_collect_one, [(sc, mode) for sc in scenarios]))
    feats, targets, index, ids, excluded = [], [], [], [], []
    for sid, f, a, termination, steps in results:
        if termination != COMPLETED:
            excluded.append({"scenario_id": sid, "termination": termination, "steps": steps})
            continue
        index.append(np.full(len(f), len(ids), dtype=np.int64))
        ids.append(sid)
        feats.append(f)
        targets.append(a)
    if not feats:
        return Dataset(np.empty((0, N_FEATURES)), np.empty((0, 2)), np.empty(0, np.int64), [], excluded, mode)
    return Dataset(np.concatenate(feats), np.concatenate(targets), np.concatenate(index), ids, excluded, mode)
