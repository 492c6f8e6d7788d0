"""Closed-loop scenario scoring and combination-improvement indicators.

A scenario score multiplies four pass/fail gates (collision, drivable area,
making progress, driving direction) by a weighted mean of four graded
terms: progress ratio, time-to-collision, speed-limit compliance and
comfort.  Collisions are plain box overlaps with no fault attribution.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from soelab.env.rollout import COLLIDED, TrajectoryLog
from soelab.env.scenario import Scenario, normalize_mode
from soelab.env.types import DEFAULT_VEHICLE, VehicleParams
from soelab.kernels import geometry as geo


@dataclass(frozen=True)
class ScoringConfig:
    progress_threshold: float = 0.2
    min_expert_progress: float = 0.5  # m; below this the progress ratio is defined as 1
    wrong_way_limit: float = 6.0  # m of cumulative backward motion
    ttc_threshold: float = 0.95
    ttc_horizon: float = 1.0
    ttc_dt: float = 0.1
    ttc_min_speed: float = 0.05
    max_long_accel: float = 4.0
    max_lat_accel: float = 4.0
    max_jerk: float = 8.0
    max_yaw_rate: float = 0.95


DEFAULT_SCORING = ScoringConfig()


@dataclass(frozen=True)
class Weights:
    progress: float = 5.0
    ttc: float = 5.0
    speed: float = 4.0
    comfort: float = 2.0

    def __post_init__(self) -> None:
        if min(self.progress, self.ttc, self.speed, self.comfort) <= 0:
            raise ValueError("weights must be positive")


DEFAULT_WEIGHTS = Weights()


@dataclass(frozen=True)
class MetricVector:
    collision_gate: int = 1
    drivable_gate: int = 1
    progress_gate: int = 1
    direction_gate: int = 1
    progress_ratio: float = 1.0
    ttc_score: int = 1
    speed_score: float = 1.0
    comfort_score: int = 1

    def __post_init__(self) -> None:
        for name in ("collision_gate", "drivable_gate", "progress_gate", "direction_gate", "ttc_score",
                     "comfort_score"):
            if getattr(self, name) not in (0, 1):
                raise ValueError(f"{name} must be 0 or 1")
        for name in ("progress_ratio", "speed_score"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def as_dict(self) -> dict:
        return asdict(self)


METRIC_NAMES = tuple(f.name for f in fields(MetricVector))


def scenario_score(m: MetricVector, weights: Weights = DEFAULT_WEIGHTS) -> float:
    gates = m.collision_gate * m.drivable_gate * m.progress_gate * m.direction_gate
    if gates == 0:
        return 0.0
    w = weights
    num = w.progress * m.progress_ratio + w.ttc * m.ttc_score + w.speed * m.speed_score + w.comfort * m.comfort_score
    return num / (w.progress + w.ttc + w.speed + w.comfort)


# --------------------------------------------------------------------------
# per-log metrics
# --------------------------------------------------------------------------


def route_progress(log: TrajectoryLog) -> float:
    if len(log) == 0:
        return 0.0
    return float(log.frenet[-1, 0] - log.frenet0[0])


_EXPERT_PROGRESS: dict[tuple[str, str], float] = {}


def expert_progress(scenario: Scenario, mode: str) -> float:
    """Route progress of the rule-based expert on this scenario and mode (memoised by digest)."""
    key = (scenario.digest, normalize_mode(mode))
    if key not in _EXPERT_PROGRESS:
        from soelab.env.rollout import rollout
        from soelab.expert import ExpertPolicy

        _EXPERT_PROGRESS[key] = route_progress(rollout(ExpertPolicy(), scenario, key[1]))
    return _EXPERT_PROGRESS[key]


def collision_flags(log: TrajectoryLog, vehicle: VehicleParams = DEFAULT_VEHICLE) -> np.ndarray:
    """(N,) True where the ego box overlaps any agent box."""
    if len(log) == 0 or log.agents.shape[1] == 0:
        return np.zeros(len(log), dtype=bool)
    hit = geo.overlap_matrix(np.ascontiguousarray(log.ego[:, :3]), np.array([vehicle.length, vehicle.width]),
                             np.ascontiguousarray(log.agents[:, :, :3]), np.ascontiguousarray(log.agent_dims))
    return np.asarray(hit).any(axis=1)


def min_ttc(log: TrajectoryLog, config: ScoringConfig = DEFAULT_SCORING,
            vehicle: VehicleParams = DEFAULT_VEHICLE) -> float:
    if len(log) == 0 or log.agents.shape[1] == 0:
        return math.inf
    ego = np.ascontiguousarray(log.ego[:, :4])
    n_h = int(round(config.ttc_horizon / config.ttc_dt))
    return float(geo.min_ttc(ego, np.array([vehicle.length, vehicle.width]), np.ascontiguousarray(log.agents),
                             np.ascontiguousarray(log.agent_dims), config.ttc_dt, n_h, config.ttc_min_speed))


def comfort_ok(log: TrajectoryLog, config: ScoringConfig = DEFAULT_SCORING,
               vehicle: VehicleParams = DEFAULT_VEHICLE) -> bool:
    if len(log) == 0:
        return True
    v, acc, steer = log.ego[:, 3], log.ego[:, 4], log.ego[:, 5]
    yaw_rate = v * np.tan(steer) / vehicle.wheelbase
    lat = v * yaw_rate
    w = int(round(log.plan_dt / log.sim_dt))
    acc_full = np.concatenate([[log.ego0[4]], acc])
    jerk = (acc_full[w:] - acc_full[:-w]) / log.plan_dt if len(acc_full) > w else np.zeros(0)
    return bool(
        np.all(np.abs(acc) <= config.max_long_accel)
        and np.all(np.abs(lat) <= config.max_lat_accel)
        and np.all(np.abs(jerk) <= config.max_jerk)
        and np.all(np.abs(yaw_rate) <= config.max_yaw_rate)
    )


def compute_metrics(log: TrajectoryLog, scenario: Scenario, *, reference_progress: float | None = None,
                    config: ScoringConfig = DEFAULT_SCORING, vehicle: VehicleParams = DEFAULT_VEHICLE) -> MetricVector:
    """Sub-metrics of one rollout.

    ``reference_progress`` is the expert's route progress on the same
    scenario; it is computed (and cached) when not supplied.
    """
    route = scenario.route
    n = len(log)
    collided = log.termination == COLLIDED or bool(collision_flags(log, vehicle).any())
    off_lane = n > 0 and float(np.max(np.abs(log.frenet[:, 1]))) > route.lane_half_width

    if reference_progress is None:
        reference_progress = expert_progress(scenario, log.mode)
    progress = route_progress(log)
    if reference_progress < config.min_expert_progress:
        ratio = 1.0
    else:
        ratio = min(max(progress / reference_progress, 0.0), 1.0)

    s_all = np.concatenate([[log.frenet0[0]], log.frenet[:, 0]])
    backward = float(np.sum(np.maximum(-np.diff(s_all), 0.0)))

    limit = route.speed_limit
    if n:
        over = float(np.sum(np.maximum(log.ego[:, 3] - limit, 0.0)) * log.sim_dt)
        speed = min(max(1.0 - over / (limit * n * log.sim_dt), 0.0), 1.0)
    else:
        speed = 1.0

    return MetricVector(
        collision_gate=0 if collided else 1,
        drivable_gate=0 if off_lane else 1,
        progress_gate=1 if ratio > config.progress_threshold else 0,
        direction_gate=0 if backward > config.wrong_way_limit else 1,
        progress_ratio=ratio,
        ttc_score=1 if min_ttc(log, config, vehicle) >= config.ttc_threshold else 0,
        speed_score=speed,
        comfort_score=1 if comfort_ok(log, config, vehicle) else 0,
    )


# --------------------------------------------------------------------------
# combination indicators
# --------------------------------------------------------------------------


def _cells(matrix) -> np.ndarray:
    arr = np.asarray(getattr(matrix, "scores", matrix), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"score matrix must be square, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise ValueError("score matrix needs m >= 2")
    return arr


def lambda_improvement(matrix) -> float:
    """Mean of the off-diagonal (combination) cells minus mean of the diagonal (single experts)."""
    arr = _cells(matrix)
    m = arr.shape[0]
    diag = np.diag(arr)
    off = (arr.sum() - diag.sum()) / (m * m - m)
    return float(off - diag.mean())


def theta_improvement(soe_score: float, score_a: float, score_b: float) -> float:
    return float(soe_score - max(score_a, score_b))


def max_theta(matrix) -> tuple[float, tuple[int, int]]:
    """Largest theta over the off-diagonal cells and the (row, col) that attains it."""
    arr = _cells(matrix)
    best, where = -math.inf, (0, 1)
    for i in range(arr.shape[0]):
        for j in range(arr.shape[1]):
            if i == j:
                continue
            t = theta_improvement(arr[i, j], arr[i, i], arr[j, j])
            if t > best:
                best, where = t, (i, j)
    return best, where


# --------------------------------------------------------------------------
# failure overlap and grouping
# --------------------------------------------------------------------------

FAILURE_TYPES = ("collision", "drivable")


def failure_flags(item, vehicle: VehicleParams = DEFAULT_VEHICLE) -> dict[str, bool]:
    """Collision / drivable failure of a log or a MetricVector."""
    if isinstance(item, MetricVector):
        return {"collision": item.collision_gate == 0, "drivable": item.drivable_gate == 0}
    collided = item.termination == COLLIDED or bool(collision_flags(item, vehicle).any())
    off = len(item) > 0 and float(np.max(np.abs(item.frenet[:, 1]))) > item.lane_half_width
    return {"collision": collided, "drivable": off}


def _ids(items):
    return [getattr(x, "scenario_id", None) for x in items]


def failure_overlap(logs_a, logs_b, logs_soe) -> dict[str, dict[str, int]]:
    """Cross-tabulate failures of two experts and how many persist under their combination.

    For each failure type the result has counts ``both``, ``only_a``,
    ``only_b``, ``neither`` (a partition of the scenarios) and the same
    keys suffixed ``_soe`` counting scenarios in that category where the
    combined policy also fails.
    """
    if not (len(logs_a) == len(logs_b) == len(logs_soe)):
        raise ValueError("failure_overlap needs equally long log lists")
    ia, ib, isoe = _ids(logs_a), _ids(logs_b), _ids(logs_soe)
    if ia != ib or ia != isoe:
        raise ValueError("failure_overlap log lists cover different scenarios")
    out = {}
    fa = [failure_flags(x) for x in logs_a]
    fb = [failure_flags(x) for x in logs_b]
    fs = [failure_flags(x) for x in logs_soe]
    for ft in FAILURE_TYPES:
        table = {k: 0 for k in ("both", "only_a", "only_b", "neither",
                                "both_soe", "only_a_soe", "only_b_soe", "neither_soe")}
        for a, b, s in zip(fa, fb, fs):
            key = ("both" if b[ft] else "only_a") if a[ft] else ("only_b" if b[ft] else "neither")
            table[key] += 1
            if s[ft]:
                table[key + "_soe"] += 1
        out[ft] = table
    return out


def grouped_scores(results: dict, kinds) -> dict:
    """Per-(model, kind) mean scores and the max spread between models per kind.

    ``results`` maps a model label to its per-scenario scores, aligned with
    ``kinds``.
    """
    kinds = list(kinds)
    order = sorted(set(kinds))
    means: dict = {}
    for label, scores in results.items():
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape[0] != len(kinds):
            raise ValueError(f"model {label!r}: {scores.shape[0]} scores for {len(kinds)} scenarios")
        means[label] = {k: float(np.mean([s for s, kk in zip(scores, kinds) if kk == k])) for k in order}
    spread = {}
    for k in order:
        vals = [means[label][k] for label in means]
        spread[k] = float(max(vals) - min(vals)) if vals else 0.0
    return {"means": means, "spread": spread}


def write_breakdown(path, scenario_ids, kinds, metrics, weights: Weights = DEFAULT_WEIGHTS) -> None:
    """One row per scenario: every sub-metric and the aggregate score."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario_id", "kind", *METRIC_NAMES, "score"])
        for sid, kind, m in zip(scenario_ids, kinds, metrics):
            w.writerow([sid, kind, *(repr(float(getattr(m, f))) if isinstance(getattr(m, f), float)
                                     else getattr(m, f) for f in METRIC_NAMES), repr(scenario_score(m, weights))])
