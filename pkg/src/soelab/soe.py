"""Temporal alternation of trained checkpoints.

A sequenced policy holds ``k`` checkpoints and, at plan tick ``t``, runs
exactly one of them, chosen by a fixed schedule:

* ``periodic`` (two experts, period ``n >= 2``): expert 0 unless
  ``t mod n == n - 1``, when expert 1 takes the tick;
* ``cyclic`` (any ``k``): ``order[t mod k]``.

The tick counter restarts at 0 for every scenario.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from soelab import tinynet as tn
from soelab.env.rollout import WorldState
from soelab.env.scenario import MODE_LABELS, Scenario, normalize_mode
from soelab.env.types import Action
from soelab.pipeline import CLResult, LearnedPolicy, ModelSet, _cl_job, cl_jobs, reduce_cl
from soelab.scoring import METRIC_NAMES

PERIODIC = "periodic"
CYCLIC = "cyclic"


def sigma(t: int, n: int) -> int:
    """Expert index for plan tick ``t`` under the two-expert periodic schedule."""
    if n < 2:
        raise ValueError(f"periodic schedule needs n >= 2, got {n}")
    if t < 0:
        raise ValueError(f"plan tick must be >= 0, got {t}")
    return 0 if t % n < n - 1 else 1


def sigma_cyclic(t: int, order) -> int:
    if len(order) == 0:
        raise ValueError("cyclic order must be non-empty")
    return order[t % len(order)]


@dataclass(frozen=True)
class ScheduleSpec:
    k: int = 2
    n: int = 2
    variant: str = PERIODIC
    order: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("expert count k must be >= 1")
        if self.variant == PERIODIC:
            if self.k != 2 or self.n < 2:
                raise ValueError("periodic schedule needs k == 2 and n >= 2")
        elif self.variant == CYCLIC:
            if sorted(self.order) != list(range(self.k)):
                raise ValueError(f"cyclic order {self.order} is not a permutation of range({self.k})")
        else:
            raise ValueError(f"unknown schedule variant {self.variant!r}")

    @classmethod
    def periodic(cls, n: int) -> "ScheduleSpec":
        return cls(2, n, PERIODIC)

    @classmethod
    def cyclic(cls, order) -> "ScheduleSpec":
        order = tuple(int(i) for i in order)
        return cls(len(order), 1, CYCLIC, order)

    def index(self, t: int) -> int:
        return sigma(t, self.n) if self.variant == PERIODIC else sigma_cyclic(t, self.order)

    def describe(self) -> str:
        return f"periodic(n={self.n})" if self.variant == PERIODIC else f"cyclic{self.order}"


class SoEPolicy:
    """Checkpoints sharing one architecture and one set of normalisation statistics.

    Every tick computes the feature vector once and evaluates only the
    scheduled member; ``forward_calls[i]`` counts member ``i``'s evaluations.
    """

    def __init__(self, experts, schedule: ScheduleSpec, mean, std):
        experts = list(experts)
        if len(experts) != schedule.k:
            raise ValueError(f"schedule expects {schedule.k} experts, got {len(experts)}")
        hashes = {e.arch_hash for e in experts}
        if len(hashes) != 1:
            raise ValueError("all experts must share one architecture")
        self.experts = experts
        self.schedule = schedule
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        self._members = [LearnedPolicy(e, self.mean, self.std) for e in experts]

    @property
    def forward_calls(self) -> list[int]:
        return [p.forward_calls for p in self._members]

    def expert_index(self, tick: int) -> int:
        return self.schedule.index(tick)

    def act_features(self, z: np.ndarray, tick: int) -> Action:
        return self._members[self.schedule.index(tick)].act_features(z)

    def act(self, world: WorldState, tick: int) -> Action:
        return self.act_features(self._members[0].features(world), tick)


def soe_act(policy: SoEPolicy, features: np.ndarray, t: int) -> Action:
    """Action of the member scheduled at tick ``t`` on already-normalised ``features``."""
    return policy.act_features(features, t)


# --------------------------------------------------------------------------
# score matrices
# --------------------------------------------------------------------------


@dataclass(eq=False)
class ScoreMatrix:
    """Closed-loop scores of every ordered pair; row = first expert, column = second."""

    scores: np.ndarray
    mode: str
    split: str
    n: int
    labels: list[str]
    cell_scores: np.ndarray  # (m, m, S) per-scenario scores
    breakdown: dict = field(default_factory=dict)  # "i,j" -> metric -> mean
    failures: dict = field(default_factory=dict)  # "i,j" -> list of (scenario index, termination, fault)

    @property
    def m(self) -> int:
        return int(self.scores.shape[0])

    def stem(self) -> str:
        return f"matrix_{self.split}_{MODE_LABELS[self.mode]}_n{self.n}"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["a\\b", *self.labels])
            for i, row in enumerate(self.scores):
                w.writerow([self.labels[i], *(repr(float(x)) for x in row)])

    def sidecar(self) -> dict:
        return {"mode": self.mode, "split": self.split, "n": self.n, "labels": self.labels,
                "scores": self.scores.tolist(), "breakdown": self.breakdown, "failures": self.failures,
                "cell_scores": self.cell_scores.tolist()}

    def save(self, directory) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv_path = directory / f"{self.stem()}.csv"
        json_path = directory / f"{self.stem()}.json"
        self.to_csv(csv_path)
        json_path.write_text(json.dumps(self.sidecar(), sort_keys=True, indent=1) + "\n")
        return csv_path, json_path

    @classmethod
    def load(cls, json_path) -> "ScoreMatrix":
        d = json.loads(Path(json_path).read_text())
        return cls(np.array(d["scores"]), d["mode"], d["split"], d["n"], d["labels"], np.array(d["cell_scores"]),
                   d["breakdown"], d["failures"])


def pair_policy(model_set: ModelSet, i: int, j: int, n: int, stats) -> SoEPolicy | LearnedPolicy:
    """Cell (i, j): a two-member sequence, or member ``i`` alone on the diagonal."""
    if i == j:
        return LearnedPolicy(model_set.members[i], *stats)
    return SoEPolicy([model_set.members[i], model_set.members[j]], ScheduleSpec.periodic(n), *stats)


def _summarise(res: CLResult) -> tuple[dict, list]:
    breakdown = {}
    ok = [m for m in res.metrics if m is not None]
    for name in METRIC_NAMES:
        breakdown[name] = float(np.mean([getattr(m, name) for m in ok])) if ok else 0.0
    breakdown["score"] = res.score
    fails = [(k, t, f) for k, (t, f) in enumerate(zip(res.terminations, res.faults)) if t != "completed"]
    return breakdown, fails


def evaluate_cells(policies: dict, scenarios: list[Scenario], mode: str, map_fn=map,
                   keep_logs: bool = False) -> dict:
    """CL results for several policies in one flat job batch; keys are preserved."""
    jobs, spans = [], {}
    for key, pol in policies.items():
        start = len(jobs)
        jobs.extend(cl_jobs(pol, scenarios, mode, keep_logs))
        spans[key] = (start, len(jobs))
    results = list(map_fn(_cl_job, jobs))
    return {key: reduce_cl(results[a:b]) for key, (a, b) in spans.items()}


def enumerate_pairs(model_set: ModelSet, n: int, scenarios: list[Scenario], mode: str, stats, *,
                    split: str = "val", map_fn=map) -> ScoreMatrix:
    """Score all m^2 ordered cells (diagonal = single expert) on ``scenarios``."""
    m = len(model_set)
    if m < 2:
        raise ValueError("enumerate_pairs needs a model set of m >= 2")
    mode = normalize_mode(mode)
    cells = {(i, j): pair_policy(model_set, i, j, n, stats) for i in range(m) for j in range(m)}
    res = evaluate_cells(cells, scenarios, mode, map_fn)
    scores = np.zeros((m, m))
    per = np.zeros((m, m, len(scenarios)))
    breakdown, failures = {}, {}
    for (i, j), r in res.items():
        scores[i, j] = r.score
        per[i, j] = r.scores
        breakdown[f"{i},{j}"], failures[f"{i},{j}"] = _summarise(r)
    return ScoreMatrix(scores, mode, split, n, model_set.labels(), per, breakdown, failures)


def select_best_cell(scores: np.ndarray) -> tuple[int, int]:
    """Argmax over all cells; ties go to the lexicographically first (row, column)."""
    scores = np.asarray(scores)
    best, where = -np.inf, (0, 0)
    for i in range(scores.shape[0]):
        for j in range(scores.shape[1]):
            if scores[i, j] > best:
                best, where = scores[i, j], (i, j)
    return where


def select_best_soe(matrix: ScoreMatrix, model_set: ModelSet | None = None, stats=None):
    """Winning cell ``(i, j)``, plus its policy when the model set and stats are given."""
    i, j = select_best_cell(matrix.scores)
    if model_set is None:
        return (i, j), None
    return (i, j), pair_policy(model_set, i, j, matrix.n, stats)


def cyclic_orders(members) -> list[tuple[int, ...]]:
    return list(itertools.permutations(members))


def evaluate_sequences(model_set: ModelSet, orders, scenarios: list[Scenario], mode: str, stats,
                       map_fn=map) -> dict:
    """Score cyclic sequences; each order lists model-set indices, e.g. (1, 3, 2)."""
    mode = normalize_mode(mode)
    pols = {}
    for order in orders:
        order = tuple(order)
        uniq = sorted(set(order))
        if len(uniq) == 1:
            pols[order] = LearnedPolicy(model_set.members[uniq[0]], *stats)
        else:
            experts = [model_set.members[k] for k in order]
            pols[order] = SoEPolicy(experts, ScheduleSpec.cyclic(range(len(order))), *stats)
    return {k: r.score for k, r in evaluate_cells(pols, scenarios, mode, map_fn).items()}
