"""Multi-seed behaviour cloning, per-checkpoint validation and model-set selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from soelab import rng as rngmod
from soelab import tinynet as tn
from soelab.env.rollout import FAULT, TrajectoryLog, WorldState, rollout
from soelab.env.scenario import Scenario, normalize_mode
from soelab.env.types import Action
from soelab.expert import N_FEATURES, Dataset, collect, featurize, normalize
from soelab.scoring import MetricVector, compute_metrics, expert_progress, scenario_score

OL = "ol"
OL_SIGMA = 0.5
DEFAULT_DIMS = (N_FEATURES, 64, 64, 2)


class TrainingError(RuntimeError):
    def __init__(self, run_index: int, cause: Exception):
        super().__init__(f"training run {run_index} aborted: {cause}")
        self.run_index = run_index


class LearnedPolicy:
    """A checkpoint driving through the shared feature map.

    ``forward_calls`` counts network evaluations; it is the only mutable
    state and never affects the output.
    """

    def __init__(self, checkpoint: tn.Checkpoint, mean: np.ndarray, std: np.ndarray):
        self.checkpoint = checkpoint
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        self.forward_calls = 0

    def features(self, world: WorldState) -> np.ndarray:
        return normalize(featurize(world), self.mean, self.std)

    def act_features(self, z: np.ndarray) -> Action:
        self.forward_calls += 1
        out = tn.forward(self.checkpoint.network, z)
        return Action(float(out[0]), float(out[1]))

    def act(self, world: WorldState, tick: int) -> Action:
        return self.act_features(self.features(world))

    def expert_index(self, tick: int) -> int:
        return 0


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


@dataclass(eq=False)
class TrainingRun:
    run_index: int
    seed: int
    checkpoints: list[tn.Checkpoint]
    losses: list[float]
    ol_scores: list[float] = field(default_factory=list)
    cl_scores: dict[str, list[float]] = field(default_factory=dict)

    @property
    def epochs(self) -> int:
        return len(self.checkpoints)

    def scores(self, mode: str) -> list[float]:
        if mode == OL:
            return self.ol_scores
        return self.cl_scores[normalize_mode(mode)]


def run_seed(base_seed: int, run_index: int) -> int:
    return rngmod.derive_seed(int(base_seed), "run", int(run_index))


def train_run(dims, dataset: Dataset, config: tn.TrainConfig, run_index: int = 0) -> TrainingRun:
    """Train one network from a seeded init, snapshotting after every epoch."""
    net = tn.init(dims, config.seed)
    opt = tn.make_optimizer(config, net)
    ckpts, losses = [], []
    data = (dataset.normalized_features(), dataset.targets)
    try:
        for epoch in range(config.epochs):
            loss = tn.train_epoch(net, data, config, epoch, opt)
            losses.append(loss)
            ckpts.append(tn.Checkpoint(net.copy(), config.seed, epoch + 1, loss))
    except tn.NonFiniteLossError as exc:
        raise TrainingError(run_index, exc) from exc
    return TrainingRun(run_index, config.seed, ckpts, losses)


def _train_job(args):
    dims, dataset, config, i = args
    return train_run(dims, dataset, config, i)


def run_training(dims, dataset: Dataset, m: int, config: tn.TrainConfig, base_seed: int,
                 map_fn=map) -> list[TrainingRun]:
    """``m`` independently seeded runs; run i (0-based) uses seed ``run_seed(base_seed, i)``."""
    if m < 2:
        raise ValueError("run_training needs m >= 2")
    if len(dataset) == 0:
        raise ValueError("empty training dataset")
    jobs = [(tuple(dims), dataset, _with_seed(config, run_seed(base_seed, i)), i) for i in range(m)]
    return list(map_fn(_train_job, jobs))


def _with_seed(config: tn.TrainConfig, seed: int) -> tn.TrainConfig:
    return replace(config, seed=seed)


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------


def ol_score_from_ade(ade: float, sigma: float = OL_SIGMA) -> float:
    return math.exp(-ade / sigma)


def ol_validate(checkpoint: tn.Checkpoint, stats: tuple[np.ndarray, np.ndarray], val: Dataset | list[Scenario],
                sigma: float = OL_SIGMA) -> float:
    """exp(-ADE / sigma), ADE = mean Euclidean (accel, steer) error on expert-visited states."""
    if not isinstance(val, Dataset):
        val = collect(list(val))
    if len(val) == 0:
        return 1.0
    pred = tn.forward(checkpoint.network, normalize(val.features, *stats))
    ade = float(np.mean(np.linalg.norm(pred - val.targets, axis=1)))
    return ol_score_from_ade(ade, sigma)


@dataclass(eq=False)
class CLResult:
    score: float
    scores: np.ndarray  # per scenario
    metrics: list[MetricVector | None]
    terminations: list[str]
    faults: list[str | None]
    logs: list[TrajectoryLog] | None = None


def _cl_job(args):
    policy, sc, mode, ref, keep_log = args
    log = rollout(policy, sc, mode)
    if log.termination == FAULT:
        return 0.0, None, log.termination, log.fault, log if keep_log else None
    m = compute_metrics(log, sc, reference_progress=ref)
    return scenario_score(m), m, log.termination, None, log if keep_log else None


def cl_jobs(policy, scenarios, mode: str, keep_logs: bool = False) -> list[tuple]:
    mode = normalize_mode(mode)
    return [(policy, sc, mode, expert_progress(sc, mode), keep_logs) for sc in scenarios]


def reduce_cl(results) -> CLResult:
    results = list(results)
    scores = np.array([r[0] for r in results], dtype=np.float64)
    mean = float(np.mean(scores)) if len(scores) else 0.0
    logs = [r[4] for r in results]
    return CLResult(mean, scores, [r[1] for r in results], [r[2] for r in results], [r[3] for r in results],
                    logs if all(lg is not None for lg in logs) and logs else None)


def cl_evaluate(policy, scenarios: list[Scenario], mode: str, map_fn=map, keep_logs: bool = False) -> CLResult:
    """Closed-loop rollouts scored per scenario; faults score 0 and are annotated."""
    return reduce_cl(map_fn(_cl_job, cl_jobs(policy, scenarios, mode, keep_logs)))


def cl_validate(policy, scenarios: list[Scenario], mode: str, stats=None, map_fn=map) -> float:
    """Mean closed-loop score; ``policy`` may be a bare checkpoint when ``stats`` is given."""
    if isinstance(policy, tn.Checkpoint):
        if stats is None:
            raise ValueError("a bare checkpoint needs normalisation stats")
        policy = LearnedPolicy(policy, *stats)
    return cl_evaluate(policy, scenarios, mode, map_fn).score


def validate_ol(runs: list[TrainingRun], stats, ol_set: Dataset) -> None:
    for run in runs:
        run.ol_scores = [ol_validate(c, stats, ol_set) for c in run.checkpoints]


def validate_cl(runs: list[TrainingRun], stats, val_scenarios: list[Scenario], mode: str, map_fn=map) -> None:
    """Per-epoch CL scores for every run, evaluated as one flat batch of rollouts."""
    mode = normalize_mode(mode)
    jobs, spans = [], []
    for run in runs:
        for ck in run.checkpoints:
            start = len(jobs)
            jobs.extend(cl_jobs(LearnedPolicy(ck, *stats), val_scenarios, mode))
            spans.append((run, start, len(jobs)))
    results = list(map_fn(_cl_job, jobs))
    for run in runs:
        run.cl_scores[mode] = []
    for run, a, b in spans:
        run.cl_scores[mode].append(reduce_cl(results[a:b]).score)


def validate_runs(runs: list[TrainingRun], stats, val_scenarios: list[Scenario], modes, ol_set: Dataset | None = None,
                  map_fn=map) -> None:
    """Fill per-epoch OL scores and per-mode CL scores on every run, in place."""
    validate_ol(runs, stats, ol_set if ol_set is not None else collect(val_scenarios))
    for mode in modes:
        validate_cl(runs, stats, val_scenarios, mode, map_fn)


def ol_per_scenario(checkpoint: tn.Checkpoint, stats, val: Dataset, sigma: float = OL_SIGMA) -> dict[str, float]:
    """OL score of each scenario in ``val`` (keyed by scenario id)."""
    pred = tn.forward(checkpoint.network, normalize(val.features, *stats))
    err = np.linalg.norm(pred - val.targets, axis=1)
    out = {}
    for k, sid in enumerate(val.scenario_ids):
        rows = val.scenario_index == k
        out[sid] = ol_score_from_ade(float(np.mean(err[rows])), sigma) if rows.any() else 1.0
    return out


def argmax_earliest(scores) -> int:
    """Index of the maximum; the first one on ties."""
    best, idx = -math.inf, 0
    for i, s in enumerate(scores):
        if s > best:
            best, idx = s, i
    return idx


def select_best(run: TrainingRun, mode: str, val_scenarios=None, stats=None, map_fn=map) -> tn.Checkpoint:
    """Checkpoint with the highest validation score in ``mode`` (``"ol"`` or a CL mode), earliest on ties.

    Uses the scores already stored on the run, computing them first if
    absent (which needs ``val_scenarios`` and ``stats``).
    """
    if not run.checkpoints:
        raise ValueError("run has no checkpoints")
    key = OL if mode == OL else normalize_mode(mode)
    have = run.ol_scores if key == OL else run.cl_scores.get(key)
    if not have or len(have) != len(run.checkpoints):
        if val_scenarios is None or stats is None:
            raise ValueError("run lacks validation scores; pass val_scenarios and stats")
        if key == OL:
            validate_ol([run], stats, collect(val_scenarios))
        else:
            validate_cl([run], stats, val_scenarios, key, map_fn)
    return run.checkpoints[argmax_earliest(run.scores(key))]


# --------------------------------------------------------------------------
# model sets
# --------------------------------------------------------------------------

CROSS_RUN = "cross_run"
SAME_RUN_TOPK = "same_run_topk"


@dataclass(eq=False)
class ModelSet:
    members: list[tn.Checkpoint]
    run_indices: list[int]
    epochs: list[int]
    selection: str
    mode: str
    split: str = "val"
    val_scores: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.members)

    def labels(self) -> list[str]:
        return [f"r{r}e{e}" for r, e in zip(self.run_indices, self.epochs)]


def cross_run_model_set(runs: list[TrainingRun], mode: str) -> ModelSet:
    """Best checkpoint of every run."""
    members, idx, epochs, scores = [], [], [], []
    for run in runs:
        s = run.scores(mode)
        k = argmax_earliest(s)
        members.append(run.checkpoints[k])
        idx.append(run.run_index)
        epochs.append(run.checkpoints[k].epoch)
        scores.append(s[k])
    return ModelSet(members, idx, epochs, CROSS_RUN, mode, val_scores=scores)


def same_run_model_set(runs: list[TrainingRun], mode: str, m: int) -> ModelSet:
    """Top ``m`` epochs of the run holding the single best checkpoint (ties to earlier run / epoch)."""
    best_run = runs[argmax_earliest([max(r.scores(mode)) for r in runs])]
    s = best_run.scores(mode)
    if len(s) < m:
        raise ValueError(f"same-run model set needs >= {m} epochs, run has {len(s)}")
    order = sorted(range(len(s)), key=lambda k: (-s[k], k))[:m]
    return ModelSet([best_run.checkpoints[k] for k in order], [best_run.run_index] * m,
                    [best_run.checkpoints[k].epoch for k in order], SAME_RUN_TOPK, mode,
                    val_scores=[s[k] for k in order])
