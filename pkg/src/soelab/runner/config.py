"""Experiment configuration (YAML) with documented defaults."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from soelab import tinynet as tn
from soelab.env.generate import SPLITS
from soelab.env.scenario import MODE_LABELS, normalize_mode
from soelab.pipeline import DEFAULT_DIMS

DEFAULT_COUNTS = {"train": 200, "val": 60, "shifted_val": 60, "test": 60}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    experiment_seed: int = 0
    m: int = 4
    n: int = 2
    counts: dict = field(default_factory=lambda: dict(DEFAULT_COUNTS))
    dims: tuple = DEFAULT_DIMS
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    modes: tuple = ("CL-NR", "CL-R")
    sweep_n: tuple = (2, 3, 4, 6, 8)
    more_experts_split: str = "val"
    duration: float = 10.0

    def __post_init__(self) -> None:
        if self.m < 2:
            raise ConfigError("m must be >= 2")
        if self.n < 2 or any(int(x) < 2 for x in self.sweep_n):
            raise ConfigError("periods must be >= 2")
        if set(self.counts) != set(SPLITS):
            raise ConfigError(f"counts must list exactly the splits {SPLITS}")
        if any(int(v) < 0 for v in self.counts.values()):
            raise ConfigError("split sizes must be >= 0")
        if self.duration <= 0:
            raise ConfigError("duration must be > 0")
        if self.more_experts_split not in SPLITS:
            raise ConfigError(f"more_experts_split must be one of {SPLITS}")
        for mode in self.modes:
            try:
                normalize_mode(mode)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        dims = tuple(int(d) for d in self.dims)
        if dims[0] != DEFAULT_DIMS[0] or dims[-1] != 2:
            raise ConfigError(f"dims must start with {DEFAULT_DIMS[0]} features and end with 2 outputs")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "modes", tuple(normalize_mode(x) for x in self.modes))
        object.__setattr__(self, "sweep_n", tuple(int(x) for x in self.sweep_n))
        object.__setattr__(self, "counts", {k: int(self.counts[k]) for k in SPLITS})
        try:
            self.train_config(0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self, seed: int) -> tn.TrainConfig:
        return tn.TrainConfig(seed=seed, epochs=self.epochs, batch_size=self.batch_size,
                              learning_rate=self.learning_rate, optimizer=self.optimizer)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["modes"] = [MODE_LABELS[x] for x in self.modes]
        d["sweep_n"] = list(self.sweep_n)
        return d

    @property
    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def config_from_dict(raw: dict | None) -> ExperimentConfig:
    raw = dict(raw or {})
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "counts" in raw:
        counts = dict(DEFAULT_COUNTS)
        counts.update(raw["counts"] or {})
        raw["counts"] = counts
    for key in ("dims", "modes", "sweep_n"):
        if key in raw:
            raw[key] = tuple(raw[key])
    return ExperimentConfig(**raw)


def load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)


DEFAULT_CONFIG_YAML = """\
# Experiment configuration. Every key is optional; values shown are the defaults.
experiment_seed: 0        # selects disjoint scenario seed ranges and all training seeds
m: 4                      # independently seeded training runs (one expert each)
n: 2                      # period of the two-expert schedule
counts:                   # scenarios per split
  train: 200
  val: 60
  shifted_val: 60         # shifted profile: wider ranges, different kind mix
  test: 60                # held-out, shifted profile
dims: [14, 64, 64, 2]     # network layer widths (14 features in, 2 actions out)
epochs: 30
batch_size: 64
learning_rate: 0.001
optimizer: adam           # adam | sgd
modes: [CL-NR, CL-R]      # closed-loop modes used for selection and evaluation
sweep_n: [2, 3, 4, 6, 8]  # periods evaluated by sweep-period
more_experts_split: val   # split scored by more-experts
duration: 10.0            # simulated seconds per scenario
"""
