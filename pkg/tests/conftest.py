import os
import sys
from dataclasses import dataclass

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@dataclass
class ToyExperiment:
    train: list
    val: list
    dataset: object
    stats: tuple
    runs: list


@pytest.fixture(scope="session")
def toy():
    """Small trained setup shared by pipeline / SoE tests (4 runs x 4 epochs)."""
    from soelab import pipeline as pl
    from soelab import tinynet as tn
    from soelab.env.generate import load_scenarios, split_entries
    from soelab.expert import collect

    train = load_scenarios(split_entries("train", 48, 11))
    val = load_scenarios(split_entries("val", 16, 11))
    ds = collect(train)
    runs = pl.run_training(pl.DEFAULT_DIMS, ds, 4, tn.TrainConfig(seed=0, epochs=4), base_seed=5)
    stats = (ds.mean, ds.std)
    pl.validate_runs(runs, stats, val, ("CL-NR",), collect(val))
    return ToyExperiment(train, val, ds, stats, runs)


@pytest.fixture(scope="session")
def small_config():
    from soelab.runner.config import config_from_dict

    return config_from_dict({"counts": {"train": 32, "val": 12, "shifted_val": 8, "test": 12}, "epochs": 4,
                             "modes": ["CL-NR"], "sweep_n": [2, 3]})


ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line, then assert, so failures stay failures."""

    def check(number: int, ok: bool, detail: str) -> None:
        ACCEPTANCE.append(f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {detail}")
        assert ok, detail

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
