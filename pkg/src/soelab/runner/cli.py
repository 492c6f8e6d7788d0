"""Command-line entry point: ``soelab <command> [--config FILE] [--store DIR] ...``."""

from __future__ import annotations

import argparse
import contextlib
import logging
import multiprocessing
import sys
from dataclasses import replace

from soelab.runner.config import ConfigError, load_config
from soelab.runner.experiments import Experiment, StageError
from soelab.runner.store import StoreError

COMMANDS = {
    "gen-scenarios": ("gen_scenarios",),
    "collect": ("gen_scenarios", "collect"),
    "train": ("gen_scenarios", "collect", "train"),
    "validate": ("gen_scenarios", "collect", "train", "validate"),
    "pipeline": ("pipeline",),
    "sweep-period": ("gen_scenarios", "collect", "train", "validate", "sweep_period"),
    "ablate-same-run": ("gen_scenarios", "collect", "train", "validate", "ablate_same_run"),
    "more-experts": ("gen_scenarios", "collect", "train", "validate", "more_experts"),
    "report": ("report",),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="soelab", description="Sequence-of-experts toy driving experiments.")
    ap.add_argument("command", choices=list(COMMANDS))
    ap.add_argument("--config", help="YAML config file (defaults apply to missing keys)")
    ap.add_argument("--store", default="runs/default", help="artifact store directory")
    ap.add_argument("--workers", type=int, default=1, help="worker processes for rollouts and training")
    ap.add_argument("--mode", action="append", choices=["CL-NR", "CL-R"],
                    help="restrict closed-loop modes (repeatable)")
    ap.add_argument("--n", type=int, action="append", dest="n_values", help="periods for sweep-period (repeatable)")
    ap.add_argument("--seed", type=int, help="override experiment_seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


@contextlib.contextmanager
def worker_map(workers: int):
    if workers <= 1:
        yield map
        return
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(workers) as pool:
        yield lambda fn, jobs: pool.map(fn, list(jobs), chunksize=1)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.mode:
            cfg = replace(cfg, modes=tuple(args.mode))
        if args.seed is not None:
            cfg = replace(cfg, experiment_seed=args.seed)
    except (ConfigError, OSError) as exc:
        print(f"soelab: stage config failed: {exc}", file=sys.stderr)
        return 2
    stage = args.command
    try:
        with worker_map(args.workers) as map_fn:
            exp = Experiment.open(cfg, args.store, map_fn)
            for step in COMMANDS[args.command]:
                stage = step.replace("_", "-")
                if step == "sweep_period":
                    exp.sweep_period(args.n_values)
                else:
                    getattr(exp, step)()
    except StageError as exc:
        print(f"soelab: {exc}", file=sys.stderr)
        return 1
    except StoreError as exc:
        print(f"soelab: stage {stage} failed: {exc}", file=sys.stderr)
        return 1
    report = exp.store.root / "report" / "report.md"
    print(f"{args.command}: done ({exp.store.root})" + (f"; report at {report}" if report.exists() else ""))
    return 0


if __name__ == "__main__":
    sys.exit(main())
