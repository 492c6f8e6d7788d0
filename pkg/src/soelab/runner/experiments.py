"""Experiment stages. Each stage reads its inputs from the store, writes its
artifacts back, and is skipped when its input key is unchanged."""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from soelab import pipeline as pl
from soelab import rng as rngmod
from soelab import tinynet as tn
from soelab.env.generate import SPLITS, load_scenarios, read_scenario_set, split_entries, write_scenario_set
from soelab.env.scenario import MODE_LABELS, Scenario, normalize_mode
from soelab.expert import Dataset, collect
from soelab.runner.config import ExperimentConfig
from soelab.runner.store import RunStore, stage_key
from soelab.scoring import (
    failure_overlap,
    grouped_scores,
    lambda_improvement,
    max_theta,
    theta_improvement,
    write_breakdown,
)
from soelab.soe import ScoreMatrix, enumerate_pairs, evaluate_cells, evaluate_sequences, pair_policy, select_best_cell

log = logging.getLogger("soelab.runner")

STAGES = ("gen-scenarios", "collect", "train", "validate", "matrices", "sweep-period", "ablate-same-run",
          "more-experts", "report")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def _label(mode: str) -> str:
    return MODE_LABELS[normalize_mode(mode)]


@dataclass
class Experiment:
    config: ExperimentConfig
    store: RunStore
    map_fn: object = map
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def open(cls, config: ExperimentConfig, root, map_fn=map) -> "Experiment":
        return cls(config, RunStore(root, config.experiment_seed), map_fn)

    # -- plumbing ------------------------------------------------------------
    def _run(self, stage: str, params: dict, inputs: tuple[str, ...], body) -> dict:
        key = stage_key(stage, params, {s: self.store.artifact_digest(s) for s in inputs})
        if self.store.is_done(stage, key):
            log.info("%s: up to date, skipped", stage)
            return self.store.record(stage)["summary"]
        log.info("%s: running", stage)
        try:
            paths, summary = body()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc
        self._cache.clear()
        return self.store.commit(stage, key, paths, summary)["summary"]

    def _need(self, *stages: str) -> None:
        for s in stages:
            if self.store.record(s) is None:
                raise StageError(s, RuntimeError(f"stage {s!r} has not been run in {self.store.root}"))

    def scenarios(self, split: str) -> list[Scenario]:
        key = ("scenarios", split)
        if key not in self._cache:
            self._cache[key] = load_scenarios(read_scenario_set(self.store.root / f"scenarios/{split}.json"))
        return self._cache[key]

    def dataset(self, name: str = "train") -> Dataset:
        key = ("dataset", name)
        if key not in self._cache:
            self._cache[key] = Dataset.load(self.store.root / f"datasets/{name}.bin")
        return self._cache[key]

    def stats(self) -> tuple[np.ndarray, np.ndarray]:
        ds = self.dataset("train")
        return ds.mean, ds.std

    def base_seed(self) -> int:
        return rngmod.derive_seed(self.config.experiment_seed, "train")

    def runs(self, with_scores: bool = True) -> list[pl.TrainingRun]:
        rec = self.store.record("train")["summary"]
        runs = []
        for r in rec["runs"]:
            ckpts = [tn.Checkpoint.load(self.store.root / p) for p in r["checkpoints"]]
            runs.append(pl.TrainingRun(r["run_index"], r["seed"], ckpts, r["losses"]))
        if with_scores:
            man = self.store.read_json("runs/run_manifest.json")
            for run, r in zip(runs, man["runs"]):
                run.ol_scores = r["scores"]["OL"]
                run.cl_scores = {normalize_mode(k): v for k, v in r["scores"].items() if k != "OL"}
        return runs

    def modes(self) -> tuple[str, ...]:
        return self.config.modes

    # -- stages --------------------------------------------------------------
    def gen_scenarios(self) -> dict:
        cfg = self.config
        params = {"experiment_seed": cfg.experiment_seed, "counts": cfg.counts, "duration": cfg.duration}

        def body():
            paths, summary = [], {}
            for split in SPLITS:
                entries = split_entries(split, cfg.counts[split], cfg.experiment_seed)
                if cfg.duration != 10.0:
                    entries = [(k, s, {**o, "duration": cfg.duration}) for k, s, o in entries]
                p = self.store.path(f"scenarios/{split}.json")
                write_scenario_set(p, entries)
                paths.append(p)
                summary[split] = len(entries)
            return paths, summary

        return self._run("gen-scenarios", params, (), body)

    def collect(self) -> dict:
        self._need("gen-scenarios")

        def body():
            paths, summary = [], {}
            for split, name in (("train", "train"), ("val", "val_ol")):
                ds = collect(self.scenarios(split), map_fn=self.map_fn)
                p = self.store.path(f"datasets/{name}.bin")
                ds.save(p)
                paths.append(p)
                summary[name] = {"samples": len(ds), "scenarios": len(ds.scenario_ids), "excluded": list(ds.excluded),
                                 "digest": ds.digest}
                if ds.excluded:
                    log.warning("collect %s: %d scenarios excluded (expert failed): %s", split, len(ds.excluded),
                                ", ".join(e["scenario_id"] for e in ds.excluded))
            return paths, summary

        return self._run("collect", {}, ("gen-scenarios",), body)

    def train(self) -> dict:
        self._need("collect")
        cfg = self.config
        tc = cfg.train_config(0)
        params = {"dims": list(cfg.dims), "m": cfg.m, "base_seed": self.base_seed(),
                  "train": {"epochs": tc.epochs, "batch_size": tc.batch_size, "lr": tc.learning_rate,
                            "optimizer": tc.optimizer}}

        def body():
            runs = pl.run_training(cfg.dims, self.dataset("train"), cfg.m, tc, self.base_seed(), self.map_fn)
            paths, rows = [], []
            for run in runs:
                files = []
                for ck in run.checkpoints:
                    p = self.store.path(f"checkpoints/run{run.run_index}/epoch{ck.epoch:03d}.ckpt")
                    ck.save(p)
                    files.append(self.store.rel(p))
                    paths.append(p)
                rows.append({"run_index": run.run_index, "seed": run.seed, "losses": run.losses, "checkpoints": files})
            return paths, {"runs": rows}

        return self._run("train", params, ("collect",), body)

    def validate(self) -> dict:
        self._need("train")
        modes = self.modes()

        def body():
            runs = self.runs(with_scores=False)
            stats = self.stats()
            pl.validate_runs(runs, stats, self.scenarios("val"), modes, self.dataset("val_ol"), self.map_fn)
            ck0 = runs[0].checkpoints[0]
            out = {"arch": ck0.network.arch(), "arch_hash": ck0.arch_hash,
                   "dataset_digest": self.dataset("train").digest, "base_seed": self.base_seed(),
                   "val_scenarios": len(self.scenarios("val")), "runs": []}
            for run in runs:
                scores = {"OL": run.ol_scores}
                scores.update({_label(md): run.cl_scores[md] for md in modes})
                selected = {k: run.checkpoints[pl.argmax_earliest(v)].epoch for k, v in scores.items()}
                out["runs"].append({
                    "run_index": run.run_index, "seed": run.seed, "losses": run.losses, "scores": scores,
                    "selected_epochs": selected,
                    "ol_cl_mismatch": {_label(md): selected["OL"] != selected[_label(md)] for md in modes},
                })
            return [self.store.write_json("runs/run_manifest.json", out)], {
                "selected_epochs": [r["selected_epochs"] for r in out["runs"]]}

        return self._run("validate", {"modes": [_label(m) for m in modes]}, ("train",), body)

    # -- matrices, selection, held-out test ---------------------------------
    def matrices(self) -> dict:
        self._need("validate")
        cfg = self.config
        modes = self.modes()

        def body():
            runs = self.runs()
            stats = self.stats()
            paths, summary = [], {}
            for mode in modes:
                label = _label(mode)
                ms = pl.cross_run_model_set(runs, mode)
                mats = {}
                for split in ("val", "shifted_val", "test"):
                    mats[split] = enumerate_pairs(ms, cfg.n, self.scenarios(split), mode, stats, split=split,
                                                  map_fn=self.map_fn)
                    paths.extend(mats[split].save(self.store.subdir("matrices")))
                sel = self._selection(ms, mats, label)
                paths.append(self.store.write_json(f"results/selection_{label}.json", sel))
                paths.extend(self._test_details(ms, mats, sel, mode, stats))
                paths.append(self._grouped(ms, mats["val"], mode, stats))
                summary[label] = {"winner": sel["winner"], "val_score": sel["val_score"],
                                  "test_score": sel["test_score"], "lambda_test": sel["lambda"]["test"]}
            return paths, summary

        return self._run("matrices", {"n": cfg.n, "modes": [_label(m) for m in modes]},
                         ("validate", "gen-scenarios"), body)

    def _selection(self, ms: pl.ModelSet, mats: dict, label: str) -> dict:
        val, test = mats["val"], mats["test"]
        i, j = select_best_cell(val.scores)
        diag_val = [float(val.scores[k, k]) for k in range(len(ms))]
        out = {
            "mode": label, "n": val.n, "labels": ms.labels(), "run_indices": ms.run_indices, "epochs": ms.epochs,
            "winner": [i, j], "winner_label": f"({ms.labels()[i]}, {ms.labels()[j]})",
            "val_score": float(val.scores[i, j]), "test_score": float(test.scores[i, j]),
            "single_val": diag_val, "single_test": [float(test.scores[k, k]) for k in range(len(ms))],
            "dominance": bool(all(val.scores[i, j] >= s for s in diag_val)),
            "lambda": {s: lambda_improvement(mat.scores) for s, mat in mats.items()},
            "max_theta": {},
            "theta_winner_test": theta_improvement(float(test.scores[i, j]), float(test.scores[i, i]),
                                                   float(test.scores[j, j])),
        }
        for s, mat in mats.items():
            th, (a, b) = max_theta(mat.scores)
            out["max_theta"][s] = {"theta": th, "pair": [a, b]}
        return out

    def _test_details(self, ms, mats, sel, mode, stats) -> list:
        """Failure overlap and per-scenario breakdown on the held-out split."""
        label = _label(mode)
        test = self.scenarios("test")
        n = mats["val"].n
        i, j = sel["winner"]
        if i == j:  # fall back to the best combination on validation
            off = mats["val"].scores.copy()
            np.fill_diagonal(off, -np.inf)
            i, j = select_best_cell(off)
        pols = {"a": pair_policy(ms, i, i, n, stats),
                "b": pair_policy(ms, j, j, n, stats),
                "soe": pair_policy(ms, i, j, n, stats)}
        w = tuple(sel["winner"])
        if w != (i, j):
            pols["winner"] = pair_policy(ms, *w, n, stats)
        res = evaluate_cells(pols, test, mode, self.map_fn, keep_logs=True)
        win = res["winner" if w != (i, j) else "soe"]
        paths = []
        if test:
            fo = {"pair": [i, j], "labels": [ms.labels()[i], ms.labels()[j]], "split": "test",
                  "scenarios": len(test), "table": failure_overlap(res["a"].logs, res["b"].logs, res["soe"].logs)}
        else:
            fo = {"pair": [i, j], "labels": [ms.labels()[i], ms.labels()[j]], "split": "test", "scenarios": 0,
                  "table": {}}
        paths.append(self.store.write_json(f"results/failure_overlap_{label}.json", fo))
        p = self.store.path(f"results/breakdown_test_{label}.csv")
        ok = [(sc, m) for sc, m in zip(test, win.metrics) if m is not None]
        write_breakdown(p, [sc.id for sc, _ in ok], [sc.kind for sc, _ in ok], [m for _, m in ok])
        paths.append(p)
        return paths

    def _grouped(self, ms, val: ScoreMatrix, mode, stats):
        label = _label(mode)
        scen = self.scenarios("val")
        kinds = [sc.kind for sc in scen]
        cl = {ms.labels()[k]: val.cell_scores[k, k].tolist() for k in range(len(ms))}
        ol_set = self.dataset("val_ol")
        ol = {}
        for k, ck in enumerate(ms.members):
            per = pl.ol_per_scenario(ck, stats, ol_set)
            ol[ms.labels()[k]] = [per.get(sc.id, float("nan")) for sc in scen]
        ol_kinds = {lab: [(s, kd) for s, kd in zip(v, kinds) if s == s] for lab, v in ol.items()}
        doc = {"mode": label, "split": "val", "kinds": kinds, "cl": grouped_scores(cl, kinds) if kinds else {},
               "ol": {}, "cl_raw": cl, "ol_raw": ol}
        if kinds:
            keep = [kd for _, kd in next(iter(ol_kinds.values()))]
            doc["ol"] = grouped_scores({lab: [s for s, _ in v] for lab, v in ol_kinds.items()}, keep)
        return self.store.write_json(f"results/grouped_{label}.json", doc)

    # -- studies -------------------------------------------------------------
    def sweep_period(self, n_values=None) -> dict:
        self._need("validate")
        n_values = tuple(int(n) for n in (n_values or self.config.sweep_n))
        if any(n < 2 for n in n_values):
            raise StageError("sweep-period", ValueError("periods must be >= 2"))
        modes = self.modes()

        def body():
            runs, stats = self.runs(), self.stats()
            scen = self.scenarios("test")
            paths, rows = [], []
            for mode in modes:
                ms = pl.cross_run_model_set(runs, mode)
                for n in n_values:
                    mat = enumerate_pairs(ms, n, scen, mode, stats, split="test", map_fn=self.map_fn)
                    paths.extend(mat.save(self.store.subdir("matrices/sweep")))
                    th, (a, b) = max_theta(mat.scores)
                    rows.append({"n": n, "mode": _label(mode), "split": "test",
                                 "lambda": lambda_improvement(mat.scores), "max_theta": th,
                                 "pair": f"({ms.labels()[a]}, {ms.labels()[b]})", "i": a, "j": b})
            p = self.store.path("results/sweep_period.csv")
            _write_rows(p, rows)
            return paths + [p], {"rows": len(rows)}

        return self._run("sweep-period", {"n": list(n_values), "modes": [_label(m) for m in modes]},
                         ("validate", "gen-scenarios"), body)

    def ablate_same_run(self) -> dict:
        self._need("validate")
        cfg, modes = self.config, self.modes()

        def body():
            runs, stats = self.runs(), self.stats()
            scen = self.scenarios("test")
            paths, rows = [], []
            for mode in modes:
                mats = {}
                for name, ms in (("cross_run", pl.cross_run_model_set(runs, mode)),
                                 ("same_run", pl.same_run_model_set(runs, mode, cfg.m))):
                    mat = enumerate_pairs(ms, cfg.n, scen, mode, stats, split="test", map_fn=self.map_fn)
                    paths.extend(mat.save(self.store.subdir(f"matrices/{name}")))
                    mats[name] = (ms, mat)
                row = {"mode": _label(mode), "split": "test", "n": cfg.n}
                for name, (ms, mat) in mats.items():
                    th, _ = max_theta(mat.scores)
                    row[f"lambda_{name}"] = lambda_improvement(mat.scores)
                    row[f"max_theta_{name}"] = th
                    row[f"members_{name}"] = " ".join(ms.labels())
                rows.append(row)
            p = self.store.path("results/ablate_same_run.csv")
            _write_rows(p, rows)
            return paths + [p], {"rows": rows}

        return self._run("ablate-same-run", {"n": cfg.n, "m": cfg.m, "modes": [_label(m) for m in modes]},
                         ("validate", "gen-scenarios"), body)

    def more_experts(self) -> dict:
        self._need("validate")
        cfg, modes = self.config, self.modes()
        if cfg.m < 4:
            raise StageError("more-experts", ValueError("more-experts needs m >= 4"))
        split = cfg.more_experts_split

        def body():
            runs, stats = self.runs(), self.stats()
            scen = self.scenarios(split)
            rows, blocks = [], []
            for mode in modes:
                ms = pl.cross_run_model_set(runs, mode)
                idx = list(range(4))  # first four members form the blocks
                orders = []
                for absent in idx:
                    present = [k for k in idx if k != absent]
                    orders.extend(tuple(o) for o in _perms(present))
                    orders.append((present[0],) * 3)
                pair = {(a, b): pair_policy(ms, a, b, cfg.n, stats) for a in idx for b in idx}
                seq = evaluate_sequences(ms, orders, scen, mode, stats, self.map_fn)
                two = {k: r.score for k, r in evaluate_cells(pair, scen, mode, self.map_fn).items()}
                for absent in idx:
                    present = [k for k in idx if k != absent]
                    block = []
                    for o in _perms(present):
                        s = seq[tuple(o)]
                        block.append(s)
                        rows.append({"mode": _label(mode), "split": split, "absent": absent + 1,
                                     "order": "-".join(str(k + 1) for k in o), "score": s, "kind": "sequence"})
                    a = present[0]
                    rows.append({"mode": _label(mode), "split": split, "absent": absent + 1,
                                 "order": "-".join([str(a + 1)] * 3), "score": seq[(a,) * 3], "kind": "sanity"})
                    pairs = {f"{x + 1}-{y + 1}": two[(x, y)] for x in present for y in present if x != y}
                    blocks.append({"mode": _label(mode), "split": split, "absent": absent + 1,
                                   "min": min(block), "max": max(block), "variance": float(np.var(block)),
                                   "best_pair": max(pairs.values()), "best_single": max(two[(k, k)] for k in present),
                                   "sanity_matches_single": seq[(a,) * 3] == two[(a, a)]})
            p = self.store.path("results/more_experts.csv")
            _write_rows(p, rows)
            q = self.store.write_json("results/more_experts_blocks.json", blocks)
            return [p, q], {"rows": len(rows), "blocks": len(blocks)}

        return self._run("more-experts", {"n": cfg.n, "split": split, "modes": [_label(m) for m in modes]},
                         ("validate", "gen-scenarios"), body)

    def report(self) -> dict:
        from soelab.runner.report import write_report

        def body():
            paths = write_report(self.store)
            return paths, {"files": len(paths)}

        done = tuple(s for s in STAGES[:-1] if s != "report" and self.store.record(s) is not None)
        return self._run("report", {"stages": list(done)}, done, body)

    def pipeline(self) -> dict:
        self.gen_scenarios()
        self.collect()
        self.train()
        self.validate()
        self.matrices()
        return self.report()


def _perms(items):
    return list(itertools.permutations(items))


def _write_rows(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


__all__ = ["Experiment", "StageError", "STAGES"]
