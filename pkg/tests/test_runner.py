import csv
import json
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from soelab import pipeline as pl
from soelab.runner import cli
from soelab.runner.config import DEFAULT_CONFIG_YAML, ConfigError, ExperimentConfig, config_from_dict, load_config
from soelab.runner.experiments import Experiment, StageError
from soelab.runner.report import audit
from soelab.runner.store import RunStore, StoreError, stage_key
from soelab.soe import ScoreMatrix


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- config -------------------------------------------------------------------

def test_default_yaml_matches_defaults(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(DEFAULT_CONFIG_YAML)
    assert load_config(p) == ExperimentConfig()
    assert load_config(None) == ExperimentConfig()


def test_shipped_config_file_is_default():
    from pathlib import Path

    shipped = Path(__file__).resolve().parents[1] / "configs" / "default.yaml"
    assert load_config(shipped) == ExperimentConfig()


def test_config_defaults():
    c = ExperimentConfig()
    assert (c.m, c.n, c.epochs) == (4, 2, 30)
    assert c.counts == {"train": 200, "val": 60, "shifted_val": 60, "test": 60}


@pytest.mark.parametrize("raw", [{"m": 1}, {"n": 1}, {"bogus": 3}, {"counts": {"train": -1}},
                                 {"modes": ["open"]}, {"optimizer": "lbfgs"}, {"sweep_n": [1]}])
def test_config_rejects(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_config_partial_counts_merge():
    c = config_from_dict({"counts": {"val": 5}})
    assert c.counts["val"] == 5 and c.counts["train"] == 200


def test_config_digest_tracks_values():
    assert ExperimentConfig().digest == ExperimentConfig().digest
    assert ExperimentConfig().digest != config_from_dict({"epochs": 3}).digest


# -- store --------------------------------------------------------------------

def test_store_noop_and_invalidation(tmp_path):
    s = RunStore(tmp_path, 0)
    p = s.write_json("a/x.json", {"v": 1})
    key = stage_key("st", {"p": 1})
    s.commit("st", key, [p])
    assert s.is_done("st", key)
    assert not s.is_done("st", stage_key("st", {"p": 2}))
    p.write_text("tampered")
    assert not s.is_done("st", key)
    reopened = RunStore(tmp_path, 0)
    assert reopened.record("st")["artifacts"] == {"a/x.json": s.record("st")["artifacts"]["a/x.json"]}


def test_store_refuses_seed_change(tmp_path):
    s = RunStore(tmp_path, 0)
    s.commit("st", "k", [s.write_json("x.json", {})])
    with pytest.raises(StoreError):
        RunStore(tmp_path, 1)
    RunStore(tmp_path, 0)


# -- end-to-end on a small config ---------------------------------------------

@pytest.fixture(scope="module")
def done(small_config, tmp_path_factory):
    root = tmp_path_factory.mktemp("store")
    exp = Experiment.open(small_config, root)
    exp.pipeline()
    exp.sweep_period()
    exp.ablate_same_run()
    exp.more_experts()
    exp.report()
    return exp


def test_pipeline_artifacts(done):
    root = done.store.root
    mat = ScoreMatrix.load(root / "matrices/matrix_val_CL-NR_n2.json")
    assert mat.scores.shape == (4, 4)
    assert len(list((root / "checkpoints").rglob("*.ckpt"))) == 4 * 4
    assert (root / "report/report.md").exists()
    man = done.store.read_json("runs/run_manifest.json")
    assert set(man["runs"][0]["scores"]) == {"OL", "CL-NR"}
    assert len(man["runs"][0]["scores"]["OL"]) == 4


def test_second_run_skips_everything(done, caplog):
    before = json.loads((done.store.root / "manifest.json").read_text())
    exp = Experiment.open(done.config, done.store.root)
    with caplog.at_level("INFO", logger="soelab.runner"):
        exp.pipeline()
    assert "running" not in caplog.text
    assert caplog.text.count("up to date, skipped") == 6
    assert json.loads((done.store.root / "manifest.json").read_text()) == before


def test_headline_matches_raw_matrices(done):
    root = done.store.root
    sel = done.store.read_json("results/selection_CL-NR.json")
    val = ScoreMatrix.load(root / "matrices/matrix_val_CL-NR_n2.json")
    test = ScoreMatrix.load(root / "matrices/matrix_test_CL-NR_n2.json")
    i, j = sel["winner"]
    assert sel["val_score"] == val.scores.max() == val.scores[i, j]
    assert sel["test_score"] == test.scores[i, j]
    assert sel["single_test"] == list(np.diag(test.scores))
    assert sel["dominance"] is True
    assert audit(done.store) == []
    report = (root / "report/report.md").read_text()
    assert f"{100 * sel['test_score']:.2f}" in report


def test_diagonal_matches_validation_scores(done):
    runs = done.runs()
    ms = pl.cross_run_model_set(runs, "CL-NR")
    val = ScoreMatrix.load(done.store.root / "matrices/matrix_val_CL-NR_n2.json")
    assert list(np.diag(val.scores)) == ms.val_scores


def test_sweep_rows_and_consistency(done):
    rows = _rows(done.store.root / "results/sweep_period.csv")
    assert [(r["n"], r["mode"]) for r in rows] == [("2", "CL-NR"), ("3", "CL-NR")]
    sel = done.store.read_json("results/selection_CL-NR.json")
    assert float(rows[0]["lambda"]) == sel["lambda"]["test"]
    assert float(rows[0]["max_theta"]) == sel["max_theta"]["test"]["theta"]


def test_ablation_outputs(done):
    root = done.store.root
    for name in ("cross_run", "same_run"):
        mat = ScoreMatrix.load(root / f"matrices/{name}/matrix_test_CL-NR_n2.json")
        assert mat.scores.shape == (4, 4)
    cross = ScoreMatrix.load(root / "matrices/cross_run/matrix_test_CL-NR_n2.json")
    test = ScoreMatrix.load(root / "matrices/matrix_test_CL-NR_n2.json")
    np.testing.assert_array_equal(np.diag(cross.scores), np.diag(test.scores))
    row = _rows(root / "results/ablate_same_run.csv")[0]
    assert float(row["lambda_cross_run"]) == done.store.read_json("results/selection_CL-NR.json")["lambda"]["test"]
    assert len(set(row["members_same_run"].split())) == 4


def test_more_experts_rows(done):
    rows = _rows(done.store.root / "results/more_experts.csv")
    seq = [r for r in rows if r["kind"] == "sequence"]
    assert len(seq) == 24
    assert len({(r["absent"], r["order"]) for r in seq}) == 24
    blocks = done.store.read_json("results/more_experts_blocks.json")
    assert len(blocks) == 4 and all(b["sanity_matches_single"] for b in blocks)
    # variance re-derived from the raw rows
    for b in blocks:
        scores = [float(r["score"]) for r in seq if int(r["absent"]) == b["absent"]]
        assert len(scores) == 6
        assert b["variance"] == pytest.approx(float(np.var(scores)), abs=1e-15)
        assert (b["min"], b["max"]) == (min(scores), max(scores))


def test_report_sections(done):
    text = (done.store.root / "report/report.md").read_text()
    for heading in ("## Headline", "## Per-epoch validation", "## Score matrices", "## Failure overlap",
                    "## Metric breakdown", "## Period sweep", "## Cross-run vs same-run", "## Three-expert"):
        assert heading in text
    assert "OL-best epoch" in text and "Omitted" not in text
    assert list((done.store.root / "report").glob("*.svg"))


def test_failure_overlap_partition(done):
    fo = done.store.read_json("results/failure_overlap_CL-NR.json")
    for t in fo["table"].values():
        assert t["both"] + t["only_a"] + t["only_b"] + t["neither"] == fo["scenarios"]


def test_deleting_output_reproduces_bytes(done):
    root = done.store.root
    target = root / "matrices/matrix_test_CL-NR_n2.csv"
    original = target.read_bytes()
    target.unlink()
    Experiment.open(done.config, root).matrices()
    assert target.read_bytes() == original


def test_missing_stage_section_omitted(small_config, tmp_path):
    exp = Experiment.open(small_config, tmp_path)
    exp.gen_scenarios()
    exp.report()
    text = (tmp_path / "report/report.md").read_text()
    assert "_Omitted: stage `matrices`" in text


def test_zero_scenario_report_is_header_only(tmp_path):
    cfg = config_from_dict({"counts": {"train": 0, "val": 0, "shifted_val": 0, "test": 0}})
    exp = Experiment.open(cfg, tmp_path)
    exp.gen_scenarios()
    exp.report()
    text = (tmp_path / "report/report.md").read_text()
    assert text.startswith("# ") and "##" not in text


def test_stage_order_enforced(small_config, tmp_path):
    with pytest.raises(StageError, match="train"):
        Experiment.open(small_config, tmp_path).validate()


# -- CLI ----------------------------------------------------------------------

def test_cli_success_and_seed_refusal(small_config, tmp_path, capsys):
    cfg_path = tmp_path / "c.yaml"
    import yaml

    d = small_config.to_dict()
    cfg_path.write_text(yaml.safe_dump(d))
    store = str(tmp_path / "s")
    assert cli.main(["gen-scenarios", "--config", str(cfg_path), "--store", store]) == 0
    assert cli.main(["gen-scenarios", "--config", str(cfg_path), "--store", store, "--seed", "9"]) == 1
    assert "experiment_seed" in capsys.readouterr().err


def test_cli_config_error_exit(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("m: 1\n")
    assert cli.main(["pipeline", "--config", str(p), "--store", str(tmp_path / "s")]) == 2


def test_cli_stage_failure_names_stage(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("counts: {train: 0, val: 2, shifted_val: 2, test: 2}\n")
    code = cli.main(["collect", "--config", str(cfg), "--store", str(tmp_path / "s")])
    assert code == 1
    assert "stage collect failed" in capsys.readouterr().err


def test_cli_module_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "soelab.runner.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in cli.COMMANDS:
        assert cmd in r.stdout


def test_cli_workers_match_serial(small_config, tmp_path):
    import yaml

    cfg = replace(small_config, counts={"train": 16, "val": 6, "shifted_val": 4, "test": 4}, epochs=2)
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(cfg.to_dict()))
    for name, workers in (("serial", "1"), ("pool", "2")):
        assert cli.main(["validate", "--config", str(p), "--store", str(tmp_path / name), "--workers", workers]) == 0
    a = (tmp_path / "serial/manifest.json").read_text()
    b = (tmp_path / "pool/manifest.json").read_text()
    assert a == b
