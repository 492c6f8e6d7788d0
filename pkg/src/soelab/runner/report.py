"""Markdown report and SVG plots, built only from files already in the store."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from soelab.env.generate import SPLITS
from soelab.runner import svg
from soelab.runner.store import RunStore
from soelab.scoring import METRIC_NAMES
from soelab.soe import ScoreMatrix

SPLIT_ORDER = ("val", "shifted_val", "test")


def _pct(v: float) -> str:
    return f"{100 * float(v):.2f}"


def _table(header: list[str], rows: list[list]) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return out + [""]


def _read_csv(path: Path) -> list[dict]:
    if not path.exists() or path.stat().st_size == 0:
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _omitted(section: str, stage: str) -> list[str]:
    return [f"## {section}", "", f"_Omitted: stage `{stage}` has not been run._", ""]


def write_report(store: RunStore) -> list[Path]:
    root = store.root
    out_dir = store.subdir("report")
    files: list[Path] = []
    stages = store.manifest["stages"]
    lines = ["# Sequence-of-experts toy experiment", "",
             f"Experiment seed: {store.manifest.get('experiment_seed')}. Scores are shown x100.", ""]

    n_scen = sum((stages.get("gen-scenarios") or {}).get("summary", {}).values()) if "gen-scenarios" in stages else 0
    if n_scen == 0:
        lines += ["_No scenarios in this store; nothing to report._", ""]
        p = out_dir / "report.md"
        p.write_text("\n".join(lines))
        return [p]

    counts = stages["gen-scenarios"]["summary"]
    lines += ["Scenarios per split: " + ", ".join(f"{k} {counts[k]}" for k in SPLITS if k in counts), ""]
    if "collect" in stages:
        for name, s in stages["collect"]["summary"].items():
            if s["excluded"]:
                lines.append(f"Excluded from `{name}` (expert failed): {', '.join(e['scenario_id'] + ' (' + e['termination'] + ')' for e in s['excluded'])}")
        lines.append("")

    def plot(name: str, text: str) -> str:
        p = out_dir / name
        p.write_text(text)
        files.append(p)
        return name

    modes: list[str] = []
    # -- headline ------------------------------------------------------------
    if "matrices" in stages:
        modes = sorted(stages["matrices"]["summary"])
        lines += ["## Headline", ""]
        rows = []
        for mode in modes:
            sel = store.read_json(f"results/selection_{mode}.json")
            rows.append([mode, sel["winner_label"], _pct(sel["val_score"]), _pct(sel["test_score"]),
                         " / ".join(_pct(s) for s in sel["single_test"]), f"{100 * sel['lambda']['test']:.2f}",
                         f"{100 * sel['theta_winner_test']:.2f}", "yes" if sel["dominance"] else "NO"])
        lines += _table(["mode", "selected (first, second)", "val", "held-out test", "single experts (test)",
                         "lambda test", "theta test", "val dominance"], rows)
        lines += ["Lambda is the mean off-diagonal cell minus the mean diagonal cell. Theta is a cell's score "
                  "minus the better of its two members. Both are in score points.", ""]
        rows = []
        for mode in modes:
            sel = store.read_json(f"results/selection_{mode}.json")
            for split in SPLIT_ORDER:
                mt = sel["max_theta"][split]
                a, b = mt["pair"]
                rows.append([mode, split, f"{100 * sel['lambda'][split]:.2f}", f"{100 * mt['theta']:.2f}",
                             f"({sel['labels'][a]}, {sel['labels'][b]})"])
        lines += _table(["mode", "split", "lambda", "max theta", "argmax pair"], rows)
    else:
        lines += _omitted("Headline", "matrices")

    # -- training and validation curves -------------------------------------
    if "validate" in stages:
        man = store.read_json("runs/run_manifest.json")
        lines += ["## Per-epoch validation", "",
                  f"Architecture {man['arch']['layer_dims']}, dataset digest `{man['dataset_digest'][:16]}`.", ""]
        cl_keys = [k for k in man["runs"][0]["scores"] if k != "OL"] if man["runs"] else []
        rows = []
        for r in man["runs"]:
            sel = r["selected_epochs"]
            flags = [f"{k}: {'differs' if r['ol_cl_mismatch'][k] else 'same'}" for k in cl_keys]
            rows.append([r["run_index"], r["seed"], sel["OL"], *(sel[k] for k in cl_keys), "; ".join(flags)])
        lines += _table(["run", "seed", "OL-best epoch", *(f"{k}-best epoch" for k in cl_keys),
                         "OL vs CL best"], rows)
        for r in man["runs"]:
            series = {k: v for k, v in r["scores"].items()}
            marks = {k: r["selected_epochs"][k] - 1 for k in series}
            name = plot(f"epochs_run{r['run_index']}.svg",
                        svg.line_chart(series, f"run {r['run_index']}: validation score per epoch", marks=marks))
            lines.append(f"![run {r['run_index']}]({name})")
        for k in ["OL", *cl_keys]:
            series = {f"run {r['run_index']}": r["scores"][k] for r in man["runs"]}
            name = plot(f"epochs_{k}.svg", svg.line_chart(series, f"{k} validation score, all runs"))
            lines.append(f"![{k}]({name})")
        lines.append("")
    else:
        lines += _omitted("Per-epoch validation", "validate")

    # -- matrices ------------------------------------------------------------
    if "matrices" in stages:
        lines += ["## Score matrices", "", "Rows hold the first expert, columns the second; the diagonal "
                  "(bold) is the expert alone.", ""]
        for mode in modes:
            n = store.read_json(f"results/selection_{mode}.json")["n"]
            for split in SPLIT_ORDER:
                mat = ScoreMatrix.load(root / f"matrices/matrix_{split}_{mode}_n{n}.json")
                lines += [f"### {split}, {mode}, n={n}", ""]
                rows = [[mat.labels[i], *((f"**{_pct(v)}**" if i == j else _pct(v)) for j, v in enumerate(row))]
                        for i, row in enumerate(mat.scores)]
                lines += _table(["first \\ second", *mat.labels], rows)
                name = plot(f"{mat.stem()}.svg", svg.matrix_heatmap(mat.scores, mat.labels,
                                                                    f"{split} {mode} n={n}"))
                lines += [f"![{mat.stem()}]({name})", ""]
    else:
        lines += _omitted("Score matrices", "matrices")

    # -- grouped scores ------------------------------------------------------
    if "matrices" in stages:
        lines += ["## Scores by scenario kind (validation)", ""]
        for mode in modes:
            g = store.read_json(f"results/grouped_{mode}.json")
            for which in ("cl", "ol"):
                if not g[which]:
                    continue
                means, spread = g[which]["means"], g[which]["spread"]
                kinds = sorted(spread)
                labels = list(means)
                tag = mode if which == "cl" else "OL"
                lines += [f"### {tag} (models selected by {mode})", ""]
                rows = [[k, *(_pct(means[lab][k]) for lab in labels), _pct(spread[k])] for k in kinds]
                lines += _table(["kind", *labels, "max spread"], rows)
                name = plot(f"grouped_{mode}_{which}.svg",
                            svg.grouped_bars(kinds, {lab: [means[lab][k] for k in kinds] for lab in labels},
                                             f"{tag} score by kind"))
                lines += [f"![grouped]({name})", ""]

    # -- failure overlap -----------------------------------------------------
    if "matrices" in stages:
        lines += ["## Failure overlap (held-out test)", ""]
        for mode in modes:
            fo = store.read_json(f"results/failure_overlap_{mode}.json")
            a, b = fo["labels"]
            lines += [f"{mode}: a = {a}, b = {b}, combined = (a, b).", ""]
            rows = []
            for ft, t in sorted(fo["table"].items()):
                rows.append([ft, f"{t['both']} -> {t['both_soe']}", f"{t['only_a']} -> {t['only_a_soe']}",
                             f"{t['only_b']} -> {t['only_b_soe']}", f"{t['neither']} -> {t['neither_soe']}"])
            lines += _table(["failure", "a & b", "a only", "b only", "neither"], rows)
        lines += ["Each entry reads `scenarios in category -> of which the combination still fails`.", ""]

    # -- detailed metrics ----------------------------------------------------
    if "matrices" in stages:
        lines += ["## Metric breakdown (held-out test, mean over scenarios)", ""]
        for mode in modes:
            sel = store.read_json(f"results/selection_{mode}.json")
            mat = ScoreMatrix.load(root / f"matrices/matrix_test_{mode}_n{sel['n']}.json")
            i, j = sel["winner"]
            cells = [(k, k) for k in range(mat.m)] + ([(i, j)] if i != j else [])
            rows = []
            for a, b in cells:
                bd = mat.breakdown[f"{a},{b}"]
                name = mat.labels[a] if a == b else f"({mat.labels[a]}, {mat.labels[b]})"
                rows.append([name, *(f"{100 * bd[k]:.2f}" for k in METRIC_NAMES), _pct(bd["score"])])
            lines += [f"### {mode}", ""]
            lines += _table(["policy", *METRIC_NAMES, "score"], rows)
            lines += [f"Per-scenario rows for the selected policy: `results/breakdown_test_{mode}.csv`.", ""]

    # -- studies -------------------------------------------------------------
    if "sweep-period" in stages:
        rows = _read_csv(root / "results/sweep_period.csv")
        lines += ["## Period sweep (held-out test)", ""]
        lines += _table(["n", "mode", "lambda", "max theta", "argmax pair"],
                        [[r["n"], r["mode"], f"{100 * float(r['lambda']):.2f}", f"{100 * float(r['max_theta']):.2f}",
                          r["pair"]] for r in rows])
        for mode in sorted({r["mode"] for r in rows}):
            sub = [r for r in rows if r["mode"] == mode]
            name = plot(f"sweep_{mode}.svg", svg.grouped_bars(
                [f"n={r['n']}" for r in sub],
                {"lambda": [float(r["lambda"]) for r in sub], "max theta": [float(r["max_theta"]) for r in sub]},
                f"period sweep, {mode}", "score difference"))
            lines += [f"![sweep]({name})", ""]
    if "ablate-same-run" in stages:
        rows = _read_csv(root / "results/ablate_same_run.csv")
        lines += ["## Cross-run vs same-run model sets (held-out test)", ""]
        lines += _table(["mode", "lambda cross-run", "lambda same-run", "max theta cross-run",
                         "max theta same-run", "same-run members"],
                        [[r["mode"], f"{100 * float(r['lambda_cross_run']):.2f}",
                          f"{100 * float(r['lambda_same_run']):.2f}", f"{100 * float(r['max_theta_cross_run']):.2f}",
                          f"{100 * float(r['max_theta_same_run']):.2f}", r["members_same_run"]] for r in rows])
    if "more-experts" in stages:
        rows = _read_csv(root / "results/more_experts.csv")
        blocks = store.read_json("results/more_experts_blocks.json")
        lines += ["## Three-expert cyclic sequences", ""]
        lines += _table(["mode", "absent", "order", "score", "row"],
                        [[r["mode"], r["absent"], r["order"], _pct(float(r["score"])), r["kind"]] for r in rows])
        lines += _table(["mode", "absent", "min", "max", "variance (x1e4)", "best pair", "best single",
                         "(A,A,A) = A"],
                        [[b["mode"], b["absent"], _pct(b["min"]), _pct(b["max"]), f"{1e4 * b['variance']:.3f}",
                          _pct(b["best_pair"]), _pct(b["best_single"]), b["sanity_matches_single"]] for b in blocks])

    p = out_dir / "report.md"
    p.write_text("\n".join(lines))
    files.append(p)
    return files


def audit(store: RunStore) -> list[str]:
    """Recompute stored aggregates from the raw matrix files; returns a list of mismatches."""
    from soelab.scoring import lambda_improvement, max_theta

    problems = []
    for mode in sorted((store.record("matrices") or {}).get("summary", {})):
        sel = store.read_json(f"results/selection_{mode}.json")
        for split in SPLIT_ORDER:
            mat = ScoreMatrix.load(store.root / f"matrices/matrix_{split}_{mode}_n{sel['n']}.json")
            if not np.allclose(mat.scores, mat.cell_scores.mean(axis=2), rtol=0, atol=1e-12):
                problems.append(f"{mode}/{split}: cell means differ from per-scenario scores")
            if lambda_improvement(mat.scores) != sel["lambda"][split]:
                problems.append(f"{mode}/{split}: lambda differs")
            if max_theta(mat.scores)[0] != sel["max_theta"][split]["theta"]:
                problems.append(f"{mode}/{split}: max theta differs")
        test = ScoreMatrix.load(store.root / f"matrices/matrix_test_{mode}_n{sel['n']}.json")
        i, j = sel["winner"]
        if test.scores[i, j] != sel["test_score"] or list(np.diag(test.scores)) != sel["single_test"]:
            problems.append(f"{mode}: headline differs from test matrix")
    return problems
