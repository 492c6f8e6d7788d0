"""Compare the numba and numpy kernel backends.

Part 1 times each kernel pair in-process on identical inputs and checks
they agree. Part 2 times full closed-loop rollouts in fresh interpreters
with SOELAB_BACKEND set to each backend.

    python3 benchmarks/bench_kernels.py [--repeat 200] [--scenarios 40]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

ROLLOUT_SNIPPET = """
import json, time
from soelab._backend import BACKEND
from soelab.env.generate import split_entries, load_scenarios
from soelab.expert import ExpertPolicy
from soelab.env import rollout
sc = load_scenarios(split_entries("val", {n}, 0))
rollout(ExpertPolicy(), sc[0], "CL-NR")  # warm-up / jit
t = time.perf_counter()
for s in sc:
    rollout(ExpertPolicy(), s, "CL-R")
print(json.dumps({{"backend": BACKEND, "seconds": time.perf_counter() - t}}))
"""


def _inputs(rng: np.random.Generator):
    s = np.arange(0.0, 400.0, 1.0)
    pts = np.stack([s, 5.0 * np.sin(s / 40.0)], axis=1)
    seg = np.diff(pts, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum_s = np.concatenate([[0.0], np.cumsum(seg_len)])
    units = seg / seg_len[:, None]
    kappa = rng.normal(0, 0.02, pts.shape[0])
    n, a = 101, 6
    ego = np.column_stack([np.linspace(0, 100, n), rng.normal(0, 0.5, n), rng.normal(0, 0.05, n),
                           np.full(n, 10.0)])
    agents = np.stack([np.column_stack([ego[:, 0] + 8 + 6 * j + rng.normal(0, 1, n), rng.normal(0, 2, n),
                                        rng.normal(0, 0.2, n), np.full(n, 6.0)]) for j in range(a)], axis=1)
    dims = np.tile([4.5, 1.9], (a, 1))
    return pts, cum_s, units, kappa, ego, agents, dims


def kernel_table(repeat: int) -> list[dict]:
    from soelab.kernels import geometry as g

    pts, cum_s, units, kappa, ego, agents, dims = _inputs(np.random.default_rng(0))
    ed = np.array([4.5, 1.9])
    cases = {
        "project": (g.project_nb, g.project_np, (pts, cum_s, units, 123.4, 2.0)),
        "max_abs_curvature": (g.max_abs_curvature_nb, g.max_abs_curvature_np, (cum_s, kappa, 10.0, 60.0)),
        "overlap_matrix": (g.overlap_matrix_nb, g.overlap_matrix_np, (ego[:, :3], ed, agents[:, :, :3], dims)),
        "any_overlap": (g.any_overlap_nb, g.any_overlap_np, (50.0, 0.0, 0.0, 4.5, 1.9, agents[50, :, :3], dims)),
        "min_ttc": (g.min_ttc_nb, g.min_ttc_np, (ego, ed, agents, dims, 0.1, 10, 0.05)),
    }
    rows = []
    for name, (fnb, fnp, args) in cases.items():
        r_nb, r_np = fnb(*args), fnp(*args)  # also triggers compilation
        agree = bool(np.allclose(np.asarray(r_nb, dtype=float), np.asarray(r_np, dtype=float), atol=1e-9))
        t_nb = min(timeit.repeat(lambda: fnb(*args), number=repeat, repeat=3)) / repeat
        t_np = min(timeit.repeat(lambda: fnp(*args), number=repeat, repeat=3)) / repeat
        rows.append({"kernel": name, "numba_us": 1e6 * t_nb, "numpy_us": 1e6 * t_np,
                     "speedup": t_np / t_nb, "agree": agree})
    return rows


def rollout_table(n: int) -> list[dict]:
    rows = []
    for backend in ("numba", "numpy"):
        env = dict(os.environ, SOELAB_BACKEND=backend)
        out = subprocess.run([sys.executable, "-c", ROLLOUT_SNIPPET.format(n=n)], env=env, check=True,
                             capture_output=True, text=True).stdout.strip().splitlines()[-1]
        r = json.loads(out)
        rows.append({"backend": r["backend"], "rollouts": n, "ms_per_rollout": 1e3 * r["seconds"] / n})
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--scenarios", type=int, default=40)
    args = ap.parse_args(argv)
    from soelab._backend import HAVE_NUMBA

    if HAVE_NUMBA:
        print(f"{'kernel':<20}{'numba us':>12}{'numpy us':>12}{'speedup':>10}  agree")
        for r in kernel_table(args.repeat):
            print(f"{r['kernel']:<20}{r['numba_us']:>12.2f}{r['numpy_us']:>12.2f}{r['speedup']:>10.1f}  {r['agree']}")
    else:
        print("numba unavailable; skipping the in-process kernel comparison")
    print()
    print(f"{'backend':<10}{'rollouts':>10}{'ms/rollout':>12}")
    for r in rollout_table(args.scenarios):
        print(f"{r['backend']:<10}{r['rollouts']:>10}{r['ms_per_rollout']:>12.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
