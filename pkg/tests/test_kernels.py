import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from soelab._backend import HAVE_NUMBA
from soelab.kernels import geometry as g
from soelab.kernels.dynamics import bicycle_step

finite = st.floats(-1e3, 1e3, allow_nan=False)
angle = st.floats(-50.0, 50.0, allow_nan=False)


def _polyline(seed, n=40):
    rng = np.random.default_rng(seed)
    heading = np.cumsum(rng.normal(0, 0.08, n - 1))
    step = rng.uniform(0.5, 2.0, n - 1)
    pts = np.zeros((n, 2))
    pts[1:, 0] = np.cumsum(step * np.cos(heading))
    pts[1:, 1] = np.cumsum(step * np.sin(heading))
    seg = np.diff(pts, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum_s = np.concatenate([[0.0], np.cumsum(seg_len)])
    return pts, cum_s, seg / seg_len[:, None]


@given(angle)
def test_wrap_angle_range(a):
    w = g.wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)
    assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-9)


def test_wrap_angle_boundaries():
    assert g.wrap_angle(math.pi) == math.pi
    assert g.wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert g.wrap_angle(0.3) == 0.3


@given(st.integers(0, 1000), finite, finite)
def test_project_backends_agree(seed, x, y):
    pts, cum_s, units = _polyline(seed)
    a = g.project_nb(pts, cum_s, units, x, y)
    b = g.project_np(pts, cum_s, units, x, y)
    assert a[0] == pytest.approx(b[0], abs=1e-9)
    assert a[1] == pytest.approx(b[1], abs=1e-9)


@given(st.integers(0, 1000), st.floats(-20, 120), st.floats(0, 60))
def test_max_abs_curvature_backends_agree(seed, s0, span):
    rng = np.random.default_rng(seed)
    cum_s = np.cumsum(rng.uniform(0.5, 2, 60)) - 1.0
    kappa = rng.normal(0, 0.05, 60)
    assert g.max_abs_curvature_nb(cum_s, kappa, s0, s0 + span) == pytest.approx(
        g.max_abs_curvature_np(cum_s, kappa, s0, s0 + span), abs=1e-12)


boxes = arrays(np.float64, (8, 3), elements=st.floats(-6, 6, allow_nan=False))


@given(boxes, st.floats(-3, 3), st.floats(-3, 3), st.floats(-4, 4))
def test_overlap_backends_agree(agents, x, y, h):
    dims = np.tile([4.5, 1.9], (8, 1))
    assert g.any_overlap_nb(x, y, h, 4.5, 1.9, agents, dims) == g.any_overlap_np(x, y, h, 4.5, 1.9, agents, dims)
    ego = np.tile([x, y, h], (3, 1))
    ag = np.stack([agents] * 3)
    assert np.array_equal(g.overlap_matrix_nb(ego, np.array([4.5, 1.9]), ag, dims),
                          g.overlap_matrix_np(ego, np.array([4.5, 1.9]), ag, dims))


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-4, 4), st.floats(-4, 4))
def test_obb_overlap_symmetric(x, y, h1, h2):
    assert g.obb_overlap(0.0, 0.0, h1, 4.5, 1.9, x, y, h2, 4.0, 2.0) == g.obb_overlap(x, y, h2, 4.0, 2.0, 0.0, 0.0,
                                                                                       h1, 4.5, 1.9)


def test_obb_overlap_cases():
    assert g.obb_overlap(0, 0, 0, 4, 2, 3.9, 0, 0, 4, 2)
    assert not g.obb_overlap(0, 0, 0, 4, 2, 4.1, 0, 0, 4, 2)
    # squares turned 45 degrees reach sqrt(2) along x, so corners meet at 2*sqrt(2)
    assert g.obb_overlap(0, 0, math.pi / 4, 2, 2, 2.8, 0, math.pi / 4, 2, 2)
    assert not g.obb_overlap(0, 0, math.pi / 4, 2, 2, 2.9, 0, math.pi / 4, 2, 2)
    assert g.obb_overlap(0, 0, math.pi / 2, 4, 2, 0, 2.9, math.pi / 2, 4, 2)


@given(st.integers(0, 10_000))
def test_min_ttc_backends_agree(seed):
    rng = np.random.default_rng(seed)
    n, a = 12, 4
    ego = np.column_stack([np.linspace(0, 10, n), rng.normal(0, 0.3, n), rng.normal(0, 0.1, n),
                           rng.uniform(0, 12, n)])
    agents = np.stack([np.column_stack([ego[:, 0] + rng.uniform(-3, 15, n), rng.normal(0, 2, n),
                                        rng.normal(0, 0.5, n), rng.uniform(0, 8, n)]) for _ in range(a)], axis=1)
    dims = np.tile([4.5, 1.9], (a, 1))
    args = (ego, np.array([4.5, 1.9]), agents, dims, 0.1, 10, 0.05)
    assert g.min_ttc_nb(*args) == g.min_ttc_np(*args)


def test_min_ttc_head_on_closing():
    ego = np.array([[0.0, 0.0, 0.0, 10.0]])
    agents = np.array([[[14.5, 0.0, math.pi, 0.0]]])  # stopped car, 10 m bumper gap
    dims = np.array([[4.5, 1.9]])
    ttc = g.min_ttc(ego, np.array([4.5, 1.9]), agents, dims, 0.1, 20, 0.05)
    assert ttc == pytest.approx(1.0)


@given(finite, finite, angle, st.floats(0, 40), st.floats(-5, 3), st.floats(-0.6, 0.6))
def test_bicycle_kernel_matches_formula(x, y, h, v, a, d):
    nx, ny, nh, nv = bicycle_step(x, y, h, v, a, d, 0.1, 2.7)
    assert nx == pytest.approx(x + v * math.cos(h) * 0.1, abs=1e-9)
    assert ny == pytest.approx(y + v * math.sin(h) * 0.1, abs=1e-9)
    assert nv == pytest.approx(max(0.0, v + a * 0.1))
    assert -math.pi < nh <= math.pi


def _run_with_backend(backend, code):
    env = dict(os.environ, SOELAB_BACKEND=backend)
    return subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)


def test_numpy_backend_selected_by_env():
    r = _run_with_backend("numpy", "from soelab import _backend as b; print(b.BACKEND, b.HAVE_NUMBA)")
    assert r.returncode == 0, r.stderr
    assert r.stdout.split() == ["numpy", "False"]


def test_invalid_backend_rejected():
    r = _run_with_backend("fortran", "import soelab.kernels")
    assert r.returncode != 0
    assert "SOELAB_BACKEND" in r.stderr


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
def test_backends_give_identical_expert_rollout():
    code = ("from soelab.env.generate import generate_scenario; from soelab.expert import ExpertPolicy;"
            "from soelab.env import rollout;"
            "lg = rollout(ExpertPolicy(), generate_scenario('parked_vehicle_pass', 3), 'CL-R');"
            "print(lg.termination, repr(float(lg.ego[-1, 0])), repr(float(lg.ego[-1, 1])))")
    a = _run_with_backend("numba", code)
    b = _run_with_backend("numpy", code)
    assert a.returncode == 0 and b.returncode == 0, a.stderr + b.stderr
    ta, xa, ya = a.stdout.split()
    tb, xb, yb = b.stdout.split()
    assert ta == tb == "completed"
    assert float(xa) == pytest.approx(float(xb), abs=1e-6)
    assert float(ya) == pytest.approx(float(yb), abs=1e-6)
