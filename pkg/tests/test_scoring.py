from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import CROSS_RUN_FIXTURE, SAME_RUN_FIXTURE, TRIPLE_FIXTURE, lambda_loops, weighted_score

from soelab import pipeline as pl
from soelab import scoring as sc
from soelab import soe
from soelab.env import COMPLETED, Route, generate_scenario, rollout
from soelab.env.rollout import TrajectoryLog
from soelab.expert import ExpertPolicy

unit = st.floats(0, 1)
bit = st.integers(0, 1)


def test_all_ones_scores_one():
    assert sc.scenario_score(sc.MetricVector()) == 1.0


def test_collision_annihilates():
    assert sc.scenario_score(sc.MetricVector(collision_gate=0)) == 0.0


def test_weighted_example():
    m = sc.MetricVector(progress_ratio=0.8, ttc_score=1, speed_score=1.0, comfort_score=0)
    # comfort is binary here, so build the 0.5 case through the weights directly
    assert weighted_score((1, 1, 1, 1), 0.8, 1, 1, 0.5) == 0.875
    assert sc.scenario_score(m) == pytest.approx((5 * 0.8 + 5 + 4) / 16, abs=0)


def test_weighted_example_via_weights():
    # comfort weight 2 at half credit equals comfort weight 1 at full credit over a total of 16
    w = sc.Weights(progress=5, ttc=5, speed=4, comfort=2)
    m1 = sc.MetricVector(progress_ratio=0.8, comfort_score=1)
    m0 = sc.MetricVector(progress_ratio=0.8, comfort_score=0)
    assert 0.5 * (sc.scenario_score(m1, w) + sc.scenario_score(m0, w)) == 0.875


@given(bit, bit, bit, bit, unit, bit, unit, bit)
def test_score_matches_oracle_and_bounds(cg, dg, pg, dir_g, p, ttc, s, com):
    m = sc.MetricVector(cg, dg, pg, dir_g, p, ttc, s, com)
    got = sc.scenario_score(m)
    assert got == pytest.approx(weighted_score((cg, dg, pg, dir_g), p, ttc, s, com), abs=1e-15)
    assert 0.0 <= got <= 1.0
    if cg * dg * pg * dir_g:
        assert min(p, ttc, s, com) - 1e-15 <= got <= max(p, ttc, s, com) + 1e-15
    else:
        assert got == 0.0


def test_metric_vector_validation():
    with pytest.raises(ValueError):
        sc.MetricVector(collision_gate=2)
    with pytest.raises(ValueError):
        sc.MetricVector(progress_ratio=1.5)
    with pytest.raises(ValueError):
        sc.Weights(progress=0)


# -- indicators ---------------------------------------------------------------

def test_lambda_same_run_fixture():
    assert sc.lambda_improvement(np.array(SAME_RUN_FIXTURE)) == pytest.approx(0.20, abs=0.005)


def test_lambda_cross_run_fixture():
    assert sc.lambda_improvement(np.array(CROSS_RUN_FIXTURE)) == pytest.approx(0.79, abs=0.005)


def test_lambda_flat_is_zero():
    assert sc.lambda_improvement(np.full((4, 4), 0.7)) == pytest.approx(0.0, abs=1e-15)


@given(st.integers(2, 6).flatmap(lambda m: st.lists(unit, min_size=m * m, max_size=m * m)), st.floats(-5, 5))
def test_lambda_oracle_and_shift_invariance(cells, c):
    m = int(round(len(cells) ** 0.5))
    arr = np.array(cells).reshape(m, m)
    assert sc.lambda_improvement(arr) == pytest.approx(lambda_loops(arr.tolist()), abs=1e-12)
    assert sc.lambda_improvement(arr + c) == pytest.approx(sc.lambda_improvement(arr), abs=1e-9)


def test_lambda_rejects_small_or_ragged():
    with pytest.raises(ValueError):
        sc.lambda_improvement(np.ones((1, 1)))
    with pytest.raises(ValueError):
        sc.lambda_improvement(np.ones((2, 3)))


def test_theta_fixtures():
    t = np.array(CROSS_RUN_FIXTURE)
    assert sc.theta_improvement(t[1, 3], t[1, 1], t[3, 3]) == pytest.approx(0.88, abs=0.005)
    assert sc.theta_improvement(TRIPLE_FIXTURE["m1+m3"], TRIPLE_FIXTURE["m1"], TRIPLE_FIXTURE["m3"]) == pytest.approx(1.42, abs=0.005)
    assert sc.theta_improvement(0.9, 0.9, 0.3) == 0.0


@given(unit, unit, unit, st.floats(-5, 5))
def test_theta_shift_invariance(s, a, b, c):
    assert sc.theta_improvement(s + c, a + c, b + c) == pytest.approx(sc.theta_improvement(s, a, b), abs=1e-9)


def test_max_theta_cross_run_fixture():
    best, where = sc.max_theta(np.array(CROSS_RUN_FIXTURE))
    assert where == (1, 3) and best == pytest.approx(0.88, abs=0.005)


# -- per-log metrics ----------------------------------------------------------

def straight_route(length=300.0, limit=10.0, hw=1.75):
    xs = np.arange(0.0, length + 1.0, 1.0)
    return Route(np.column_stack([xs, np.zeros_like(xs)]), hw, limit)


def hand_log(xs, ys=None, speeds=None, agents=None, dims=None, termination=COMPLETED, heading=None):
    xs = np.asarray(xs, dtype=float)
    n = len(xs)
    ys = np.zeros(n) if ys is None else np.asarray(ys, dtype=float)
    speeds = np.full(n, 5.0) if speeds is None else np.asarray(speeds, dtype=float)
    heading = np.zeros(n) if heading is None else np.asarray(heading, dtype=float)
    ego = np.column_stack([xs, ys, heading, speeds, np.zeros(n), np.zeros(n)])
    agents = np.zeros((n, 0, 4)) if agents is None else np.asarray(agents, dtype=float)
    dims = np.zeros((0, 2)) if dims is None else np.asarray(dims, dtype=float)
    return TrajectoryLog("hand", "non_reactive", 0.1, 0.5, np.array([0.0, 0.0, 0.0, speeds[0], 0.0, 0.0]),
                         np.array([0.0, 0.0]), np.arange(1, n + 1) * 0.1, ego, np.zeros((n, 2)),
                         np.zeros(n, dtype=np.int64), np.column_stack([xs, ys]), agents, dims,
                         np.arange(0, n, 5), np.zeros(len(range(0, n, 5)), dtype=np.int64), termination,
                         lane_half_width=1.75, speed_limit=10.0)


SCEN = SimpleNamespace(route=straight_route())


def test_progress_ratio_half():
    log = hand_log(np.linspace(0.5, 30.0, 60))
    m = sc.compute_metrics(log, SCEN, reference_progress=60.0)
    assert m.progress_ratio == pytest.approx(0.5, abs=1e-12)
    assert m.progress_gate == 1


def test_progress_below_threshold_gate():
    m = sc.compute_metrics(hand_log(np.linspace(0.1, 10.0, 60)), SCEN, reference_progress=60.0)
    assert m.progress_gate == 0 and sc.scenario_score(m) == 0.0


def test_stationary_scenario_degenerate():
    log = hand_log(np.zeros(40), speeds=np.zeros(40))
    m = sc.compute_metrics(log, SCEN, reference_progress=0.0)
    assert m == sc.MetricVector()


def test_zero_duration_scenario_scores_one():
    scen = generate_scenario("straight_with_lead", 3, {"duration": 0.0})
    log = rollout(ExpertPolicy(), scen)
    assert sc.scenario_score(sc.compute_metrics(log, scen)) == 1.0


def test_overlap_zeroes_collision_gate():
    n = 20
    xs = np.linspace(0.5, 10, n)
    agents = np.zeros((n, 1, 4))
    agents[:, 0, 0] = 40.0
    agents[10, 0, 0] = xs[10] + 1.0
    log = hand_log(xs, agents=agents, dims=[[4.5, 1.9]])
    m = sc.compute_metrics(log, SCEN, reference_progress=10.0)
    assert m.collision_gate == 0 and sc.scenario_score(m) == 0.0
    assert sc.collision_flags(log).sum() == 1


def test_lane_departure_zeroes_drivable_gate():
    ys = np.zeros(30)
    ys[15] = 1.9
    m = sc.compute_metrics(hand_log(np.linspace(0.5, 15, 30), ys=ys), SCEN, reference_progress=15.0)
    assert m.drivable_gate == 0


def test_reversing_beyond_limit_zeroes_direction():
    xs = np.concatenate([np.linspace(1, 20, 20), np.linspace(19, 12, 8)])
    assert sc.compute_metrics(hand_log(xs), SCEN, reference_progress=12.0).direction_gate == 0
    xs = np.concatenate([np.linspace(1, 20, 20), np.linspace(19, 16, 4)])
    assert sc.compute_metrics(hand_log(xs), SCEN, reference_progress=16.0).direction_gate == 1


def test_overspeed_integral():
    speeds = np.full(50, 15.0)
    speeds[25:] = 10.0
    m = sc.compute_metrics(hand_log(np.linspace(1, 60, 50), speeds=speeds), SCEN, reference_progress=60.0)
    # 5 m/s over for half of the run at a 10 m/s limit
    assert m.speed_score == pytest.approx(1 - (5 * 2.5) / (10 * 5.0), abs=1e-12)


def test_head_on_ttc_fails():
    n = 10
    xs = np.linspace(1, 10, n)
    agents = np.zeros((n, 1, 4))
    agents[:, 0, 0] = xs + 5.0 + 4.5
    agents[:, 0, 2] = np.pi
    m = sc.compute_metrics(hand_log(xs, speeds=np.full(n, 10.0), agents=agents, dims=[[4.5, 1.9]]), SCEN,
                           reference_progress=10.0)
    assert m.ttc_score == 0 and m.collision_gate == 1


# -- failure overlap and grouping ---------------------------------------------

def _mv(collide=False, off=False):
    return sc.MetricVector(collision_gate=0 if collide else 1, drivable_gate=0 if off else 1)


def test_failure_overlap_constructed():
    a = [_mv(collide=i < 3) for i in range(10)]
    b = [_mv(collide=3 <= i < 8) for i in range(10)]
    s = [_mv() for _ in range(10)]
    t = sc.failure_overlap(a, b, s)["collision"]
    assert (t["both"], t["only_a"], t["only_b"], t["neither"]) == (0, 3, 5, 2)
    assert (t["both_soe"], t["only_a_soe"], t["only_b_soe"], t["neither_soe"]) == (0, 0, 0, 0)


def test_failure_overlap_identical_has_no_single_fail():
    a = [_mv(collide=i % 3 == 0, off=i % 4 == 0) for i in range(12)]
    out = sc.failure_overlap(a, a, a)
    for t in out.values():
        assert t["only_a"] == t["only_b"] == 0


def test_failure_overlap_length_mismatch():
    with pytest.raises(ValueError):
        sc.failure_overlap([_mv()], [_mv(), _mv()], [_mv()])


def test_failure_overlap_partition_on_toy(toy):
    ms = pl.cross_run_model_set(toy.runs, "CL-NR")
    res = soe.evaluate_cells({"a": pl.LearnedPolicy(ms.members[0], *toy.stats),
                              "b": pl.LearnedPolicy(ms.members[1], *toy.stats),
                              "s": soe.pair_policy(ms, 0, 1, 2, toy.stats)}, toy.val, "CL-NR", keep_logs=True)
    out = sc.failure_overlap(res["a"].logs, res["b"].logs, res["s"].logs)
    for ft, t in out.items():
        assert t["both"] + t["only_a"] + t["only_b"] + t["neither"] == len(toy.val)
        # independent recount straight from the logs
        def fails(log):
            if ft == "collision":
                return log.termination == "collided" or bool(sc.collision_flags(log).any())
            return len(log) > 0 and np.abs(log.frenet[:, 1]).max() > log.lane_half_width
        assert t["both"] + t["only_a"] == sum(fails(lg) for lg in res["a"].logs)
        assert t["both"] + t["only_b"] == sum(fails(lg) for lg in res["b"].logs)
        assert sum(t[k + "_soe"] for k in ("both", "only_a", "only_b", "neither")) == sum(
            fails(lg) for lg in res["s"].logs)


def test_failure_overlap_rejects_different_scenarios(toy):
    ck = toy.runs[0].checkpoints[0]
    a = pl.cl_evaluate(pl.LearnedPolicy(ck, *toy.stats), toy.val[:2], "CL-NR", keep_logs=True).logs
    b = pl.cl_evaluate(pl.LearnedPolicy(ck, *toy.stats), toy.val[2:4], "CL-NR", keep_logs=True).logs
    with pytest.raises(ValueError):
        sc.failure_overlap(a, b, a)


def test_grouped_single_kind_is_mean():
    out = sc.grouped_scores({"m": [0.2, 0.4, 0.9]}, ["k"] * 3)
    assert out["means"]["m"]["k"] == pytest.approx(0.5)
    assert out["spread"]["k"] == 0.0


def test_grouped_identical_models_zero_spread():
    scores = [0.1, 0.5, 0.7, 0.3]
    out = sc.grouped_scores({"a": scores, "b": list(scores)}, ["x", "y", "x", "y"])
    assert all(v == 0.0 for v in out["spread"].values())
    assert out["means"]["a"] == {"x": pytest.approx(0.4), "y": pytest.approx(0.4)}


def test_grouped_spread():
    out = sc.grouped_scores({"a": [1.0, 0.0], "b": [0.5, 0.25]}, ["x", "y"])
    assert out["spread"] == {"x": 0.5, "y": 0.25}


def test_breakdown_file(tmp_path):
    p = tmp_path / "b.csv"
    sc.write_breakdown(p, ["s1", "s2"], ["k", "k"], [sc.MetricVector(), sc.MetricVector(collision_gate=0)])
    rows = p.read_text().strip().splitlines()
    assert rows[0].split(",")[-1] == "score" and len(rows) == 3
    assert rows[1].endswith(",1.0") and rows[2].endswith(",0.0")
