import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import CROSS_RUN_FIXTURE, sigma_formula

from soelab import pipeline as pl
from soelab import soe
from soelab import tinynet as tn
from soelab.env import rollout
from soelab.expert import N_FEATURES


@pytest.mark.parametrize("n,expected", [(2, [0, 1, 0, 1]), (3, [0, 0, 1, 0])])
def test_sigma_examples(n, expected):
    assert [soe.sigma(t, n) for t in range(4)] == expected


def test_sigma_large_tick():
    assert soe.sigma(10**6, 2) == 0


def test_sigma_rejects_bad_args():
    with pytest.raises(ValueError):
        soe.sigma(0, 1)
    with pytest.raises(ValueError):
        soe.sigma(-1, 2)


@given(st.integers(2, 50), st.integers(0, 10_000))
def test_sigma_matches_oracle(n, t):
    assert soe.sigma(t, n) == sigma_formula(t, n)


@given(st.integers(2, 40))
def test_sigma_periodic_one_switch_per_window(n):
    for t in range(10 * n + 1):
        assert soe.sigma(t + n, n) == soe.sigma(t, n)
    for k in range(10):
        assert sum(soe.sigma(t, n) for t in range(k * n, (k + 1) * n)) == 1


def test_sigma_cyclic_examples():
    assert [soe.sigma_cyclic(t, (1, 3, 2)) for t in range(4)] == [1, 3, 2, 1]
    assert soe.sigma_cyclic(7, (0, 2, 1)) == 2
    assert {soe.sigma_cyclic(t, (4,)) for t in range(9)} == {4}
    with pytest.raises(ValueError):
        soe.sigma_cyclic(0, ())


def test_schedule_spec_validation():
    with pytest.raises(ValueError):
        soe.ScheduleSpec(k=3, n=2)
    with pytest.raises(ValueError):
        soe.ScheduleSpec.periodic(1)
    with pytest.raises(ValueError):
        soe.ScheduleSpec(3, 1, soe.CYCLIC, (0, 0, 2))
    assert soe.ScheduleSpec.cyclic((2, 0, 1)).index(4) == 0


# -- dispatch -----------------------------------------------------------------

def _ck(seed, dims=(N_FEATURES, 16, 2)):
    return tn.Checkpoint(tn.init(dims, seed), seed, 1, 0.0)


STATS = (np.zeros(N_FEATURES), np.ones(N_FEATURES))


def test_dispatch_bit_equal_to_scheduled_member():
    a, b = _ck(1), _ck(2)
    pol = soe.SoEPolicy([a, b], soe.ScheduleSpec.periodic(3), *STATS)
    z = np.random.default_rng(0).normal(size=N_FEATURES)
    for t in range(12):
        owner = a if soe.sigma(t, 3) == 0 else b
        out = tn.forward(owner.network, z)
        act = soe.soe_act(pol, z, t)
        assert (act.accel_cmd, act.steer_cmd) == (float(out[0]), float(out[1]))


def test_duplicated_experts_equal_single():
    a = _ck(3)
    pol = soe.SoEPolicy([a, a], soe.ScheduleSpec.periodic(2), *STATS)
    z = np.random.default_rng(1).normal(size=N_FEATURES)
    ref = tn.forward(a.network, z)
    for t in range(6):
        act = soe.soe_act(pol, z, t)
        assert (act.accel_cmd, act.steer_cmd) == (float(ref[0]), float(ref[1]))


def test_dispatch_is_stateless():
    pol = soe.SoEPolicy([_ck(1), _ck(2)], soe.ScheduleSpec.periodic(2), *STATS)
    z = np.random.default_rng(2).normal(size=N_FEATURES)
    first = soe.soe_act(pol, z, 5)
    for t in range(20):
        soe.soe_act(pol, z * (t + 1), t)
    assert soe.soe_act(pol, z, 5) == first


@given(st.integers(2, 6), st.integers(0, 60))
def test_one_forward_per_tick(n, ticks):
    pol = soe.SoEPolicy([_ck(1), _ck(2)], soe.ScheduleSpec.periodic(n), *STATS)
    z = np.zeros(N_FEATURES)
    for t in range(ticks):
        before = sum(pol.forward_calls)
        soe.soe_act(pol, z, t)
        assert sum(pol.forward_calls) == before + 1
    assert pol.forward_calls[1] == sum(soe.sigma(t, n) for t in range(ticks))


def test_members_must_share_architecture():
    with pytest.raises(ValueError):
        soe.SoEPolicy([_ck(1), _ck(2, (N_FEATURES, 8, 2))], soe.ScheduleSpec.periodic(2), *STATS)
    with pytest.raises(ValueError):
        soe.SoEPolicy([_ck(1)], soe.ScheduleSpec.periodic(2), *STATS)


def test_rollout_records_schedule(toy):
    ms = pl.cross_run_model_set(toy.runs, "CL-NR")
    pol = soe.SoEPolicy(ms.members[:2], soe.ScheduleSpec.periodic(3), *toy.stats)
    log = rollout(pol, toy.val[0])
    assert list(log.plan_experts) == [soe.sigma(int(t), 3) for t in range(len(log.plan_experts))]
    assert sum(pol.forward_calls) == len(log.plan_ticks)


# -- matrices -----------------------------------------------------------------

@pytest.fixture(scope="module")
def matrix(toy):
    ms = pl.cross_run_model_set(toy.runs, "CL-NR")
    return ms, soe.enumerate_pairs(ms, 2, toy.val, "CL-NR", toy.stats)


def test_matrix_shape(matrix):
    _, mat = matrix
    assert mat.scores.shape == (4, 4)
    assert np.all((mat.scores >= 0) & (mat.scores <= 1))
    assert mat.m * mat.m - mat.m == 12


def test_diagonal_equals_single_expert(matrix, toy):
    ms, mat = matrix
    for i in range(4):
        assert mat.scores[i, i] == pl.cl_validate(ms.members[i], toy.val, "CL-NR", toy.stats)
        assert mat.scores[i, i] == ms.val_scores[i]


def test_identical_experts_give_flat_matrix(toy):
    ck = toy.runs[0].checkpoints[-1]
    ms = pl.ModelSet([ck] * 4, [0, 1, 2, 3], [1] * 4, pl.CROSS_RUN, "non_reactive")
    mat = soe.enumerate_pairs(ms, 2, toy.val[:6], "CL-NR", toy.stats)
    assert np.all(mat.scores == mat.scores[0, 0])


def test_enumerate_pairs_deterministic(matrix, toy):
    ms, mat = matrix
    again = soe.enumerate_pairs(ms, 2, toy.val, "CL-NR", toy.stats)
    np.testing.assert_array_equal(again.scores, mat.scores)


def test_matrix_roundtrip(matrix, tmp_path):
    _, mat = matrix
    csv_path, json_path = mat.save(tmp_path)
    assert csv_path.name == "matrix_val_CL-NR_n2.csv"
    back = soe.ScoreMatrix.load(json_path)
    np.testing.assert_array_equal(back.scores, mat.scores)
    rows = csv_path.read_text().strip().splitlines()
    assert len(rows) == 5 and all(len(r.split(",")) == 5 for r in rows)


def test_enumerate_needs_two_members(toy):
    ms = pl.ModelSet([toy.runs[0].checkpoints[0]], [0], [1], pl.CROSS_RUN, "non_reactive")
    with pytest.raises(ValueError):
        soe.enumerate_pairs(ms, 2, toy.val[:2], "CL-NR", toy.stats)


# -- selection ----------------------------------------------------------------

def test_cross_run_fixture_winner():
    assert soe.select_best_cell(np.array(CROSS_RUN_FIXTURE)) == (1, 3)
    assert np.array(CROSS_RUN_FIXTURE)[1, 3] == 91.14


def test_flat_matrix_selects_first_diagonal():
    assert soe.select_best_cell(np.full((4, 4), 0.5)) == (0, 0)


@given(st.lists(st.floats(0, 1), min_size=9, max_size=9))
def test_selection_dominates_diagonal(cells):
    arr = np.array(cells).reshape(3, 3)
    i, j = soe.select_best_cell(arr)
    assert arr[i, j] >= np.diag(arr).max()
    assert arr[i, j] == arr.max()


def test_select_best_soe_returns_policy(matrix, toy):
    ms, mat = matrix
    (i, j), pol = soe.select_best_soe(mat, ms, toy.stats)
    if i == j:
        assert isinstance(pol, pl.LearnedPolicy)
    else:
        assert isinstance(pol, soe.SoEPolicy) and pol.experts == [ms.members[i], ms.members[j]]


def test_cyclic_sequences_of_identical_members(toy):
    ck = toy.runs[1].checkpoints[-1]
    ms = pl.ModelSet([ck] * 4, [0, 1, 2, 3], [1] * 4, pl.CROSS_RUN, "non_reactive")
    res = soe.evaluate_sequences(ms, [(0, 1, 2), (2, 1, 0), (0, 0, 0)], toy.val[:5], "CL-NR", toy.stats)
    assert len(set(res.values())) == 1
    assert len(soe.cyclic_orders((0, 1, 2))) == 6
