import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import (
    HORIZON,
    NONRENEWABLE_POOL_ROW,
    NONRENEWABLE_STARTS,
    REFERENCE_QE_NONRENEWABLE,
    REFERENCE_QE_RENEWABLE,
    RENEWABLE_POOL_ROW,
    RENEWABLE_STARTS,
)
from generators import networks
from hfsched.model import FINISH, Activity, InfeasibleError, OperandKind, ProjectNetwork, default_horizon
from hfsched.program import build_hfnmcf, build_rcpsp, evaluate, start_assignment
from hfsched.simulate import (
    ConsistencyError,
    FiringSchedule,
    ScheduleViolation,
    check_schedule,
    per_period_usage,
    reconstruct_transition_marking,
    simulate,
    simulate_batch,
)
from hfsched.transform import build_operand_net


def _run(net, starts, K=HORIZON):
    onet = build_operand_net(net)
    return simulate(onet, FiringSchedule.from_activity_starts(onet, starts), K)


class TestExampleTrajectories:
    def test_renewable_pool_row(self, renewable_net):
        traj = _run(renewable_net, RENEWABLE_STARTS)
        assert traj.place_row("pool:R1").tolist() == RENEWABLE_POOL_ROW
        assert traj.starts()[FINISH] == 16

    def test_nonrenewable_pool_row(self, nonrenewable_net):
        traj = _run(nonrenewable_net, NONRENEWABLE_STARTS)
        assert traj.place_row("pool:R1").tolist() == NONRENEWABLE_POOL_ROW
        assert traj.starts()[FINISH] == 14

    def test_ongoing_matrix_renewable(self, renewable_net):
        # the reference matrix is shown one column to the right of the recurrence
        traj = _run(renewable_net, RENEWABLE_STARTS)
        assert traj.q_e.shape == (9, 19)
        assert traj.q_e[:, 0].sum() == 0
        assert traj.ongoing.tolist() == [row[:HORIZON] for row in REFERENCE_QE_RENEWABLE]

    def test_ongoing_matrix_nonrenewable(self, nonrenewable_net):
        traj = _run(nonrenewable_net, NONRENEWABLE_STARTS)
        assert traj.ongoing.tolist() == [row[:HORIZON] for row in REFERENCE_QE_NONRENEWABLE]
        e = traj.net.transition_index("E")
        assert np.flatnonzero(traj.ongoing[e]).tolist() == list(range(5, 13))

    def test_usage_matches_table_footers(self, renewable_net):
        from conftest import TABLE1_CUMULATIVE, TABLE1_PER_PERIOD

        traj = _run(renewable_net, RENEWABLE_STARTS)
        per, cum = per_period_usage(traj).row("R1")
        assert [0] + per[:15] == TABLE1_PER_PERIOD
        assert [0] + cum[:15] == TABLE1_CUMULATIVE

    def test_early_start_of_c_overdraws_pool(self, renewable_net):
        starts = dict(RENEWABLE_STARTS, C=3)
        onet = build_operand_net(renewable_net)
        v = check_schedule(onet, FiringSchedule.from_activity_starts(onet, starts), HORIZON)
        # B and C both start at step 3 while D still holds 4 units: 3 + 4 + 4 = 11 > 8
        assert v.reason == "negative-marking" and v.place == "pool:R1" and v.step == 3
        assert v.deficit == 3

    def test_precedence_violation_is_completion_place(self, relaxed_net):
        onet = build_operand_net(relaxed_net)
        v = check_schedule(onet, FiringSchedule.from_activity_starts(onet, dict(RENEWABLE_STARTS, E=6)), HORIZON)
        assert v.place == "done:C" and v.step == 6

    def test_horizon_and_unscheduled(self, renewable_net):
        onet = build_operand_net(renewable_net)
        v = check_schedule(onet, FiringSchedule.from_activity_starts(onet, dict(RENEWABLE_STARTS, H=17)), HORIZON)
        assert v.reason == "horizon" and v.transition == "H"
        partial = {a: k for a, k in RENEWABLE_STARTS.items() if a != "H"}
        v = check_schedule(onet, FiringSchedule(partial), HORIZON)
        assert v.reason == "unscheduled" and v.transition == "H"
        # the finish waits on the token H would have produced
        v = check_schedule(onet, FiringSchedule(dict(partial, **{FINISH: 16})), HORIZON)
        assert (v.reason, v.place, v.step) == ("negative-marking", "done:H", 16)
        with pytest.raises(ScheduleViolation):
            simulate(onet, FiringSchedule(partial), HORIZON)
        assert check_schedule(onet, FiringSchedule(partial), HORIZON, partial=True) is None


class TestEdgeCases:
    def test_all_dummy_project(self):
        net = ProjectNetwork((Activity("A", 0), Activity("B", 0)), (("A", "B"),))
        traj = _run(net, {"A": 1, "B": 1}, K=1)
        assert traj.starts() == {"A": 1, "B": 1, FINISH: 1}
        assert traj.q_s[:, -1].tolist() == [0, 0, 0]
        assert not traj.q_e.any()

    def test_empty_project(self):
        traj = _run(ProjectNetwork(()), {}, K=1)
        assert traj.q_s.tolist() == [[1, 0]]

    def test_reconstruction_rejects_completion_before_start(self):
        with pytest.raises(ConsistencyError):
            reconstruct_transition_marking(np.array([[0, 1]]), np.array([[1, 0]]))
        with pytest.raises(ConsistencyError):
            reconstruct_transition_marking(np.zeros((1, 2)), np.zeros((1, 3)))


def _raw_markings(onet, starts, K):
    """Unchecked recurrence, used to feed programs with infeasible states."""
    um, up = FiringSchedule(starts).firing_matrices(onet, K + 1)
    um, up = um[:, :K], up[:, :K]
    q = np.zeros((onet.n_places, K + 1), dtype=np.int64)
    q[:, 0] = onet.initial_marking
    for c in range(K):
        q[:, c + 1] = q[:, c] + onet.m_plus @ up[:, c] - onet.m_minus @ um[:, c]
    return q, um, up


def _random_starts(rng, net, K):
    starts = {a.id: rng.randint(1, max(1, K - a.duration)) for a in net.activities}
    starts[FINISH] = rng.randint(1, K)
    return starts


@settings(max_examples=60, deadline=None)
@given(networks(max_activities=5), st.integers(0, 2**32 - 1))
def test_invariants_on_feasible_runs(net, seed):
    from sgs import serial_schedule

    starts = serial_schedule(net, random.Random(seed))
    onet = build_operand_net(net)
    K = default_horizon(net)
    traj = simulate(onet, FiringSchedule(starts), K)
    # every transition fires exactly once and completes exactly once
    assert (traj.u_minus.sum(axis=1) == 1).all() and (traj.u_plus.sum(axis=1) == 1).all()
    # not started, ongoing and done are mutually exclusive and exhaustive
    started = np.cumsum(traj.u_minus, axis=1)
    done = np.cumsum(traj.u_plus, axis=1)
    ongoing = traj.ongoing
    assert ((1 - started) + ongoing + done == 1).all()
    # renewable units are either in the pool or held by an ongoing activity
    for n, pid in enumerate(onet.pool_ids):
        row = 1 + n
        if onet.pool_kinds[n] is OperandKind.RENEWABLE:
            held = onet.m_minus[row] @ ongoing
            assert (traj.q_s[row, 1:] + held == onet.initial_marking[row]).all()
    # state equation over the whole horizon
    net_change = onet.m_plus @ traj.u_plus.sum(axis=1) - onet.m_minus @ traj.u_minus.sum(axis=1)
    assert np.array_equal(traj.q_s[:, K], onet.initial_marking + net_change)


@settings(max_examples=150, deadline=None)
@given(networks(max_activities=4, max_duration=2), st.integers(0, 2**32 - 1))
def test_simulator_agrees_with_both_programs(net, seed):
    rng = random.Random(seed)
    K = default_horizon(net)
    onet = build_operand_net(net)
    try:
        rcpsp = build_rcpsp(net)
        hfn = build_hfnmcf(onet, K)
    except InfeasibleError:
        # too little stock: the simulator must reject every schedule
        for _ in range(10):
            assert check_schedule(onet, FiringSchedule(_random_starts(rng, net, K)), K) is not None
        return
    for _ in range(10):
        starts = _random_starts(rng, net, K)
        ok = check_schedule(onet, FiringSchedule(starts), K) is None
        assert ok == evaluate(rcpsp, start_assignment(rcpsp, starts)).feasible
        q, um, up = _raw_markings(onet, starts, K)
        assign = {}
        for p, place in enumerate(onet.places):
            for k in range(1, K + 2):
                assign[hfn.name_of("qs", place, k)] = int(q[p, k - 1])
        for t, tr in enumerate(onet.transitions):
            for k in range(1, K + 1):
                assign[hfn.name_of("um", tr, k)] = int(um[t, k - 1])
                assign[hfn.name_of("up", tr, k)] = int(up[t, k - 1])
        assert ok == evaluate(hfn, assign).feasible
        batch = simulate_batch(onet, np.array([[starts[t] for t in onet.transitions]]), K)
        assert ok == bool(batch[0])
