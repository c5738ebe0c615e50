"""Forward kinematics, control extraction, and their roundtrip."""

import math

import numpy as np
import pytest

from conftest import make_trajectory
from trajattack.core import AgentState, ControlInput, ControlSequence
from trajattack.dynamics import (direction_of_travel, extract_controls,
                                 extract_initial_state, joint_rollout,
                                 phi_forward, rollout)


def random_rollout(rng, n=None, v_lo=-5.0, v_hi=15.0, a_bound=4.0,
                   k_bound=0.2, dt=0.1):
    if n is None:
        n = int(rng.integers(2, 25))
    s0 = AgentState(float(rng.uniform(-10, 10)), float(rng.uniform(-10, 10)),
                    float(rng.uniform(-math.pi, math.pi)),
                    float(rng.uniform(v_lo, v_hi)))
    inputs = np.column_stack([rng.uniform(-a_bound, a_bound, n - 1),
                              rng.uniform(-k_bound, k_bound, n - 1)])
    return s0, ControlSequence(inputs, dt)


class TestPhiForward:
    def test_zero_control_straight(self):
        s = phi_forward(AgentState(0, 0, 0, 1), ControlInput(0, 0), 0.1)
        assert (s.x, s.y, s.theta, s.v) == (0.1, 0.0, 0.0, 1.0)

    def test_acceleration(self):
        s = phi_forward(AgentState(0, 0, 0, 2), ControlInput(2, 0), 0.1)
        assert math.isclose(s.v, 2.2, abs_tol=1e-15)
        assert math.isclose(s.x, 0.22, abs_tol=1e-15)
        assert s.y == 0.0 and s.theta == 0.0

    def test_quarter_turn_in_one_step(self):
        s = phi_forward(AgentState(0, 0, 0, 1), ControlInput(0, 5 * math.pi), 0.1)
        assert math.isclose(s.theta, math.pi / 2, abs_tol=1e-12)
        assert abs(s.x) < 1e-12
        assert math.isclose(s.y, 0.1, abs_tol=1e-12)

    def test_direction_follows_speed_sign(self):
        fwd = phi_forward(AgentState(0, 0, 0, 1), ControlInput(0, 0), 0.1)
        rev = phi_forward(AgentState(0, 0, 0, 1), ControlInput(-30, 0), 0.1)
        assert fwd.direction == 1
        assert rev.v < 0 and rev.direction == -1

    def test_zero_speed_keeps_direction(self):
        stopped = phi_forward(AgentState(0, 0, 0, 1, direction=-1),
                              ControlInput(-10, 0), 0.1)
        assert stopped.v == 0.0
        assert stopped.direction == -1


class TestExtractInitialState:
    def test_speed_and_heading(self):
        s = extract_initial_state((0.0, 0.0), (0.3, 0.4), 0.1)
        assert math.isclose(s.v, 5.0, abs_tol=1e-12)
        assert math.isclose(s.theta, math.atan2(4.0, 3.0), abs_tol=1e-12)
        assert (s.x, s.y) == (0.0, 0.0)

    def test_stationary(self):
        s = extract_initial_state((0.0, 0.0), (0.0, 0.0), 0.1)
        assert s.v == 0.0 and s.theta == 0.0

    def test_backward_motion_encoded_in_heading(self):
        s = extract_initial_state((0.0, 0.0), (-0.1, 0.0), 0.1)
        assert math.isclose(s.v, 1.0, abs_tol=1e-12)
        assert math.isclose(s.theta, math.pi, abs_tol=1e-12)
        assert s.direction == 1


class TestDirectionOfTravel:
    def test_aligned_forward(self):
        assert direction_of_travel(1.0, 0.0, AgentState(0, 0, 0, 1)) == 1

    def test_opposed(self):
        assert direction_of_travel(-0.5, 0.0, AgentState(0, 0, 0, 1)) == -1

    def test_reversal_to_forward_flips_flag(self):
        # backing up (v < 0) and then moving along the heading again: the
        # flag is absolute, so the aligned displacement reads as forward
        s = AgentState(0, 0, math.pi / 2, -2.0)
        assert direction_of_travel(0.0, 1.0, s) == 1

    def test_sustained_reversal_keeps_flag(self):
        s = AgentState(0, 0, math.pi / 2, -2.0)
        assert direction_of_travel(0.0, -1.0, s) == -1

    def test_zero_velocity_uses_speed_sign(self):
        assert direction_of_travel(0.0, 0.0, AgentState(0, 0, 0, 0)) == 1


class TestExtractControls:
    def test_uniform_straight(self):
        traj = make_trajectory([(0, 0), (0.1, 0), (0.2, 0)])
        s0, seq = extract_controls(traj)
        assert math.isclose(s0.v, 1.0, abs_tol=1e-12)
        assert s0.theta == 0.0
        np.testing.assert_allclose(seq.inputs, 0.0, atol=1e-12)

    def test_first_control_is_zero_by_convention(self):
        traj = make_trajectory([(0, 0), (0.1, 0), (0.25, 0), (0.45, 0)])
        _, seq = extract_controls(traj)
        assert seq.a[0] == 0.0 and seq.kappa[0] == 0.0
        assert seq.a[1] > 0.0

    def test_reversal_fixture(self):
        traj = make_trajectory([(0.0, 0.0), (0.1, 0.0), (0.05, 0.0)])
        _, seq = extract_controls(traj)
        np.testing.assert_allclose(seq.a, [0.0, -15.0], atol=1e-9)
        np.testing.assert_allclose(seq.kappa, [0.0, 0.0], atol=1e-9)

    def test_reversal_never_inflates_curvature(self):
        rng = np.random.default_rng(5)
        found = 0
        while found < 50:
            s0, seq = random_rollout(rng, n=12, v_lo=1.0, v_hi=6.0)
            inputs = seq.inputs.copy()
            inputs[:, 0] = rng.uniform(-8.0, -3.0, len(inputs))
            traj = rollout(s0, ControlSequence(inputs, seq.dt))
            _, back = extract_controls(traj)
            speeds = np.array([s0.v + inputs[: t + 1, 0].sum() * seq.dt
                               for t in range(len(inputs))])
            if not (speeds[:-1] * speeds[1:] < 0).any():
                continue
            found += 1
            assert np.abs(back.kappa).max() <= 0.2 + 1e-9


class TestRollout:
    def test_straight_line(self):
        traj = rollout(AgentState(0, 0, 0, 1), ControlSequence(np.zeros((5, 2)), 0.1))
        np.testing.assert_allclose(traj.points[:, 0],
                                   [0.0, 0.1, 0.2, 0.3, 0.4, 0.5], atol=1e-15)
        np.testing.assert_allclose(traj.points[:, 1], 0.0, atol=1e-15)

    def test_from_rest(self):
        inputs = np.array([[1.0, 0.0]] * 3)
        traj = rollout(AgentState(0, 0, 0, 0), ControlSequence(inputs, 0.1))
        np.testing.assert_allclose(traj.points[:, 0], [0.0, 0.01, 0.03, 0.06],
                                   atol=1e-15)

    def test_speed_consistency(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            s0, seq = random_rollout(rng)
            traj = rollout(s0, seq)
            steps = np.linalg.norm(np.diff(traj.points, axis=0), axis=1)
            v = s0.v + np.cumsum(seq.a) * seq.dt
            np.testing.assert_allclose(steps, np.abs(v) * seq.dt, atol=1e-12)

    def test_roundtrip(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            s0, seq = random_rollout(rng)
            traj = rollout(s0, seq)
            s0e, back = extract_controls(traj)
            again = rollout(s0e, back)
            err = np.abs(again.points - traj.points).max()
            assert err < 1e-6


class TestJointRollout:
    def test_zero_perturbation_identity(self, left_turn):
        past = left_turn.target_past
        future = left_turn.target_future
        all_pts = np.vstack([past.points, future.points])
        s0, seq = extract_controls(make_trajectory(all_pts, dt=past.dt))
        u = ControlSequence(seq.inputs[: len(past) - 1], past.dt)
        v = ControlSequence(seq.inputs[len(past) - 1:], past.dt)
        xs, ys = joint_rollout(s0, u, v)
        assert np.abs(xs.points - past.points).max() < 1e-6
        assert np.abs(ys.points - future.points).max() < 1e-6

    def test_last_past_control_moves_every_future_point(self):
        s0 = AgentState(0, 0, 0, 5.0)
        u = ControlSequence(np.zeros((11, 2)), 0.1)
        v = ControlSequence(np.zeros((12, 2)), 0.1)
        _, y_ref = joint_rollout(s0, u, v)
        bumped = u.inputs.copy()
        bumped[-1, 0] = 1.0
        _, y_new = joint_rollout(s0, ControlSequence(bumped, 0.1), v)
        moved = np.linalg.norm(y_new.points - y_ref.points, axis=1)
        assert (moved > 1e-9).all()

    def test_future_controls_leave_past_untouched(self):
        s0 = AgentState(0, 0, 0.2, 5.0)
        u = ControlSequence(np.full((11, 2), 0.01), 0.1)
        v = ControlSequence(np.zeros((12, 2)), 0.1)
        x_ref, _ = joint_rollout(s0, u, v)
        bumped = v.inputs.copy()
        bumped[:, 0] = 2.0
        x_new, _ = joint_rollout(s0, u, ControlSequence(bumped, 0.1))
        assert np.array_equal(x_ref.points, x_new.points)

    def test_future_starts_at_index_one(self):
        s0 = AgentState(0, 0, 0, 1.0)
        u = ControlSequence(np.zeros((3, 2)), 0.1)
        v = ControlSequence(np.zeros((4, 2)), 0.1)
        xs, ys = joint_rollout(s0, u, v)
        assert len(xs) == 4 and len(ys) == 4
        assert ys.t0_index == 1
        assert math.isclose(ys.points[0, 0], xs.points[-1, 0] + 0.1,
                            abs_tol=1e-12)


@pytest.mark.parametrize("v0", [-5.0, -0.5, 0.0])
def test_roundtrip_with_backward_initial_motion(v0):
    rng = np.random.default_rng(abs(hash(v0)) % 2**32)
    s0 = AgentState(1.0, -2.0, 0.7, v0)
    inputs = np.column_stack([rng.uniform(-4, 4, 10), rng.uniform(-0.2, 0.2, 10)])
    traj = rollout(s0, ControlSequence(inputs, 0.1))
    s0e, back = extract_controls(traj)
    again = rollout(s0e, back)
    assert np.abs(again.points - traj.points).max() < 1e-6
