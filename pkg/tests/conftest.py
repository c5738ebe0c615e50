import numpy as np
import pytest

from trajattack.core import AgentState, ControlSequence, Trajectory
from trajattack.dynamics import rollout
from trajattack.predictor import KinematicPredictor, PredictorConfig
from trajattack.scenario_io import generate_left_turn, sample_left_turn_params


def make_trajectory(points, dt=0.1, t0_index=0):
    return Trajectory(np.asarray(points, dtype=float), dt, t0_index=t0_index)


def straight_trajectory(n, v=5.0, dt=0.1, theta=0.0, start=(0.0, 0.0),
                        t0_index=0):
    """Constant-velocity rollout; controls are exactly zero."""
    s0 = AgentState(start[0], start[1], theta, v)
    controls = ControlSequence(np.zeros((n - 1, 2)), dt)
    traj = rollout(s0, controls)
    return Trajectory(traj.points, dt, t0_index=t0_index)


@pytest.fixture(scope="session")
def left_turn():
    params = sample_left_turn_params(np.random.default_rng(11), preset="default")
    return generate_left_turn(params, seed=11)


@pytest.fixture(scope="session")
def predictor():
    return KinematicPredictor(PredictorConfig())


@pytest.fixture(scope="session")
def small_predictor():
    """Few samples, zero noise: predictions equal the nominal extrapolation."""
    return KinematicPredictor(PredictorConfig(n_samples=3, noise_scale_a=0.0,
                                              noise_scale_kappa=0.0))
