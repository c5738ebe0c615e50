"""Trajectory predictors and their registry.

The built-in surrogate is a sampling-based kinematic extrapolator: it
inverts the observed past to controls, estimates a nominal (a, kappa)
as the mean over the last few control steps, perturbs that nominal with
K fixed Gaussian offsets (clipped at three sigma, so sampled controls
stay dynamically plausible), and rolls each sample forward from the
state at the prediction point.  The offsets are constants of the
computation, so gradients flow through the observed positions only and
the prediction is differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigError, DataError, PredictionSet, PredictorError, Trajectory
from .dynamics import extract_xy, step_xy


@dataclass(frozen=True)
class PredictorConfig:
    """Sampling parameters of the kinematic surrogate.

    n_samples is the sample count K; noise scales are the standard
    deviations of the control offsets (m/s^2 and 1/m); smoothing_window
    is the number of trailing control steps averaged into the nominal
    control.
    """

    n_samples: int = 100
    noise_scale_a: float = 0.5
    noise_scale_kappa: float = 0.01
    smoothing_window: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.noise_scale_a < 0.0 or self.noise_scale_kappa < 0.0:
            raise ConfigError("noise scales must be >= 0")
        if self.smoothing_window < 2:
            raise ConfigError(f"smoothing_window must be >= 2, got {self.smoothing_window}")


class KinematicPredictor:
    """Constant-control extrapolation with sampled control offsets."""

    name = "kinematic"
    supports_gradients = True

    def __init__(self, config=None):
        self.config = config or PredictorConfig()
        rng = np.random.default_rng(self.config.seed)
        eps = np.clip(rng.standard_normal((self.config.n_samples, 2)), -3.0, 3.0)
        self._offset_a = eps[:, 0] * self.config.noise_scale_a
        self._offset_kappa = eps[:, 1] * self.config.noise_scale_kappa
        self._offset_a.setflags(write=False)
        self._offset_kappa.setflags(write=False)

    def predict_xy(self, xs, ys, dt, horizon):
        """Sampled future positions from raw past coordinates.

        Coordinates may be floats or tape nodes.  Returns a list of
        (x, y) pairs per future step, each holding all K samples.
        """
        if horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {horizon}")
        if len(xs) < 3:
            raise DataError("prediction needs at least 3 past points")
        _, accels, kappas, (x, y, th, v) = extract_xy(xs, ys, dt)
        w = min(self.config.smoothing_window, len(accels))
        a_star = accels[-w]
        k_star = kappas[-w]
        for i in range(len(accels) - w + 1, len(accels)):
            a_star = a_star + accels[i]
            k_star = k_star + kappas[i]
        a_star = a_star / w
        k_star = k_star / w
        a_k = a_star + self._offset_a       # (K,)
        k_k = k_star + self._offset_kappa   # (K,)
        out = []
        for _ in range(horizon):
            x, y, th, v = step_xy(x, y, th, v, a_k, k_k, dt)
            out.append((x, y))
        return out

    def predict(self, past_target, past_ego=None, *, horizon):
        """Predict a PredictionSet for the target from its observed past.

        past_ego is accepted for interface parity and ignored by this
        surrogate.  Deterministic: same inputs and seed give bitwise
        identical samples.
        """
        del past_ego
        steps = self.predict_xy(past_target.points[:, 0].tolist(),
                                past_target.points[:, 1].tolist(),
                                past_target.dt, horizon)
        k = self.config.n_samples
        samples = np.empty((k, horizon, 2))
        for t, (x, y) in enumerate(steps):
            samples[:, t, 0] = x
            samples[:, t, 1] = y
        return PredictionSet(samples, past_target.dt)


class FiniteDiffKinematicPredictor(KinematicPredictor):
    """The same surrogate exposed without gradient support.

    Attacks that receive it fall back to finite-difference gradients of
    the whole loss; exists to exercise and test that fallback.
    """

    name = "kinematic-fd"
    supports_gradients = False

    def predict_xy(self, xs, ys, dt, horizon):
        for c in xs:
            if not isinstance(c, float):
                raise PredictorError(f"{self.name} cannot record gradients")
        return super().predict_xy(xs, ys, dt, horizon)


REGISTRY = {
    KinematicPredictor.name: KinematicPredictor,
    FiniteDiffKinematicPredictor.name: FiniteDiffKinematicPredictor,
}


def get_predictor(name, config=None):
    """Instantiate a registered predictor by name."""
    try:
        cls = REGISTRY[name]
    except KeyError:
        raise ConfigError(
            f"unknown predictor {name!r}; registered: {sorted(REGISTRY)}") from None
    return cls(config)


def check_deterministic(predictor, past_target, past_ego, horizon):
    """Call the predictor twice and require bitwise identical output."""
    first = predictor.predict(past_target, past_ego, horizon=horizon)
    second = predictor.predict(past_target, past_ego, horizon=horizon)
    if not np.array_equal(first.samples, second.samples):
        raise PredictorError(f"predictor {predictor.name!r} is not deterministic")
    return first


def predict_mean(pred):
    """Pointwise mean trajectory of a prediction set (future indices 1..T)."""
    return Trajectory(pred.samples.mean(axis=0), pred.dt, t0_index=1)
