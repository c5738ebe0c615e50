"""Projected gradient descent over control perturbations.

The decision variable is one additive perturbation per control step of
the target's past and future (columns a, kappa).  Each iteration records
the total loss on the gradient tape at the current iterate, takes a
gradient step with a geometrically decaying step size, projects onto the
per-step control box, and then enforces the trajectory barriers by
construction: while any constrained distance of the candidate reaches
d_max, the step is halved in place (the decay sequence itself is not
affected); if the halving budget runs out, the iterate stays put.

The control box combines relative bounds around the unperturbed control
with absolute bounds (dataset acceleration range, curvature magnitude).
Boxes are fixed by the unperturbed controls, so projection is an exact
per-component clamp.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .barriers import BarrierConfig, barrier_traj, constraint_distances, observed_barrier
from .core import ConfigError, ControlSequence, Perturbation, Trajectory
from .dynamics import extract_controls, extract_xy, step_xy
from .gradtape import Var, grad, value
from .objectives import (OBJECTIVES, ade_xy, collision_fn_xy, collision_fp_xy,
                         compose_total_loss, fde_xy)
from .predictor import check_deterministic

# Central-difference step for the gradient-free predictor fallback.
FD_STEP = 1e-6


@dataclass(frozen=True)
class AttackConfig:
    """Attack objective, constraint configuration, and PGD hyperparameters.

    Relative bounds limit each perturbation entry; absolute bounds limit
    the perturbed control itself (acceleration against the dataset range
    a_min..a_max, curvature against +-abs_bound_kappa).  Iteration m
    (0-based) uses step size alpha0 * gamma**m.
    """

    objective: str = "ade"
    barrier: BarrierConfig = field(default_factory=BarrierConfig)
    alpha0: float = 0.01
    gamma: float = 0.99
    max_iterations: int = 100
    rel_bound_a: float = 2.0          # m/s^2
    rel_bound_kappa: float = 0.05     # 1/m
    abs_bound_kappa: float = 0.2      # 1/m
    a_min: float = -9.81              # m/s^2
    a_max: float = 9.81               # m/s^2
    max_halvings: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective {self.objective!r} not in {OBJECTIVES}")
        if not (self.alpha0 > 0.0):
            raise ConfigError(f"alpha0 must be positive, got {self.alpha0}")
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.max_iterations < 0:
            raise ConfigError(f"max_iterations must be >= 0, got {self.max_iterations}")
        if self.rel_bound_a <= 0.0 or self.rel_bound_kappa <= 0.0 or self.abs_bound_kappa <= 0.0:
            raise ConfigError("perturbation bounds must be positive")
        if self.a_min > self.a_max:
            raise ConfigError(f"a_min {self.a_min} > a_max {self.a_max}")
        if self.max_halvings < 0:
            raise ConfigError(f"max_halvings must be >= 0, got {self.max_halvings}")


@dataclass(frozen=True)
class AttackResult:
    """Perturbed trajectories, controls, predictions, and run statistics."""

    x_pert: Trajectory
    y_pert: Trajectory
    u_pert: ControlSequence
    v_pert: ControlSequence
    pred_pert: object
    pred_clean: object
    loss_trace: tuple
    halving_events: int
    iterations_run: int
    diagnostics: dict


def control_box(controls, cfg):
    """Per-entry clamp bounds (lo, hi) for a perturbation of these controls.

    An empty box (unperturbed control already outside the absolute range
    by more than the relative bound) collapses to its midpoint; the second
    return value flags such entries.
    """
    a = controls.a
    k = controls.kappa
    lo = np.column_stack([
        np.maximum(-cfg.rel_bound_a, cfg.a_min - a),
        np.maximum(-cfg.rel_bound_kappa, -cfg.abs_bound_kappa - k),
    ])
    hi = np.column_stack([
        np.minimum(cfg.rel_bound_a, cfg.a_max - a),
        np.minimum(cfg.rel_bound_kappa, cfg.abs_bound_kappa - k),
    ])
    empty = lo > hi
    if empty.any():
        mid = 0.5 * (lo + hi)
        lo = np.where(empty, mid, lo)
        hi = np.where(empty, mid, hi)
    return lo, hi, empty


def project_box(controls, delta, cfg):
    """Euclidean projection of a Perturbation onto the control box."""
    lo, hi, _ = control_box(controls, cfg)
    return Perturbation(np.clip(delta.delta, lo, hi))


def dataset_accel_bounds(trajectories):
    """Lowest and highest acceleration recovered from a set of trajectories."""
    if not trajectories:
        raise ConfigError("dataset_accel_bounds: empty trajectory set")
    a_min = np.inf
    a_max = -np.inf
    for traj in trajectories:
        _, seq = extract_controls(traj)
        a_min = min(a_min, seq.a.min())
        a_max = max(a_max, seq.a.max())
    return float(a_min), float(a_max)


@dataclass
class PGDState:
    """Mutable loop state threaded through pgd_iteration."""

    delta: np.ndarray
    alpha: float
    halving_events: int = 0
    rejections: int = 0
    max_accepted_distance: float = 0.0
    max_box_excess: float = 0.0


def pgd_iteration(problem, state):
    """One PGD step; returns (next state, loss at the incoming iterate)."""
    loss, g = problem.loss_and_grad(state.delta)
    step = state.alpha
    halvings = 0
    accepted = None
    seen = 0.0
    while True:
        cand = np.clip(state.delta - step * g, problem.lo, problem.hi)
        ok, seen = problem.feasibility(cand)
        if ok:
            accepted = cand
            break
        if halvings >= problem.max_halvings:
            break
        step *= 0.5
        halvings += 1
    if accepted is None:
        new_delta = state.delta
        rejections = state.rejections + 1
        max_dist = state.max_accepted_distance
    else:
        new_delta = accepted
        rejections = state.rejections
        max_dist = max(state.max_accepted_distance, seen)
    excess = max(0.0, float(np.max(np.maximum(new_delta - problem.hi, problem.lo - new_delta))))
    return replace(
        state,
        delta=new_delta,
        alpha=state.alpha * problem.gamma,
        halving_events=state.halving_events + halvings,
        rejections=rejections,
        max_accepted_distance=max_dist,
        max_box_excess=max(state.max_box_excess, excess),
    ), loss


class AttackProblem:
    """Loss, gradient, box, and feasibility oracle for one scenario."""

    def __init__(self, scenario, cfg, predictor):
        self.cfg = cfg
        self.predictor = predictor
        self.dt = scenario.dt
        self.horizon_future = scenario.horizon_future
        tp = scenario.target_past
        tf = scenario.target_future
        xs = np.concatenate([tp.points[:, 0], tf.points[:, 0]]).tolist()
        ys = np.concatenate([tp.points[:, 1], tf.points[:, 1]]).tolist()
        (x0, y0, th0, v0), accels, kappas, _ = extract_xy(xs, ys, self.dt)
        self.s0 = (x0, y0, th0, v0)
        n_past = len(tp) - 1
        self.u_ref = ControlSequence(
            np.column_stack([accels[:n_past], kappas[:n_past]]), self.dt)
        self.v_ref = ControlSequence(
            np.column_stack([accels[n_past:], kappas[n_past:]]), self.dt)
        self.ego_pts = [(float(x), float(y)) for x, y in scenario.ego_future.points]
        self.y_ref_pts = [(float(x), float(y)) for x, y in tf.points]
        joint = np.vstack([self.u_ref.inputs, self.v_ref.inputs])
        seq = ControlSequence(joint, self.dt)
        self.lo, self.hi, empty = control_box(seq, cfg)
        self.empty_box_entries = int(empty.sum())
        self.ref_controls = joint
        # Barrier distances are measured against the re-rolled reference, not
        # the stored points.  The two agree to roundoff, but only the rolled
        # reference is bitwise equal to the delta = 0 rollout; that puts the
        # initial iterate exactly at the distance cone's apex, where the norm
        # gradient is the zero subgradient instead of roundoff-direction noise.
        self.x_ref, self.y_ref = self.positions(np.zeros_like(joint))
        self.max_halvings = cfg.max_halvings
        self.gamma = cfg.gamma
        self.pred_clean = check_deterministic(
            predictor, tp, scenario.ego_past, scenario.horizon_future)
        self.clean_mean = [(float(x), float(y))
                           for x, y in self.pred_clean.samples.mean(axis=0)]

    @property
    def n_controls(self):
        return len(self.ref_controls)

    def _roll_all(self, controls):
        """Past and future position lists; entries may be floats or tape nodes."""
        x, y, th, v = self.s0
        pts = [(x, y)]
        for a_t, k_t in controls:
            x, y, th, v = step_xy(x, y, th, v, a_t, k_t, self.dt)
            pts.append((x, y))
        n_past = len(self.u_ref)
        return pts[:n_past + 1], pts[n_past + 1:]

    def eval_loss(self, flat):
        """Total loss for a flat [a0, k0, a1, k1, ...] perturbation sequence."""
        cfg = self.cfg
        ref = self.ref_controls
        controls = [(float(ref[i, 0]) + flat[2 * i], float(ref[i, 1]) + flat[2 * i + 1])
                    for i in range(len(ref))]
        past, fut = self._roll_all(controls)
        pred_xy = self.predictor.predict_xy(
            [p[0] for p in past], [p[1] for p in past], self.dt, self.horizon_future)
        name = cfg.objective
        if name == "ade":
            objective = ade_xy(pred_xy, self.y_ref_pts)
        elif name == "fde":
            objective = fde_xy(pred_xy, self.y_ref_pts)
        elif name == "collision_fp":
            objective = collision_fp_xy(pred_xy, self.ego_pts)
        elif name == "collision_fn":
            objective = collision_fn_xy(fut, pred_xy, self.ego_pts, self.clean_mean)
        else:
            raise ConfigError(f"unknown objective {name!r}")
        terms = [observed_barrier(cfg.barrier.observed_mode, past, self.x_ref,
                                  cfg.barrier.d_max)]
        if cfg.barrier.future_mode == "traj":
            terms.append(barrier_traj(fut, self.y_ref, cfg.barrier.d_max))
        return compose_total_loss(objective, terms)

    def loss_and_grad(self, delta):
        if self.predictor.supports_gradients:
            leaves = [Var(float(v)) for v in delta.ravel()]
            loss = self.eval_loss(leaves)
            g = np.array(grad(loss, leaves)).reshape(delta.shape)
            return float(value(loss)), g
        flat = [float(v) for v in delta.ravel()]
        loss = float(value(self.eval_loss(flat)))
        g = np.empty(len(flat))
        for i in range(len(flat)):
            up = list(flat)
            dn = list(flat)
            up[i] += FD_STEP
            dn[i] -= FD_STEP
            g[i] = (float(value(self.eval_loss(up)))
                    - float(value(self.eval_loss(dn)))) / (2.0 * FD_STEP)
        return loss, g.reshape(delta.shape)

    def positions(self, delta):
        """Perturbed past/future positions as arrays, for checks and results."""
        controls = self.ref_controls + delta
        x, y, th, v = self.s0
        past = np.empty((len(self.u_ref) + 1, 2))
        past[0] = x, y
        fut = np.empty((len(self.v_ref), 2))
        n_past = len(self.u_ref)
        for i in range(len(controls)):
            x, y, th, v = step_xy(x, y, th, v, controls[i, 0], controls[i, 1], self.dt)
            if i < n_past:
                past[i + 1] = x, y
            else:
                fut[i - n_past] = x, y
        return past, fut

    def feasibility(self, delta):
        """(all constrained distances < d_max, largest distance seen)."""
        past, fut = self.positions(delta)
        cfg = self.cfg.barrier
        dists = constraint_distances(past, self.x_ref, cfg.observed_mode)
        worst = float(dists.max()) if len(dists) else 0.0
        if cfg.future_mode != "none":
            fdists = constraint_distances(fut, self.y_ref, cfg.future_mode)
            if len(fdists):
                worst = max(worst, float(fdists.max()))
        return worst < cfg.d_max, worst


def run_attack(scenario, cfg, predictor):
    """Attack one scenario; returns the perturbed artifacts and statistics."""
    problem = AttackProblem(scenario, cfg, predictor)
    state = PGDState(delta=np.zeros((problem.n_controls, 2)), alpha=cfg.alpha0)
    trace = []
    for _ in range(cfg.max_iterations):
        state, loss = pgd_iteration(problem, state)
        trace.append(loss)
    past, fut = problem.positions(state.delta)
    n_past = len(problem.u_ref)
    x_pert = Trajectory(past, scenario.dt, t0_index=-n_past)
    y_pert = Trajectory(fut, scenario.dt, t0_index=1)
    u_pert = ControlSequence(problem.u_ref.inputs + state.delta[:n_past], scenario.dt)
    v_pert = ControlSequence(problem.v_ref.inputs + state.delta[n_past:], scenario.dt)
    pred_pert = predictor.predict(x_pert, scenario.ego_past,
                                  horizon=scenario.horizon_future)
    diagnostics = {
        "rejections": state.rejections,
        "max_accepted_distance": state.max_accepted_distance,
        "max_box_excess": state.max_box_excess,
        "empty_box_entries": problem.empty_box_entries,
        "final_loss": trace[-1] if trace else None,
    }
    return AttackResult(
        x_pert=x_pert,
        y_pert=y_pert,
        u_pert=u_pert,
        v_pert=v_pert,
        pred_pert=pred_pert,
        pred_clean=problem.pred_clean,
        loss_trace=tuple(trace),
        halving_events=state.halving_events,
        iterations_run=len(trace),
        diagnostics=diagnostics,
    )
