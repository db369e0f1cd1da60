"""MPC assembly and the sequential-convex-programming solver.

Decision variables are the horizon controls only (single shooting); beliefs
are eliminated by forward substitution, so covariance semidefiniteness holds
by construction. Collision chance constraints and speed bounds enter as l1
penalties; the penalty gradient is taken by central finite differences with
the SDF parameter set frozen, which is the entire payoff of the two-stage
strategy: no GJK/EPA calls inside the gradient rollouts.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import models, possdf
from .belief import (RobotBelief, TargetBelief, belief_entropy,
                     bpod_covariance_update, propagate_robot_belief)
from .estimator import symmetrize
from .geom2d import (ConvexBody, FovParams, Pose2, signed_distance,
                     wrap_angle)

OBJECTIVE_ENTROPY = "entropy"
OBJECTIVE_BPOD = "bpod"

FD_STEP = 1e-4


class PlannerFailure(RuntimeError):
    """The solver cannot produce a usable control sequence."""


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 4
    dt: float = 0.5
    limits: models.Limits = field(default_factory=models.Limits)
    delta_s: float = 0.05
    objective: str = OBJECTIVE_ENTROPY
    relax_tf: float = 0.3
    relax_lo: float = 0.1
    valid_obstacle_radius: float = 8.0
    # Optional quadratic shaping toward a preferred robot-target range. The
    # detection-probability objective is flat once every step saturates, so
    # a small weight keeps the robot actively holding a useful standoff.
    standoff_weight: float = 0.0
    standoff_dist: float = 5.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not (0.0 < self.delta_s < 1.0):
            raise ValueError("delta_s must be in (0, 1)")
        if self.objective not in (OBJECTIVE_ENTROPY, OBJECTIVE_BPOD):
            raise ValueError(f"unknown objective {self.objective!r}")


@dataclass(frozen=True)
class ScpParams:
    eta0: float = 10.0
    d0: float = 0.5
    beta: float = 10.0
    tau_c: float = 1e-3
    tau_p: float = 1e-4
    tau_f: float = 1e-4
    trust_expand: float = 1.5
    trust_shrink: float = 0.5
    ratio_accept: float = 0.1
    max_outer: int = 5
    max_inner: int = 30

    def __post_init__(self):
        if self.beta <= 1.0:
            raise ValueError("beta must exceed 1")
        if not (0.0 < self.trust_shrink < 1.0 < self.trust_expand):
            raise ValueError("inconsistent trust-region ratios")


@dataclass
class World:
    """Static planning context: map geometry, sensing, and noise models."""
    obstacles: list
    fov: FovParams
    target_model: models.TargetModel
    sensor: models.SensorModel
    covs: models.NoiseCovs

    def __post_init__(self):
        # Bounding circles for the cheap valid-obstacle prefilter.
        self._centers = [obs.vertices.mean(axis=0) for obs in self.obstacles]
        self._radii = [
            float(np.max(np.hypot(*(obs.vertices - c).T)))
            for obs, c in zip(self.obstacles, self._centers)
        ]


@dataclass(frozen=True)
class StepParams:
    """Frozen SDF parameters for one horizon step."""
    tf: possdf.SdfParams
    valid: tuple
    lo: dict
    ro: dict


@dataclass(frozen=True)
class SdfParamSet:
    steps: tuple


@dataclass(frozen=True)
class StepGammas:
    tf: float
    lo: dict
    ro: dict
    gamma: float


@dataclass(frozen=True)
class RolloutResult:
    robot_beliefs: tuple
    target_beliefs: tuple
    gammas: tuple
    params: SdfParamSet
    # Pre-update target covariances: the detection probabilities are
    # evaluated against these, so logs that support re-checking the
    # probability must carry them rather than the filtered covariance.
    target_priors: tuple = ()


def _point_segment_dist(p, a, b):
    ex, ey = b[0] - a[0], b[1] - a[1]
    ee = ex * ex + ey * ey
    if ee <= 0.0:
        return math.hypot(p[0] - a[0], p[1] - a[1])
    t = ((p[0] - a[0]) * ex + (p[1] - a[1]) * ey) / ee
    t = min(max(t, 0.0), 1.0)
    return math.hypot(p[0] - a[0] - t * ex, p[1] - a[1] - t * ey)


def valid_obstacles(world: World, los_a, los_b, radius: float):
    """Indices of obstacles whose signed distance to the mean line of sight
    is at most ``radius`` (closed threshold)."""
    out = []
    seg = None
    for j, obs in enumerate(world.obstacles):
        # Bounding-circle prefilter before the exact distance.
        if (_point_segment_dist(world._centers[j], los_a, los_b)
                - world._radii[j] > radius):
            continue
        if seg is None:
            seg = ConvexBody.segment(los_a, los_b)
        if signed_distance(seg, obs).signed_distance <= radius:
            out.append(j)
    return out


def _step_params(rb: RobotBelief, t_mean, world: World, cfg: PlannerConfig):
    """Fresh SDF parameters at the current belief means for one step."""
    pose = Pose2(rb.mean.x, rb.mean.y, rb.mean.heading)
    rpos = (rb.mean.x, rb.mean.y)
    tpos = (float(t_mean[0]), float(t_mean[1]))
    tf, _ = possdf.tf_params(pose, world.fov, tpos)
    valid = valid_obstacles(world, rpos, tpos, cfg.valid_obstacle_radius)
    lo = {}
    ro = {}
    los_len = math.hypot(rpos[0] - tpos[0], rpos[1] - tpos[1])
    for j in valid:
        obs = world.obstacles[j]
        if los_len > 1e-9:
            lo[j], _ = possdf.lo_params(rpos, tpos, obs)
        ro[j], _ = possdf.ro_params(rpos, obs)
    return StepParams(tf=tf, valid=tuple(valid), lo=lo, ro=ro)


def _step_dynamics(rb, t_mean, P, ui, tui, world, cfg):
    """One prediction step of both beliefs; returns the prior covariance."""
    rb = propagate_robot_belief(rb, ui, world.covs, cfg.dt)
    t_mean = models.target_step(world.target_model, t_mean, tui, cfg.dt)
    if world.target_model.kind == models.LINEAR:
        P_prior = symmetrize(P + world.covs.target)
    else:
        A = models.target_jacobian(world.target_model, t_mean, tui, cfg.dt)
        P_prior = symmetrize(A @ P @ A.T + world.covs.target)
    return rb, t_mean, P_prior


def _step_eval(rb, t_mean, P_prior, sp: StepParams, world, cfg):
    """Detection/occlusion/collision probabilities at one predicted step and
    the detection-weighted covariance update."""
    g = possdf.StackedGaussian(
        np.concatenate([rb.mean.as_array(), t_mean]), rb.cov, P_prior)
    g_tf = possdf.possdf_prob(sp.tf, g, "leq0", cfg.relax_tf)
    g_lo = {}
    g_ro = {}
    for j in sp.valid:
        if j in sp.lo:
            g_lo[j] = possdf.possdf_prob(sp.lo[j], g, "geq0", -cfg.relax_lo)
        g_ro[j] = possdf.possdf_prob(sp.ro[j], g, "leq0", 0.0)
    gamma = possdf.bpod(g_tf, g_lo.values())
    try:
        C = models.measurement_jacobian(world.sensor, t_mean, rb.mean)
        P_post = bpod_covariance_update(P_prior, C, world.sensor.noise_cov,
                                        gamma)
    except models.ZeroRangeError:
        P_post = P_prior
    return StepGammas(tf=g_tf, lo=g_lo, ro=g_ro, gamma=gamma), P_post


def rollout(u, rb0: RobotBelief, tb0: TargetBelief, world: World,
            cfg: PlannerConfig, target_u, frozen: SdfParamSet = None
            ) -> RolloutResult:
    """Forward belief propagation under the candidate controls ``u``.

    With ``frozen`` given, the stored SDF parameters are reused (no geometry
    calls); otherwise they are computed fresh at the rolled-out means.
    """
    u = np.asarray(u, dtype=float)
    N = cfg.horizon
    rb = rb0
    t_mean = np.asarray(tb0.mean, dtype=float)
    P = np.asarray(tb0.cov, dtype=float)
    target_u = np.asarray(target_u, dtype=float)
    robot_beliefs = []
    target_beliefs = []
    gammas = []
    step_params = []
    priors = []
    for i in range(N):
        ui = models.RobotInput(float(u[2 * i]), float(u[2 * i + 1]))
        rb, t_mean, P = _step_dynamics(rb, t_mean, P, ui, target_u[i],
                                       world, cfg)
        sp = frozen.steps[i] if frozen is not None else _step_params(
            rb, t_mean, world, cfg)
        priors.append(P)
        gam, P = _step_eval(rb, t_mean, P, sp, world, cfg)
        robot_beliefs.append(rb)
        target_beliefs.append(TargetBelief(t_mean.copy(), P))
        gammas.append(gam)
        step_params.append(sp)
    return RolloutResult(tuple(robot_beliefs), tuple(target_beliefs),
                         tuple(gammas), SdfParamSet(tuple(step_params)),
                         tuple(priors))


def objective(r: RolloutResult, kind: str) -> float:
    """Cumulative entropy, or the negated cumulative detection probability."""
    if kind == OBJECTIVE_ENTROPY:
        return sum(belief_entropy(tb.cov, len(tb.mean))
                   for tb in r.target_beliefs)
    if kind == OBJECTIVE_BPOD:
        return -sum(g.gamma for g in r.gammas)
    raise ValueError(f"unknown objective {kind!r}")


def penalty_objective(r: RolloutResult, eta: float, cfg: PlannerConfig):
    """l1-penalized objective and the summed constraint violations.

    Violations cover the per-step, per-obstacle collision chance bound and the
    mean-speed limits; control bounds are hard box constraints in the
    subproblem and never appear here.
    """
    J = objective(r, cfg.objective)
    if cfg.standoff_weight > 0.0:
        for rb, tb in zip(r.robot_beliefs, r.target_beliefs):
            gap = (math.hypot(rb.mean.x - tb.mean[0], rb.mean.y - tb.mean[1])
                   - cfg.standoff_dist)
            J += cfg.standoff_weight * gap * gap
    viol = 0.0
    for g in r.gammas:
        for val in g.ro.values():
            viol += max(val - cfg.delta_s, 0.0)
    vmax = cfg.limits.speed_max
    for rb in r.robot_beliefs:
        v = rb.mean.speed
        viol += max(v - vmax, 0.0) + max(-v, 0.0)
    return J + eta * viol, viol


def _step_cost(gam: StepGammas, rb: RobotBelief, t_mean, P_post, d_t: int,
               eta: float, cfg: PlannerConfig) -> float:
    """One step's share of the l1-penalized objective."""
    if cfg.objective == OBJECTIVE_ENTROPY:
        J = belief_entropy(P_post, d_t)
    else:
        J = -gam.gamma
    if cfg.standoff_weight > 0.0:
        gap = (math.hypot(rb.mean.x - t_mean[0], rb.mean.y - t_mean[1])
               - cfg.standoff_dist)
        J += cfg.standoff_weight * gap * gap
    viol = 0.0
    for val in gam.ro.values():
        viol += max(val - cfg.delta_s, 0.0)
    v = rb.mean.speed
    viol += max(v - cfg.limits.speed_max, 0.0) + max(-v, 0.0)
    return J + eta * viol


def _frozen_penalty_gradient(x0, rb0: RobotBelief, tb0: TargetBelief,
                             world: World, cfg: PlannerConfig, target_u,
                             C0: SdfParamSet, eta: float):
    """Central-difference gradient of the frozen-parameter penalty.

    Perturbing the controls of step i leaves steps before i untouched, so the
    base pass caches the pre-step states and per-step costs and each
    difference only re-rolls the suffix.
    """
    N = cfg.horizon
    d_t = len(tb0.mean)
    target_u = np.asarray(target_u, dtype=float)

    def step(rb, t_mean, P, om, ac, i):
        ui = models.RobotInput(om, ac)
        rb, t_mean, P = _step_dynamics(rb, t_mean, P, ui, target_u[i],
                                       world, cfg)
        gam, P = _step_eval(rb, t_mean, P, C0.steps[i], world, cfg)
        return rb, t_mean, P, _step_cost(gam, rb, t_mean, P, d_t, eta, cfg)

    states = []
    costs = np.zeros(N)
    rb = rb0
    t_mean = np.asarray(tb0.mean, dtype=float)
    P = np.asarray(tb0.cov, dtype=float)
    for i in range(N):
        states.append((rb, t_mean, P))
        rb, t_mean, P, costs[i] = step(rb, t_mean, P, float(x0[2 * i]),
                                       float(x0[2 * i + 1]), i)
    prefix = np.concatenate([[0.0], np.cumsum(costs)])

    def suffix_cost(i, om, ac):
        rb, t_mean, P = states[i]
        total = 0.0
        for k in range(i, N):
            if k == i:
                o, a = om, ac
            else:
                o, a = float(x0[2 * k]), float(x0[2 * k + 1])
            rb, t_mean, P, c = step(rb, t_mean, P, o, a, k)
            total += c
        return total

    grad = np.zeros(2 * N)
    for i in range(N):
        om, ac = float(x0[2 * i]), float(x0[2 * i + 1])
        grad[2 * i] = (suffix_cost(i, om + FD_STEP, ac)
                       - suffix_cost(i, om - FD_STEP, ac)) / (2.0 * FD_STEP)
        grad[2 * i + 1] = (suffix_cost(i, om, ac + FD_STEP)
                           - suffix_cost(i, om, ac - FD_STEP)) / (2.0 * FD_STEP)
    return float(prefix[-1]), grad


def _project_box(u, cfg: PlannerConfig):
    u = np.array(u, dtype=float)
    lim = cfg.limits
    for i in range(cfg.horizon):
        u[2 * i] = min(max(u[2 * i], lim.omega[0]), lim.omega[1])
        u[2 * i + 1] = min(max(u[2 * i + 1], lim.accel[0]), lim.accel[1])
    return u


def _project_speed(u, v0: float, cfg: PlannerConfig):
    """Clamp accelerations so the rolled-out mean speed stays in
    [0, speed_max]. Sequential, exact, preserves the box bounds."""
    u = np.array(u, dtype=float)
    v = v0
    dt = cfg.dt
    vmax = cfg.limits.speed_max
    for i in range(cfg.horizon):
        a = u[2 * i + 1]
        a = min(a, (vmax - v) / dt)
        a = max(a, -v / dt)
        u[2 * i + 1] = a
        v = v + a * dt
    return u


def _pursuit_guess(rb0: RobotBelief, tb0: TargetBelief, world: World,
                   cfg: PlannerConfig, target_u):
    """Greedy turn-and-chase controls aimed at the predicted target mean."""
    lim = cfg.limits
    z = rb0.mean.as_array()
    t_mean = np.asarray(tb0.mean, dtype=float)
    hold = 0.5 * (world.fov.r1 + world.fov.r2)
    u = np.zeros(2 * cfg.horizon)
    for i in range(cfg.horizon):
        t_mean = models.target_step(world.target_model, t_mean,
                                    np.asarray(target_u, dtype=float)[i],
                                    cfg.dt)
        dx = t_mean[0] - z[0]
        dy = t_mean[1] - z[1]
        dist = math.hypot(dx, dy)
        if dist < world.fov.r1 + 1.0:
            # Too close to see: a forward-only vehicle has to drive away
            # from the target to reopen the standoff gap.
            want = math.atan2(-dy, -dx)
            v_des = 0.5 * lim.speed_max
        else:
            want = math.atan2(dy, dx)
            v_des = np.clip((dist - hold) / cfg.dt, 0.0, lim.speed_max)
        omega = np.clip(wrap_angle(want - z[2]) / cfg.dt,
                        lim.omega[0], lim.omega[1])
        accel = np.clip((v_des - z[3]) / cfg.dt, lim.accel[0], lim.accel[1])
        u[2 * i] = omega
        u[2 * i + 1] = accel
        z = models.robot_step(models.RobotState(*z),
                              models.RobotInput(float(omega), float(accel)),
                              cfg.dt).as_array()
    return u


def _orbit_guess(rb0: RobotBelief, tb0: TargetBelief, world: World,
                 cfg: PlannerConfig, target_u, sign: float):
    """Edge-of-sector orbit controls.

    With a forward sensing sector narrower than a half-plane, driving at the
    sector edge is the fastest way to open lateral separation from a closing
    target without losing it from view; the gradient never finds this from a
    standstill because the detection terms are saturated there.
    """
    lim = cfg.limits
    z = rb0.mean.as_array()
    t_mean = np.asarray(tb0.mean, dtype=float)
    hold = 0.5 * (world.fov.r1 + world.fov.r2)
    offset = sign * (0.5 * world.fov.psi - 0.25)
    u = np.zeros(2 * cfg.horizon)
    for i in range(cfg.horizon):
        t_mean = models.target_step(world.target_model, t_mean,
                                    np.asarray(target_u, dtype=float)[i],
                                    cfg.dt)
        dx = t_mean[0] - z[0]
        dy = t_mean[1] - z[1]
        dist = math.hypot(dx, dy)
        want = math.atan2(dy, dx) + offset
        v_des = np.clip(2.0 * (hold - dist), 0.0, lim.speed_max)
        omega = np.clip(wrap_angle(want - z[2]) / cfg.dt,
                        lim.omega[0], lim.omega[1])
        accel = np.clip((v_des - z[3]) / cfg.dt, lim.accel[0], lim.accel[1])
        u[2 * i] = omega
        u[2 * i + 1] = accel
        z = models.robot_step(models.RobotState(*z),
                              models.RobotInput(float(omega), float(accel)),
                              cfg.dt).as_array()
    return u


def _check_feasible_start(rb0: RobotBelief, world: World):
    p = ConvexBody.point((rb0.mean.x, rb0.mean.y))
    for obs in world.obstacles:
        if signed_distance(p, obs).signed_distance < 0.0:
            raise PlannerFailure("initial robot mean inside an obstacle")


def scp_solve(rb0: RobotBelief, tb0: TargetBelief, world: World,
              cfg: PlannerConfig, scp: ScpParams, target_u,
              warm=None):
    """Two-stage SCP solve of the MPC problem.

    ``warm`` is the previous step's solution; it is shifted one step with the
    last control repeated. Returns (controls, rollout, diagnostics).
    """
    _check_feasible_start(rb0, world)
    N = cfg.horizon
    if warm is None:
        x0 = np.zeros(2 * N)
    else:
        warm = np.asarray(warm, dtype=float)
        x0 = np.concatenate([warm[2:], warm[-2:]])
    x0 = _project_speed(_project_box(x0, cfg), rb0.mean.speed, cfg)

    def fresh(x):
        return rollout(x, rb0, tb0, world, cfg, target_u)

    # The finite-difference gradient is numerically flat both when the target
    # is far outside the field of view and when every detection term is
    # saturated, so seed extra candidates -- a turn-and-chase guess and the
    # two edge-of-sector orbits -- and keep whichever scores best.
    best_J = penalty_objective(fresh(x0), scp.eta0, cfg)[0]
    for guess in (_pursuit_guess(rb0, tb0, world, cfg, target_u),
                  _orbit_guess(rb0, tb0, world, cfg, target_u, 1.0),
                  _orbit_guess(rb0, tb0, world, cfg, target_u, -1.0)):
        x_g = _project_speed(guess, rb0.mean.speed, cfg)
        J_g = penalty_objective(rollout(x_g, rb0, tb0, world, cfg, target_u),
                                scp.eta0, cfg)[0]
        if J_g < best_J:
            best_J, x0 = J_g, x_g

    r0 = fresh(x0)
    C0 = r0.params
    eta = scp.eta0
    d = scp.d0
    lim = cfg.limits
    lo_box = np.tile([lim.omega[0], lim.accel[0]], N)
    hi_box = np.tile([lim.omega[1], lim.accel[1]], N)
    diagnostics = {"outer": 0, "inner": 0, "converged": False,
                   "violations": penalty_objective(r0, eta, cfg)[1]}
    best_x, best_r = x0, r0
    for outer in range(scp.max_outer):
        diagnostics["outer"] = outer + 1
        grad = None
        for inner in range(scp.max_inner):
            diagnostics["inner"] += 1
            if grad is None:
                Jm0, grad = _frozen_penalty_gradient(
                    x0, rb0, tb0, world, cfg, target_u, C0, eta)
            if not np.all(np.isfinite(grad)):
                raise PlannerFailure("non-finite penalty gradient")
            # Linear objective over the trust-region/limits box: each
            # coordinate moves to its active bound along -grad.
            x_star = np.where(grad > 0.0,
                              np.maximum(x0 - d, lo_box),
                              np.where(grad < 0.0,
                                       np.minimum(x0 + d, hi_box), x0))
            x_star = _project_speed(x_star, rb0.mean.speed, cfg)
            step = x_star - x0
            model_decrease = -float(grad @ step)
            r_star = fresh(x_star)
            C_star = r_star.params
            Jm_star = penalty_objective(r_star, eta, cfg)[0]
            actual_decrease = Jm0 - Jm_star
            if model_decrease <= scp.tau_f:
                break
            ratio = actual_decrease / model_decrease
            if ratio >= scp.ratio_accept:
                x0, C0 = x_star, C_star
                best_x, best_r = x_star, r_star
                grad = None
                if ratio > 0.75:
                    d *= scp.trust_expand
                converged_step = float(np.max(np.abs(step))) <= scp.tau_c
            else:
                d *= scp.trust_shrink
                converged_step = d <= scp.tau_c
            if converged_step:
                break
        r_cur = fresh(x0)
        best_x, best_r = x0, r_cur
        viol = penalty_objective(r_cur, eta, cfg)[1]
        diagnostics["violations"] = viol
        if viol <= scp.tau_p:
            diagnostics["converged"] = True
            break
        eta *= scp.beta
    return best_x, best_r, diagnostics
