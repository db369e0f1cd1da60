"""Probabilities of stochastic signed-distance satisfaction.

The signed distance between two convex bodies posed by a Gaussian variable is
linearized around the mean: witness points are frozen in each body's local
frame, their world positions reconstructed from the (random) poses, and the
displacement projected onto the contact normal. The resulting linear-Gaussian
probability is evaluated in closed form via the error function.

Specializations cover the three detection/collision terms: target inside the
convexified FOV, line of sight clear of an obstacle, and robot-obstacle
collision. A seeded Monte-Carlo estimator against the exact (non-convexified)
visibility test serves as ground truth.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import geom2d
from .geom2d import ConvexBody, FovParams, Pose2, signed_distance
from .belief import RobotBelief, TargetBelief

VAR_DENOM_FLOOR = 1e-9

# Pose frames a witness point can be attached to.
FRAME_STATIC = "static"
FRAME_TARGET = "target"
FRAME_ROBOT_POINT = "robot_point"
FRAME_ROBOT_POSE = "robot_pose"
FRAME_LOS = "los"

_SQRT2 = math.sqrt(2.0)


class ZeroLengthLosError(ValueError):
    """Robot and target means coincide; the line of sight degenerates."""


@dataclass(frozen=True)
class StackedGaussian:
    """Joint Gaussian over [z^r; z^t] with zero cross-covariance.

    ``robot_cov`` is 4x4; ``target_cov`` is d_t x d_t (d_t may be 0 for
    robot-only probabilities).
    """
    mean: np.ndarray
    robot_cov: np.ndarray
    target_cov: np.ndarray

    @classmethod
    def from_beliefs(cls, rb: RobotBelief, tb: TargetBelief = None):
        if tb is None:
            return cls(rb.mean.as_array(), rb.cov, np.zeros((0, 0)))
        mean = np.concatenate([rb.mean.as_array(), tb.mean])
        return cls(mean, rb.cov, tb.cov)

    @property
    def cov(self):
        """Full block-diagonal covariance (for the generic linear formula)."""
        n = 4 + self.target_cov.shape[0]
        S = np.zeros((n, n))
        S[:4, :4] = self.robot_cov
        S[4:, 4:] = self.target_cov
        return S


@dataclass(frozen=True)
class SdfParams:
    """Frozen linearization data for one body pair.

    ``p1_local``/``p2_local`` are witness points in each body's frame; for a
    line-of-sight body the first is replaced by the separative ratio ``lam``
    locating the witness at lam * x^r + (1 - lam) * x^t.
    """
    frame1: str
    frame2: str
    normal: tuple
    p1_local: tuple = (0.0, 0.0)
    p2_local: tuple = (0.0, 0.0)
    lam: float = 0.0

    @property
    def kind(self):
        return "los_pair" if self.frame1 == FRAME_LOS else "body_pair"


def _prob_leq(mean_minus_b, std):
    """Pr(g <= 0) for scalar Gaussian g with the given mean and std."""
    return 0.5 * (1.0 - math.erf(mean_minus_b / (_SQRT2 * max(std, VAR_DENOM_FLOOR))))


def linear_gaussian_prob(a, b, mean, cov):
    """Pr(a . x <= b) for Gaussian x; the denominator is floored so the
    deterministic limit collapses to a step function."""
    a = np.asarray(a, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    std = math.sqrt(max(float(a @ cov @ a), 0.0))
    return _prob_leq(float(a @ mean) - b, std)


def _frame_world_point(frame, p_local, lam, xr, heading, xt):
    """World position of a frozen local witness point at the stacked mean."""
    if frame == FRAME_STATIC:
        return p_local
    if frame == FRAME_TARGET:
        return (xt[0] + p_local[0], xt[1] + p_local[1])
    if frame == FRAME_ROBOT_POINT:
        return (xr[0] + p_local[0], xr[1] + p_local[1])
    if frame == FRAME_ROBOT_POSE:
        c, s = math.cos(heading), math.sin(heading)
        return (xr[0] + c * p_local[0] - s * p_local[1],
                xr[1] + s * p_local[0] + c * p_local[1])
    if frame == FRAME_LOS:
        return (lam * xr[0] + (1.0 - lam) * xt[0],
                lam * xr[1] + (1.0 - lam) * xt[1])
    raise ValueError(f"unknown frame {frame!r}")


def _frame_gradient(frame, p_local, lam, heading, nx, ny, sign, g_r, g_t):
    """Accumulate sign * d(n . p)/dx into the robot/target gradient blocks."""
    if frame == FRAME_STATIC:
        return
    if frame == FRAME_TARGET:
        g_t[0] += sign * nx
        g_t[1] += sign * ny
        return
    if frame == FRAME_ROBOT_POINT:
        g_r[0] += sign * nx
        g_r[1] += sign * ny
        return
    if frame == FRAME_ROBOT_POSE:
        g_r[0] += sign * nx
        g_r[1] += sign * ny
        c, s = math.cos(heading), math.sin(heading)
        # d(R p)/d heading projected on the normal.
        dpx = -s * p_local[0] - c * p_local[1]
        dpy = c * p_local[0] - s * p_local[1]
        g_r[2] += sign * (nx * dpx + ny * dpy)
        return
    if frame == FRAME_LOS:
        g_r[0] += sign * nx * lam
        g_r[1] += sign * ny * lam
        g_t[0] += sign * nx * (1.0 - lam)
        g_t[1] += sign * ny * (1.0 - lam)
        return
    raise ValueError(f"unknown frame {frame!r}")


def possdf_prob(params: SdfParams, gaussian: StackedGaussian, sense: str,
                threshold: float) -> float:
    """Probability that the linearized signed distance satisfies
    ``sd <= threshold`` (sense "leq0") or ``sd >= threshold`` ("geq0")."""
    mean = gaussian.mean
    xr = (mean[0], mean[1])
    heading = mean[2]
    xt = (mean[4], mean[5]) if mean.size > 4 else (0.0, 0.0)
    nx, ny = params.normal
    lam = params.lam
    p1 = _frame_world_point(params.frame1, params.p1_local, lam, xr, heading, xt)
    p2 = _frame_world_point(params.frame2, params.p2_local, lam, xr, heading, xt)
    sd_mean = nx * (p1[0] - p2[0]) + ny * (p1[1] - p2[1])
    g_r = [0.0, 0.0, 0.0, 0.0]
    g_t = [0.0, 0.0]
    _frame_gradient(params.frame1, params.p1_local, lam, heading, nx, ny,
                    1.0, g_r, g_t)
    _frame_gradient(params.frame2, params.p2_local, lam, heading, nx, ny,
                    -1.0, g_r, g_t)
    # Quadratic forms written out; only the first three robot components and
    # the target position can carry gradient, and this runs in the planner's
    # innermost loop.
    Q = gaussian.robot_cov
    a0, a1, a2 = g_r[0], g_r[1], g_r[2]
    var = (a0 * (a0 * Q[0, 0] + 2.0 * (a1 * Q[0, 1] + a2 * Q[0, 2]))
           + a1 * (a1 * Q[1, 1] + 2.0 * a2 * Q[1, 2])
           + a2 * a2 * Q[2, 2])
    T = gaussian.target_cov
    if T.shape[0] >= 2:
        t0, t1 = g_t
        var += (t0 * t0 * T[0, 0] + 2.0 * t0 * t1 * T[0, 1]
                + t1 * t1 * T[1, 1])
    std = math.sqrt(max(var, 0.0))
    p = _prob_leq(sd_mean - threshold, std)
    if sense == "leq0":
        return p
    if sense == "geq0":
        return 1.0 - p
    raise ValueError(f"unknown sense {sense!r}")


# ---------------------------------------------------------------------------
# Parameter builders (run geometry at the stacked mean).
# ---------------------------------------------------------------------------

def tf_params(pose: Pose2, fov: FovParams, target_pos):
    """Parameters for the target-in-FOV distance sd(x^t, V)."""
    fov_body = geom2d.convexify_fov(pose, fov)
    res = signed_distance(ConvexBody.point(target_pos), fov_body)
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    dx, dy = res.p2[0] - pose.x, res.p2[1] - pose.y
    p2_local = (c * dx + s * dy, -s * dx + c * dy)
    params = SdfParams(FRAME_TARGET, FRAME_ROBOT_POSE,
                       (float(res.normal[0]), float(res.normal[1])),
                       p1_local=(0.0, 0.0), p2_local=p2_local)
    return params, res


def lo_params(robot_pos, target_pos, obstacle: ConvexBody):
    """Parameters for the line-of-sight / obstacle distance sd(L, O)."""
    rx, ry = float(robot_pos[0]), float(robot_pos[1])
    tx, ty = float(target_pos[0]), float(target_pos[1])
    los_len = math.hypot(rx - tx, ry - ty)
    if los_len <= 1e-12:
        raise ZeroLengthLosError("robot and target means coincide")
    los = ConvexBody.segment((tx, ty), (rx, ry))
    res = signed_distance(los, obstacle)
    lam = math.hypot(res.p1[0] - tx, res.p1[1] - ty) / los_len
    lam = min(max(lam, 0.0), 1.0)
    params = SdfParams(FRAME_LOS, FRAME_STATIC,
                       (float(res.normal[0]), float(res.normal[1])),
                       p2_local=(float(res.p2[0]), float(res.p2[1])),
                       lam=lam)
    return params, res


def ro_params(robot_pos, obstacle: ConvexBody):
    """Parameters for the robot-point / obstacle distance sd(x^r, O)."""
    res = signed_distance(ConvexBody.point(robot_pos), obstacle)
    params = SdfParams(FRAME_ROBOT_POINT, FRAME_STATIC,
                       (float(res.normal[0]), float(res.normal[1])),
                       p2_local=(float(res.p2[0]), float(res.p2[1])))
    return params, res


# ---------------------------------------------------------------------------
# Detection / collision probabilities.
# ---------------------------------------------------------------------------

def gamma_tf(rb: RobotBelief, tb: TargetBelief, fov: FovParams,
             relax: float = 0.0, params: SdfParams = None) -> float:
    """Probability of the target lying inside the (convexified) FOV."""
    if params is None:
        pose = Pose2(rb.mean.x, rb.mean.y, rb.mean.heading)
        params, _ = tf_params(pose, fov, tb.mean[:2])
    g = StackedGaussian.from_beliefs(rb, tb)
    return possdf_prob(params, g, "leq0", relax)


def gamma_lo(rb: RobotBelief, tb: TargetBelief, obstacle: ConvexBody,
             relax: float = 0.0, params: SdfParams = None) -> float:
    """Probability that the line of sight is not occluded by ``obstacle``."""
    if params is None:
        params, _ = lo_params((rb.mean.x, rb.mean.y), tb.mean[:2], obstacle)
    g = StackedGaussian.from_beliefs(rb, tb)
    return possdf_prob(params, g, "geq0", -relax)


def gamma_ro(rb: RobotBelief, obstacle: ConvexBody,
             params: SdfParams = None) -> float:
    """Probability of robot-obstacle collision. The witness half-space
    contains the obstacle, so this overestimates the true probability."""
    if params is None:
        params, _ = ro_params((rb.mean.x, rb.mean.y), obstacle)
    g = StackedGaussian.from_beliefs(rb)
    return possdf_prob(params, g, "leq0", 0.0)


def bpod(gamma_tf_value: float, gamma_lo_values) -> float:
    """Joint probability of detection: gamma^tf times all gamma^lo factors."""
    out = gamma_tf_value
    for g in gamma_lo_values:
        out *= g
    return min(max(out, 0.0), 1.0)


# ---------------------------------------------------------------------------
# Monte-Carlo ground truth.
# ---------------------------------------------------------------------------

def _chol_or_zero(P):
    P = np.asarray(P, dtype=float)
    if not np.any(P):
        return np.zeros_like(P)
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    return V * np.sqrt(np.maximum(w, 0.0))


def _visibility_batch(zr, xt, obstacles, fov):
    """Vectorized exact visibility for sampled states.

    ``zr``: (n, >=3) robot samples; ``xt``: (n, 2) target positions. Uses the
    true annular sector, matching :func:`geom2d.exact_visibility`.
    """
    d = xt - zr[:, :2]
    r = np.hypot(d[:, 0], d[:, 1])
    visible = (r >= fov.r1) & (r <= fov.r2)
    bearing = np.arctan2(d[:, 1], d[:, 0]) - zr[:, 2]
    bearing = (bearing + math.pi) % (2.0 * math.pi) - math.pi
    visible &= np.abs(bearing) <= 0.5 * fov.psi + 1e-12
    for obs in obstacles:
        if not np.any(visible):
            break
        verts = obs.vertices
        n_v = len(verts)
        p = zr[:, :2]
        seg = d
        t_enter = np.zeros(len(zr))
        t_exit = np.ones(len(zr))
        feasible = np.ones(len(zr), dtype=bool)
        for i in range(n_v):
            v1 = verts[i]
            v2 = verts[(i + 1) % n_v]
            nx, ny = v2[1] - v1[1], -(v2[0] - v1[0])
            num = nx * (v1[0] - p[:, 0]) + ny * (v1[1] - p[:, 1])
            den = nx * seg[:, 0] + ny * seg[:, 1]
            par = np.abs(den) < 1e-15
            feasible &= ~(par & (num <= 1e-12))
            t = np.where(par, 0.0, num / np.where(par, 1.0, den))
            t_enter = np.where(~par & (den < 0.0), np.maximum(t_enter, t), t_enter)
            t_exit = np.where(~par & (den > 0.0), np.minimum(t_exit, t), t_exit)
        crosses = feasible & (t_exit - t_enter > 1e-12)
        visible &= ~crosses
    return visible


def mc_bpod_oracle(rb: RobotBelief, tb: TargetBelief, obstacles, fov: FovParams,
                   n_samples: int, seed: int):
    """Seeded Monte-Carlo estimate of the detection probability.

    Samples robot and target states independently from their beliefs and
    evaluates the exact visibility condition per sample. Returns (estimate,
    binomial standard error); deterministic for a fixed seed.
    """
    if n_samples < 100:
        raise ValueError("need n_samples >= 100")
    rng = np.random.Generator(np.random.Philox(key=seed))
    Lr = _chol_or_zero(rb.cov)
    Lt = _chol_or_zero(tb.cov)
    zr = rb.mean.as_array() + rng.standard_normal((n_samples, 4)) @ Lr.T
    zt = tb.mean + rng.standard_normal((n_samples, len(tb.mean))) @ Lt.T
    visible = _visibility_batch(zr, zt[:, :2], obstacles, fov)
    est = float(np.mean(visible))
    stderr = math.sqrt(est * (1.0 - est) / n_samples)
    return est, stderr
