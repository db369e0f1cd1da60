"""Predictive-horizon belief propagation: robot belief rollout, the
detection-probability-weighted covariance update, and Gaussian entropy."""

import math
from dataclasses import dataclass

import numpy as np

from . import models
from .estimator import NumericalError, symmetrize

DET_FLOOR = 1e-300
EIG_FLOOR = 1e-12

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class RobotBelief:
    mean: models.RobotState
    cov: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.cov, dtype=float)
        if Q.shape != (4, 4):
            raise ValueError("robot covariance must be 4x4")
        object.__setattr__(self, "cov", Q)


@dataclass(frozen=True)
class TargetBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=float)
        P = np.asarray(self.cov, dtype=float)
        if P.shape != (m.size, m.size):
            raise ValueError("target covariance shape mismatch")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", P)


def propagate_robot_belief(b: RobotBelief, u: models.RobotInput,
                           covs: models.NoiseCovs, dt: float) -> RobotBelief:
    """One EKF-style prediction step of the robot belief under control u."""
    A = models.robot_jacobian(b.mean, dt)
    mean = models.robot_step(b.mean, u, dt)
    Q = symmetrize(A @ b.cov @ A.T + covs.robot)
    return RobotBelief(mean, Q)


def _small_det(M):
    """Determinant without the LAPACK round trip for the 2x2/3x3 sizes the
    tracker actually uses."""
    n = M.shape[0]
    if n == 2:
        return M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    if n == 3:
        return (M[0, 0] * (M[1, 1] * M[2, 2] - M[1, 2] * M[2, 1])
                - M[0, 1] * (M[1, 0] * M[2, 2] - M[1, 2] * M[2, 0])
                + M[0, 2] * (M[1, 0] * M[2, 1] - M[1, 1] * M[2, 0]))
    return float(np.linalg.det(M))


def _small_inv(M):
    n = M.shape[0]
    d = _small_det(M)
    if d == 0.0 or not math.isfinite(d):
        raise NumericalError("singular innovation covariance")
    if n == 2:
        return np.array([[M[1, 1], -M[0, 1]], [-M[1, 0], M[0, 0]]]) / d
    if n == 3:
        a, b, c = M[0]
        e, f, g = M[1]
        h, i, j = M[2]
        return np.array([
            [f * j - g * i, c * i - b * j, b * g - c * f],
            [g * h - e * j, a * j - c * h, c * e - a * g],
            [e * i - f * h, b * h - a * i, a * f - b * e]]) / d
    return np.linalg.inv(M)


def bpod_covariance_update(P_prior, C_tilde, Rs, gamma: float):
    """Covariance update weighted by the probability of detection.

    gamma = 0 reproduces the pure prediction, gamma = 1 the standard EKF
    posterior; intermediate values interpolate the information gain.
    """
    P = np.asarray(P_prior, dtype=float)
    C = np.asarray(C_tilde, dtype=float)
    Rs = np.asarray(Rs, dtype=float)
    PCt = P @ C.T
    S = C @ PCt + Rs
    K = PCt @ _small_inv(S)
    out = symmetrize(P - gamma * (K @ PCt.T))
    # Floor the spectrum only when the update actually lost definiteness;
    # long fully-visible rollouts drive the covariance toward singular.
    if _small_det(out) <= 0.0 or np.any(np.diag(out) <= 0.0):
        w, V = np.linalg.eigh(out)
        out = symmetrize((V * np.maximum(w, EIG_FLOOR)) @ V.T)
    return out


def belief_entropy(P, d_t: int) -> float:
    """Differential entropy of a d_t-dimensional Gaussian in nats."""
    det = max(float(_small_det(np.asarray(P, dtype=float))), DET_FLOOR)
    return 0.5 * d_t * (LOG_2PI + 1.0) + 0.5 * math.log(det)
