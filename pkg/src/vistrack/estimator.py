"""EKF with intermittent measurements for online target-state estimation.

A missing measurement (detection variable 0) leaves the belief untouched;
angular innovation components are wrapped so the filter survives the +/- pi
seam.
"""

from dataclasses import dataclass

import numpy as np

from .geom2d import wrap_angle
from . import models


class NumericalError(RuntimeError):
    """Singular or indefinite matrix encountered in a filter update."""


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=float)
        P = np.asarray(self.cov, dtype=float)
        if P.shape != (m.size, m.size):
            raise ValueError("covariance shape mismatch")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", P)


def symmetrize(P):
    return 0.5 * (P + P.T)


def ekf_predict(belief: GaussianBelief, model: models.TargetModel, u,
                covs: models.NoiseCovs, dt: float) -> GaussianBelief:
    """Prediction step: mean through the kinematics, covariance through the
    model Jacobian plus process noise."""
    mean = models.target_step(model, belief.mean, u, dt)
    A = models.target_jacobian(model, belief.mean, u, dt)
    P = symmetrize(A @ belief.cov @ A.T + covs.target)
    return GaussianBelief(mean, P)


def ekf_update(prior: GaussianBelief, y, sensor: models.SensorModel,
               zr: models.RobotState) -> GaussianBelief:
    """Measurement update. ``y`` of None means no detection: the prior is
    returned unchanged."""
    if y is None:
        return prior
    y = np.asarray(y, dtype=float)
    C = models.measurement_jacobian(sensor, prior.mean, zr)
    P = prior.cov
    S = C @ P @ C.T + sensor.noise_cov
    try:
        K = np.linalg.solve(S.T, (P @ C.T).T).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular innovation covariance: {exc}") from exc
    innov = y - models.measure(sensor, prior.mean, zr)
    for i in sensor.angular_components:
        innov[i] = wrap_angle(innov[i])
    mean = prior.mean + K @ innov
    if len(mean) == 3:
        mean[2] = wrap_angle(mean[2])
    cov = symmetrize(P - K @ C @ P)
    if np.linalg.eigvalsh(cov)[0] < -1e-9:
        # Joseph form is stabler when the standard update loses definiteness.
        I_KC = np.eye(len(mean)) - K @ C
        cov = symmetrize(I_KC @ P @ I_KC.T + K @ sensor.noise_cov @ K.T)
    return GaussianBelief(mean, cov)
