import math

import numpy as np
import pytest

from vistrack import models
from vistrack.estimator import (GaussianBelief, ekf_predict, ekf_update,
                                symmetrize)
from vistrack.models import NoiseCovs, RobotState, SensorModel, TargetModel

RB = SensorModel(models.RANGE_BEARING, np.diag([0.3, 0.05]))
COVS2 = NoiseCovs(1e-3 * np.eye(4), 0.01 * np.eye(2))
LIN = TargetModel(models.LINEAR)


class TestPredict:
    def test_linear_prediction(self):
        b = GaussianBelief(np.array([1.0, 2.0]), np.eye(2))
        out = ekf_predict(b, LIN, (2.0, 0.0), COVS2, 0.5)
        assert np.allclose(out.mean, (2.0, 2.0))
        assert np.allclose(out.cov, 1.01 * np.eye(2))

    def test_unicycle_prediction_grows_position_cov(self):
        covs = NoiseCovs(1e-3 * np.eye(4), 0.5 * np.eye(3))
        b = GaussianBelief(np.array([0.0, 0.0, 0.0]), np.eye(3))
        out = ekf_predict(b, TargetModel(models.UNICYCLE), (1.0, 0.2),
                          covs, 0.5)
        assert out.cov[0, 0] >= b.cov[0, 0]
        assert np.allclose(out.cov, out.cov.T)


class TestUpdate:
    def test_missing_measurement_is_identity(self):
        b = GaussianBelief(np.array([3.0, 4.0]), 2.0 * np.eye(2))
        out = ekf_update(b, None, RB, RobotState(0, 0, 0, 0))
        assert out is b

    def test_missing_measurement_path_bit_identical(self):
        """A sequence of predictions with no detections must match the
        pure-prediction recursion exactly, bit for bit."""
        b = GaussianBelief(np.array([3.0, 4.0]), 25.0 * np.eye(2))
        ref = b
        for k in range(20):
            b = ekf_predict(b, LIN, (0.3, -0.2), COVS2, 0.5)
            b = ekf_update(b, None, RB, RobotState(0, 0, 0, 0))
            ref = ekf_predict(ref, LIN, (0.3, -0.2), COVS2, 0.5)
        assert b.mean.tobytes() == ref.mean.tobytes()
        assert b.cov.tobytes() == ref.cov.tobytes()

    def test_scalar_surrogate_gain(self):
        """1-D analogue through the 2-D machinery: with prior variance 1,
        unit-noise direct observation, the Kalman gain is 1/2 and the
        posterior variance 1/2."""
        # Position (1, 0) relative to the robot: range measures x directly.
        big = 1e12
        sensor = SensorModel(models.RANGE_BEARING, np.diag([1.0, big]))
        prior = GaussianBelief(np.array([1.0, 0.0]),
                               np.diag([1.0, 1e-18]))
        y = np.array([2.0, 0.0])  # innovation of +1 in range
        out = ekf_update(prior, y, sensor, RobotState(0, 0, 0, 0))
        assert out.mean[0] == pytest.approx(1.5, abs=1e-6)
        assert out.cov[0, 0] == pytest.approx(0.5, abs=1e-6)

    def test_update_shrinks_covariance(self, rng):
        for _ in range(20):
            mean = rng.uniform(-5, 5, 2)
            zr = RobotState(*rng.uniform(-5, 5, 2), rng.uniform(-1, 1), 0.0)
            if math.hypot(mean[0] - zr.x, mean[1] - zr.y) < 1.0:
                continue
            A = rng.uniform(-1, 1, (2, 2))
            P = A @ A.T + 0.5 * np.eye(2)
            prior = GaussianBelief(mean, P)
            y = models.measure(RB, mean + rng.uniform(-0.2, 0.2, 2), zr)
            out = ekf_update(prior, y, RB, zr)
            assert np.linalg.det(out.cov) <= np.linalg.det(P) + 1e-12
            assert np.linalg.eigvalsh(out.cov)[0] > -1e-12

    def test_bearing_innovation_wraps(self):
        """A measured bearing just across the +/- pi seam from the predicted
        one must produce a small innovation, not one of nearly 2*pi."""
        zr = RobotState(0.0, 0.0, 0.0, 0.0)
        eps = 0.01
        prior_mean = np.array([-5.0, -5.0 * math.tan(eps)])  # bearing ~ -pi+eps
        prior = GaussianBelief(prior_mean, 0.5 * np.eye(2))
        y_wrapped = np.array([float(np.hypot(*prior_mean)), math.pi - eps])
        out = ekf_update(prior, y_wrapped, RB, zr)
        # Small innovation (2*eps wrapped), so the mean barely moves.
        assert np.linalg.norm(out.mean - prior_mean) < 0.5

    def test_consistency_monte_carlo(self, rng):
        """Repeated updates from noisy measurements concentrate the estimate
        near the true position."""
        true = np.array([4.0, 3.0])
        zr = RobotState(0.0, 0.0, 0.0, 0.0)
        L = np.linalg.cholesky(RB.noise_cov)
        b = GaussianBelief(true + rng.standard_normal(2),
                           25.0 * np.eye(2))
        for _ in range(100):
            y = models.measure(RB, true, zr) + L @ rng.standard_normal(2)
            b = ekf_update(b, y, RB, zr)
        assert np.linalg.norm(b.mean - true) < 0.2
        assert np.trace(b.cov) < 0.1


def test_symmetrize():
    M = np.array([[1.0, 2.0], [0.0, 1.0]])
    S = symmetrize(M)
    assert np.array_equal(S, S.T)
    assert np.allclose(S, [[1.0, 1.0], [1.0, 1.0]])


def test_belief_shape_validation():
    with pytest.raises(ValueError):
        GaussianBelief(np.zeros(3), np.eye(2))
