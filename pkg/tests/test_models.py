import math

import numpy as np
import pytest

from vistrack import models
from vistrack.models import (Limits, NoiseCovs, RobotInput, RobotState,
                             SensorModel, TargetModel, ZeroRangeError,
                             measure, measurement_jacobian, robot_jacobian,
                             robot_step, target_jacobian, target_step)

FD_H = 1e-6
FD_TOL = 1e-5


def central_diff_jacobian(f, x, h=FD_H):
    x = np.asarray(x, dtype=float)
    y0 = np.asarray(f(x))
    J = np.zeros((len(y0), len(x)))
    for j in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        J[:, j] = (np.asarray(f(xp)) - np.asarray(f(xm))) / (2.0 * h)
    return J


class TestRobotStep:
    def test_known_step(self):
        z = RobotState(32.0, 7.0, 0.75 * math.pi, 0.0)
        u = RobotInput(math.pi / 3.0, 2.0)
        out = robot_step(z, u, 0.5)
        assert out.x == pytest.approx(32.0, abs=1e-12)
        assert out.y == pytest.approx(7.0, abs=1e-12)
        assert out.heading == pytest.approx(0.75 * math.pi + math.pi / 6.0,
                                            abs=1e-12)
        assert out.speed == pytest.approx(1.0, abs=1e-12)

    def test_zero_input_straight_line(self):
        z = RobotState(1.0, 2.0, 0.0, 3.0)
        out = robot_step(z, RobotInput(0.0, 0.0), 0.5)
        assert out.x == pytest.approx(2.5)
        assert out.y == pytest.approx(2.0)
        assert out.heading == 0.0
        assert out.speed == 3.0

    def test_heading_wraps(self):
        z = RobotState(0.0, 0.0, math.pi - 0.1, 0.0)
        out = robot_step(z, RobotInput(1.0, 0.0), 0.5)
        assert -math.pi < out.heading <= math.pi


class TestTargetStep:
    def test_linear(self):
        m = TargetModel(models.LINEAR)
        out = target_step(m, (1.0, 2.0), (2.0, -1.0), 0.5)
        assert np.allclose(out, (2.0, 1.5))

    def test_unicycle(self):
        m = TargetModel(models.UNICYCLE)
        out = target_step(m, (0.0, 0.0, math.pi / 2.0), (2.0, 1.0), 0.5)
        assert out[0] == pytest.approx(0.0, abs=1e-12)
        assert out[1] == pytest.approx(1.0)
        assert out[2] == pytest.approx(math.pi / 2.0 + 0.5)

    def test_dimension_checks(self):
        with pytest.raises(ValueError):
            target_step(TargetModel(models.LINEAR), (0, 0, 0), (0, 0), 0.5)
        with pytest.raises(ValueError):
            target_step(TargetModel(models.UNICYCLE), (0, 0), (0, 0), 0.5)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            TargetModel("bicycle")


class TestMeasure:
    RB = SensorModel(models.RANGE_BEARING, 0.1 * np.eye(2))
    CAM = SensorModel(models.CAMERA_POSE, 0.1 * np.eye(3))

    def test_range_bearing_example(self):
        y = measure(self.RB, (3.0, 4.0), RobotState(0.0, 0.0, 0.0, 0.0))
        assert y[0] == pytest.approx(5.0, abs=1e-12)
        assert y[1] == pytest.approx(math.atan2(4.0, 3.0), abs=1e-12)

    def test_bearing_relative_to_heading(self):
        y = measure(self.RB, (0.0, 2.0),
                    RobotState(0.0, 0.0, math.pi / 2.0, 0.0))
        assert y[1] == pytest.approx(0.0, abs=1e-12)

    def test_camera_appends_relative_orientation(self):
        y = measure(self.CAM, (3.0, 0.0, 1.0),
                    RobotState(0.0, 0.0, 0.25, 0.0))
        assert len(y) == 3
        assert y[2] == pytest.approx(0.75, abs=1e-12)

    def test_zero_range_raises(self):
        with pytest.raises(ZeroRangeError):
            measure(self.RB, (1.0, 1.0), RobotState(1.0, 1.0, 0.0, 0.0))

    def test_rigid_motion_invariance(self, rng):
        """The measurement depends only on the relative configuration."""
        for _ in range(30):
            zt = rng.uniform(-5, 5, 2)
            zr = RobotState(*rng.uniform(-5, 5, 2),
                            rng.uniform(-math.pi, math.pi), 0.0)
            if math.hypot(zt[0] - zr.x, zt[1] - zr.y) < 1e-3:
                continue
            shift = rng.uniform(-10, 10, 2)
            y0 = measure(self.RB, zt, zr)
            y1 = measure(self.RB, zt + shift,
                         RobotState(zr.x + shift[0], zr.y + shift[1],
                                    zr.heading, 0.0))
            assert np.allclose(y0, y1, atol=1e-9)


class TestJacobians:
    def test_robot_jacobian_vs_fd(self, rng):
        for _ in range(30):
            z = rng.uniform(-5, 5, 4)
            u = RobotInput(*rng.uniform(-1, 1, 2))

            def f(x):
                out = robot_step(RobotState(*x), u, 0.5)
                return [out.x, out.y,
                        x[2] + u.omega * 0.5,  # unwrapped for differencing
                        out.speed]

            A = robot_jacobian(RobotState(*z), 0.5)
            assert np.allclose(A, central_diff_jacobian(f, z), atol=FD_TOL)

    def test_target_jacobian_vs_fd(self, rng):
        m = TargetModel(models.UNICYCLE)
        for _ in range(30):
            z = rng.uniform(-2, 2, 3)
            u = rng.uniform(-1, 1, 2)

            def f(x):
                out = target_step(m, x, u, 0.5)
                out[2] = x[2] + u[1] * 0.5
                return out

            A = target_jacobian(m, z, u, 0.5)
            assert np.allclose(A, central_diff_jacobian(f, z), atol=FD_TOL)

    def test_linear_target_jacobian(self):
        A = target_jacobian(TargetModel(models.LINEAR), (0, 0), (1, 1), 0.5)
        assert np.array_equal(A, np.eye(2))

    def test_measurement_jacobian_vs_fd(self, rng):
        rb = SensorModel(models.RANGE_BEARING, 0.1 * np.eye(2))
        cam = SensorModel(models.CAMERA_POSE, 0.1 * np.eye(3))
        for _ in range(30):
            zr = RobotState(*rng.uniform(-5, 5, 2),
                            rng.uniform(-1, 1), 0.0)
            zt = rng.uniform(-5, 5, 3)
            if math.hypot(zt[0] - zr.x, zt[1] - zr.y) < 0.5:
                continue
            C = measurement_jacobian(cam, zt, zr)
            J = central_diff_jacobian(lambda x: measure(cam, x, zr), zt)
            assert np.allclose(C, J, atol=FD_TOL)
            C2 = measurement_jacobian(rb, zt[:2], zr)
            J2 = central_diff_jacobian(lambda x: measure(rb, x, zr), zt[:2])
            assert np.allclose(C2, J2, atol=FD_TOL)

    def test_measurement_jacobian_zero_range(self):
        rb = SensorModel(models.RANGE_BEARING, 0.1 * np.eye(2))
        with pytest.raises(ZeroRangeError):
            measurement_jacobian(rb, (2.0, 3.0), RobotState(2.0, 3.0, 0, 0))


class TestValidation:
    def test_sensor_noise_shape(self):
        with pytest.raises(ValueError):
            SensorModel(models.RANGE_BEARING, np.eye(3))
        with pytest.raises(ValueError):
            SensorModel(models.CAMERA_POSE, [[1, 0.5, 0], [0, 1, 0], [0, 0, 1]])

    def test_noise_covs_shape(self):
        with pytest.raises(ValueError):
            NoiseCovs(np.eye(3), np.eye(2))

    def test_limits(self):
        with pytest.raises(ValueError):
            Limits(accel=(2.0, -4.0))
        with pytest.raises(ValueError):
            Limits(speed_max=0.0)
