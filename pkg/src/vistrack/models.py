"""Robot/target motion models, sensor models, and analytic Jacobians."""

import math
from dataclasses import dataclass, field

import numpy as np

from .geom2d import wrap_angle

LINEAR = "linear"
UNICYCLE = "unicycle"
RANGE_BEARING = "range_bearing"
CAMERA_POSE = "camera"


class ZeroRangeError(ValueError):
    """Target coincides with the robot position; bearing is undefined."""


@dataclass(frozen=True)
class RobotState:
    x: float
    y: float
    heading: float
    speed: float

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def position(self):
        return np.array([self.x, self.y])

    def as_array(self):
        return np.array([self.x, self.y, self.heading, self.speed])

    @classmethod
    def from_array(cls, z):
        return cls(float(z[0]), float(z[1]), float(z[2]), float(z[3]))


@dataclass(frozen=True)
class RobotInput:
    omega: float
    accel: float

    def as_array(self):
        return np.array([self.omega, self.accel])


@dataclass(frozen=True)
class TargetModel:
    """Target kinematics: a position-only integrator (control known) or a
    unicycle with state [x, y, heading] (control unknown, estimated online)."""
    kind: str

    def __post_init__(self):
        if self.kind not in (LINEAR, UNICYCLE):
            raise ValueError(f"unknown target model {self.kind!r}")

    @property
    def dim(self):
        return 2 if self.kind == LINEAR else 3


@dataclass(frozen=True)
class SensorModel:
    """Measurement model and its noise covariance.

    ``range_bearing`` returns [range, bearing]; ``camera`` appends the target
    orientation relative to the robot heading.
    """
    kind: str
    noise_cov: np.ndarray

    def __post_init__(self):
        if self.kind not in (RANGE_BEARING, CAMERA_POSE):
            raise ValueError(f"unknown sensor model {self.kind!r}")
        R = np.asarray(self.noise_cov, dtype=float)
        if R.shape != (self.dim, self.dim):
            raise ValueError("noise_cov shape mismatch")
        if not np.allclose(R, R.T, atol=1e-9):
            raise ValueError("noise_cov must be symmetric")
        object.__setattr__(self, "noise_cov", R)

    @property
    def dim(self):
        return 2 if self.kind == RANGE_BEARING else 3

    @property
    def angular_components(self):
        return (1,) if self.kind == RANGE_BEARING else (1, 2)


@dataclass(frozen=True)
class Limits:
    accel: tuple = (-4.0, 2.0)
    omega: tuple = (-math.pi / 3, math.pi / 3)
    speed_max: float = 4.0

    def __post_init__(self):
        if not (self.accel[0] < self.accel[1] and self.omega[0] < self.omega[1]
                and self.speed_max > 0):
            raise ValueError("inconsistent limits")


@dataclass(frozen=True)
class NoiseCovs:
    """Process noise covariances for the robot (4x4) and target (d_t x d_t)."""
    robot: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        Rr = np.asarray(self.robot, dtype=float)
        Rt = np.asarray(self.target, dtype=float)
        if Rr.shape != (4, 4):
            raise ValueError("robot noise must be 4x4")
        object.__setattr__(self, "robot", Rr)
        object.__setattr__(self, "target", Rt)


def robot_step(z: RobotState, u: RobotInput, dt: float) -> RobotState:
    """Noiseless unicycle step z + [v cos h, v sin h, omega, a] * dt."""
    return RobotState(
        z.x + z.speed * math.cos(z.heading) * dt,
        z.y + z.speed * math.sin(z.heading) * dt,
        z.heading + u.omega * dt,
        z.speed + u.accel * dt,
    )


def target_step(model: TargetModel, z, u, dt: float):
    """Noiseless target step for either model kind."""
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    if model.kind == LINEAR:
        if z.shape != (2,) or u.shape != (2,):
            raise ValueError("linear target expects 2D state and control")
        return z + u * dt
    if z.shape != (3,) or u.shape != (2,):
        raise ValueError("unicycle target expects 3D state, 2D control")
    v, om = u
    return np.array([
        z[0] + v * math.cos(z[2]) * dt,
        z[1] + v * math.sin(z[2]) * dt,
        wrap_angle(z[2] + om * dt),
    ])


def measure(sensor: SensorModel, zt, zr: RobotState):
    """Noiseless measurement f^s(z^t, z^r)."""
    zt = np.asarray(zt, dtype=float)
    dx, dy = zt[0] - zr.x, zt[1] - zr.y
    rng = math.hypot(dx, dy)
    if rng <= 1e-12:
        raise ZeroRangeError("target at robot position: bearing undefined")
    bearing = wrap_angle(math.atan2(dy, dx) - zr.heading)
    if sensor.kind == RANGE_BEARING:
        return np.array([rng, bearing])
    return np.array([rng, bearing, wrap_angle(zt[2] - zr.heading)])


_EYE2 = np.eye(2)
_EYE3 = np.eye(3)
_EYE4 = np.eye(4)


def robot_jacobian(z: RobotState, dt: float):
    """d f^r / d z^r at (z, u); independent of the control."""
    A = _EYE4.copy()
    A[0, 2] = -z.speed * math.sin(z.heading) * dt
    A[0, 3] = math.cos(z.heading) * dt
    A[1, 2] = z.speed * math.cos(z.heading) * dt
    A[1, 3] = math.sin(z.heading) * dt
    return A


def target_jacobian(model: TargetModel, z, u, dt: float):
    """d f^t / d z^t at (z, u)."""
    if model.kind == LINEAR:
        return _EYE2.copy()
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    A = _EYE3.copy()
    A[0, 2] = -u[0] * math.sin(z[2]) * dt
    A[1, 2] = u[0] * math.cos(z[2]) * dt
    return A


def measurement_jacobian(sensor: SensorModel, zt, zr: RobotState):
    """d f^s / d z^t at the linearization point."""
    zt = np.asarray(zt, dtype=float)
    dx, dy = zt[0] - zr.x, zt[1] - zr.y
    r2 = dx * dx + dy * dy
    if r2 <= 1e-24:
        raise ZeroRangeError("zero range: measurement Jacobian singular")
    rng = math.sqrt(r2)
    d_t = len(zt)
    C = np.zeros((sensor.dim, d_t))
    C[0, 0] = dx / rng
    C[0, 1] = dy / rng
    C[1, 0] = -dy / r2
    C[1, 1] = dx / r2
    if sensor.kind == CAMERA_POSE:
        C[2, 2] = 1.0
    return C
