"""Visibility-aware belief-space MPC target tracking in cluttered 2D maps."""

from .geom2d import (ConvexBody, FovParams, InvalidGeometryError, Pose2,
                     SdfResult, convexify_fov, exact_visibility,
                     signed_distance, wrap_angle)
from .models import (Limits, NoiseCovs, RobotInput, RobotState, SensorModel,
                     TargetModel, measure, robot_step, target_step)
from .estimator import GaussianBelief, ekf_predict, ekf_update
from .belief import (RobotBelief, TargetBelief, belief_entropy,
                     bpod_covariance_update, propagate_robot_belief)
from .possdf import (SdfParams, StackedGaussian, bpod, gamma_lo, gamma_ro,
                     gamma_tf, linear_gaussian_prob, mc_bpod_oracle,
                     possdf_prob)
from .planner import (PlannerConfig, RolloutResult, ScpParams, World,
                      objective, penalty_objective, rollout, scp_solve,
                      valid_obstacles)
from .sim import (EpisodeLog, Metrics, Scenario, compute_metrics,
                  estimate_target_control, generate_target_trajectory,
                  load_scenario, run_batch, run_episode)

__version__ = "0.1.0"
