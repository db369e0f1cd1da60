import math

import numpy as np
import pytest

from vistrack import models, planner
from vistrack.belief import RobotBelief, TargetBelief
from vistrack.geom2d import ConvexBody, FovParams
from vistrack.models import Limits, NoiseCovs, RobotState, SensorModel
from vistrack.planner import (PlannerConfig, PlannerFailure, ScpParams, World,
                              penalty_objective, rollout, scp_solve,
                              valid_obstacles)

FOV = FovParams(r1=2.0, r2=10.0, psi=2.0 * math.pi / 3.0, arc_segments=6)


def make_world(obstacles=()):
    target = models.TargetModel("linear")
    sensor = SensorModel("range_bearing", 0.01 * np.eye(2))
    covs = NoiseCovs(robot=1e-3 * np.eye(4), target=0.05 * np.eye(2))
    return World(list(obstacles), FOV, target, sensor, covs)


def make_cfg(**kw):
    kw.setdefault("objective", "bpod")
    return PlannerConfig(**kw)


def beliefs(rx=0.0, ry=0.0, heading=0.0, tx=5.0, ty=0.0):
    rb = RobotBelief(RobotState(rx, ry, heading, 0.0), 1e-6 * np.eye(4))
    tb = TargetBelief(np.array([tx, ty], dtype=float), 0.1 * np.eye(2))
    return rb, tb


def zero_target_u(cfg, dim=2):
    return np.zeros((cfg.horizon, dim))


class TestValidObstacles:
    def test_radius_filter(self):
        near = ConvexBody.polygon([(2, 2), (4, 2), (4, 4), (2, 4)])
        far = ConvexBody.polygon([(30, 30), (32, 30), (32, 32), (30, 32)])
        world = make_world([near, far])
        idx = valid_obstacles(world, (0.0, 0.0), (6.0, 0.0), 8.0)
        assert idx == [0]
        assert valid_obstacles(world, (0.0, 0.0), (6.0, 0.0), 50.0) == [0, 1]

    def test_threshold_is_closed(self):
        obs = ConvexBody.polygon([(0, 3), (2, 3), (2, 5), (0, 5)])
        world = make_world([obs])
        assert valid_obstacles(world, (0.0, 0.0), (4.0, 0.0), 3.0) == [0]
        assert valid_obstacles(world, (0.0, 0.0), (4.0, 0.0), 2.9) == []


class TestRollout:
    def test_frozen_equals_fresh_at_linearization(self):
        """Re-rolling the same controls under stored parameters reproduces
        the fresh evaluation exactly: the parameters were built there."""
        world = make_world([ConvexBody.polygon([(3, 2), (5, 2), (5, 4),
                                                (3, 4)])])
        cfg = make_cfg()
        rb, tb = beliefs()
        u = np.tile([0.2, 0.5], cfg.horizon)
        r1 = rollout(u, rb, tb, world, cfg, zero_target_u(cfg))
        r2 = rollout(u, rb, tb, world, cfg, zero_target_u(cfg),
                     frozen=r1.params)
        for a, b in zip(r1.gammas, r2.gammas):
            assert a.gamma == pytest.approx(b.gamma, abs=1e-15)
            assert a.tf == pytest.approx(b.tf, abs=1e-15)

    def test_covariance_shrinks_when_seen(self):
        world = make_world()
        cfg = make_cfg()
        rb, tb = beliefs(tx=5.0)
        u = np.zeros(2 * cfg.horizon)
        r = rollout(u, rb, tb, world, cfg, zero_target_u(cfg))
        assert r.gammas[0].gamma > 0.9
        prior_det = np.linalg.det(tb.cov + world.covs.target)
        assert np.linalg.det(r.target_beliefs[0].cov) < prior_det

    def test_covariance_grows_when_unseen(self):
        world = make_world()
        cfg = make_cfg()
        rb, tb = beliefs(tx=-8.0)  # behind the robot
        u = np.zeros(2 * cfg.horizon)
        r = rollout(u, rb, tb, world, cfg, zero_target_u(cfg))
        assert r.gammas[0].gamma < 0.05
        dets = [np.linalg.det(tb.cov)] + [
            np.linalg.det(t.cov) for t in r.target_beliefs]
        assert all(b > a * 0.999 for a, b in zip(dets, dets[1:]))


class TestSuffixGradient:
    def test_matches_naive_finite_differences(self):
        """The suffix-reuse gradient must equal a plain central difference of
        the frozen-parameter penalty objective."""
        world = make_world([ConvexBody.polygon([(4, 1), (6, 1), (6, 3),
                                                (4, 3)])])
        cfg = make_cfg(horizon=3)
        rb, tb = beliefs(tx=6.0, ty=-1.0)
        tu = zero_target_u(cfg)
        x0 = np.array([0.3, 1.0, -0.2, 0.5, 0.1, -0.3])
        base = rollout(x0, rb, tb, world, cfg, tu)
        C0 = base.params
        eta = 10.0
        J0, grad = planner._frozen_penalty_gradient(
            x0, rb, tb, world, cfg, tu, C0, eta)

        def J(x):
            r = rollout(x, rb, tb, world, cfg, tu, frozen=C0)
            return penalty_objective(r, eta, cfg)[0]

        assert J0 == pytest.approx(J(x0), abs=1e-12)
        h = planner.FD_STEP
        for i in range(len(x0)):
            e = np.zeros_like(x0)
            e[i] = h
            ref = (J(x0 + e) - J(x0 - e)) / (2.0 * h)
            assert grad[i] == pytest.approx(ref, abs=1e-9)


class TestScpSolve:
    def test_turns_toward_target_behind(self):
        world = make_world()
        cfg = make_cfg()
        rb, tb = beliefs(heading=math.pi, tx=6.0, ty=0.0)
        u, roll, diag = scp_solve(rb, tb, world, cfg, ScpParams(),
                                  zero_target_u(cfg))
        # A target dead astern: the solution must command a hard turn.
        assert abs(u[0]) > 0.5 * cfg.limits.omega[1]
        assert roll.gammas[-1].gamma > roll.gammas[0].gamma

    def test_improves_on_idle(self):
        world = make_world()
        cfg = make_cfg()
        rb, tb = beliefs(heading=math.pi / 2, tx=7.0, ty=0.0)
        tu = zero_target_u(cfg)
        u, roll, diag = scp_solve(rb, tb, world, cfg, ScpParams(), tu)
        idle = rollout(np.zeros(2 * cfg.horizon), rb, tb, world, cfg, tu)
        eta = ScpParams().eta0
        assert penalty_objective(roll, eta, cfg)[0] <= \
            penalty_objective(idle, eta, cfg)[0] + 1e-9

    def test_respects_control_box(self):
        world = make_world()
        cfg = make_cfg()
        rb, tb = beliefs(heading=math.pi, tx=6.0)
        u, _, _ = scp_solve(rb, tb, world, cfg, ScpParams(),
                            zero_target_u(cfg))
        lim = cfg.limits
        for i in range(cfg.horizon):
            assert lim.omega[0] - 1e-12 <= u[2 * i] <= lim.omega[1] + 1e-12
            assert lim.accel[0] - 1e-12 <= u[2 * i + 1] <= lim.accel[1] + 1e-12

    def test_mean_speed_stays_in_range(self):
        world = make_world()
        cfg = make_cfg()
        rb, tb = beliefs(tx=9.5)
        u, roll, _ = scp_solve(rb, tb, world, cfg, ScpParams(),
                               zero_target_u(cfg))
        for rbk in roll.robot_beliefs:
            assert -1e-9 <= rbk.mean.speed <= cfg.limits.speed_max + 1e-9

    def test_infeasible_start_raises(self):
        obs = ConvexBody.polygon([(-1, -1), (1, -1), (1, 1), (-1, 1)])
        world = make_world([obs])
        cfg = make_cfg()
        rb, tb = beliefs(rx=0.0, ry=0.0)
        with pytest.raises(PlannerFailure):
            scp_solve(rb, tb, world, cfg, ScpParams(), zero_target_u(cfg))

    def test_collision_chance_constraint_holds(self):
        obs = ConvexBody.polygon([(2, -1), (4, -1), (4, 1), (2, 1)])
        world = make_world([obs])
        cfg = make_cfg()
        rb, tb = beliefs(rx=0.0, ry=-3.0, heading=0.5, tx=6.0, ty=-3.0)
        u, roll, _ = scp_solve(rb, tb, world, cfg, ScpParams(),
                               zero_target_u(cfg))
        for g in roll.gammas:
            for val in g.ro.values():
                assert val <= cfg.delta_s + 1e-6


class TestConfigValidation:
    def test_bad_horizon(self):
        with pytest.raises(ValueError):
            PlannerConfig(horizon=0)

    def test_bad_risk_budget(self):
        with pytest.raises(ValueError):
            PlannerConfig(delta_s=0.0)

    def test_bad_objective(self):
        with pytest.raises(ValueError):
            PlannerConfig(objective="fastest")

    def test_bad_scp_ratios(self):
        with pytest.raises(ValueError):
            ScpParams(beta=1.0)
        with pytest.raises(ValueError):
            ScpParams(trust_expand=0.9)
