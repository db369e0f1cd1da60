"""Command-line front end: closed-loop batches, detection-probability
validation against Monte Carlo, trajectory generation, and timing."""

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import geom2d, models, possdf, sim
from .belief import RobotBelief, TargetBelief
from .models import RobotState


def _load(path):
    try:
        return sim.load_scenario(path)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(2)


def _cmd_run(args):
    scenario = _load(args.scenario)
    if args.objective is not None:
        from dataclasses import replace
        scenario = replace(scenario, planner_cfg=replace(
            scenario.planner_cfg, objective=args.objective))
    if args.seed_list is not None:
        seeds = tuple(args.seed_list)
    elif args.seeds is not None:
        seeds = tuple(range(args.seeds))
    else:
        seeds = scenario.seeds
    out = args.out
    if out:
        os.makedirs(out, exist_ok=True)
    logs, metrics = sim.run_batch(scenario, seeds)
    summary = sim.batch_summary(metrics)
    summary["seeds"] = list(seeds)
    if out:
        for seed, log in zip(seeds, logs):
            sim.write_episode_csv(log, os.path.join(out,
                                                    f"episode_{seed}.csv"))
            sim.write_belief_log(log, os.path.join(out,
                                                   f"beliefs_{seed}.jsonl"))
        with open(os.path.join(out, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
            fh.write("\n")
    print(json.dumps(summary["aggregate"], indent=1, sort_keys=True))
    failed = [m for m in metrics if m.outcome != sim.OUTCOME_SUCCESS]
    return 1 if failed else 0


def _cmd_bpod_check(args):
    scenario = _load(args.scenario)
    obstacles = list(scenario.obstacles)
    try:
        with open(args.states) as fh:
            states = [json.loads(line) for line in fh if line.strip()]
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.limit:
        states = states[:args.limit]
    errors = []
    for i, st in enumerate(states):
        rb = RobotBelief(RobotState.from_array(np.array(st["rb_mean"])),
                         np.array(st["rb_cov"]).reshape(4, 4))
        tm = np.array(st["tb_mean"])
        d_t = len(tm)
        tb = TargetBelief(tm, np.array(st["tb_cov"]).reshape(d_t, d_t))
        g_tf = possdf.gamma_tf(rb, tb, scenario.fov)
        g_lo = [possdf.gamma_lo(rb, tb, obs) for obs in obstacles]
        g = possdf.bpod(g_tf, g_lo)
        est, stderr = possdf.mc_bpod_oracle(rb, tb, obstacles, scenario.fov,
                                            args.samples, seed=[args.seed, i])
        errors.append(abs(g - est))
    report = {"states": len(states), "samples": args.samples,
              "mae": float(np.mean(errors)) if errors else 0.0,
              "max_error": float(np.max(errors)) if errors else 0.0}
    print(json.dumps(report, indent=1, sort_keys=True))
    return 0


def _cmd_gen_trajectories(args):
    scenario = _load(args.scenario)
    os.makedirs(args.out, exist_ok=True)
    init = np.asarray(scenario.target_init, dtype=float)
    if init.size == 2:
        init = np.array([init[0], init[1], 0.0])
    for i in range(args.count):
        try:
            script = sim.generate_target_trajectory(
                scenario.bounds, list(scenario.obstacles), init,
                args.vmax, args.steps, seed=[args.seed, i],
                dt=scenario.planner_cfg.dt)
        except sim.TrajectoryGenerationError as exc:
            print(f"error: trajectory {i}: {exc}", file=sys.stderr)
            return 1
        path = os.path.join(args.out, f"trajectory_{i}.csv")
        with open(path, "w") as fh:
            fh.write("speed,turn_rate\n")
            for v, om in script:
                fh.write(f"{v:.17g},{om:.17g}\n")
    print(f"wrote {args.count} scripts to {args.out}")
    return 0


def _bench_geometry(n=2000):
    rng = np.random.default_rng(0)
    polys = []
    for _ in range(40):
        pts = rng.uniform(-3, 3, (12, 2))
        polys.append(geom2d.ConvexBody.polygon(_hull(pts)))
    t0 = time.perf_counter()
    for i in range(n):
        a = polys[i % 40]
        b = polys[(i * 7 + 3) % 40]
        geom2d.signed_distance(a, b)
    return (time.perf_counter() - t0) / n


def _hull(pts):
    pts = sorted(map(tuple, pts))
    lo, hi = [], []
    for p in pts:
        for chain in (lo,):
            while len(chain) >= 2 and _cross(chain[-2], chain[-1], p) <= 0:
                chain.pop()
            chain.append(p)
    for p in reversed(pts):
        while len(hi) >= 2 and _cross(hi[-2], hi[-1], p) <= 0:
            hi.pop()
        hi.append(p)
    return lo[:-1] + hi[:-1]


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _cmd_bench(args):
    scenario = _load(args.scenario)
    world = scenario.world()
    rng = np.random.default_rng(1)
    rb = RobotBelief(RobotState(30.0, 10.0, 2.0, 1.0),
                     np.diag([0.05, 0.05, 0.02, 0.01]))
    d_t = scenario.target_model.dim
    tb = TargetBelief(np.r_[26.0, 12.0, np.zeros(d_t - 2)],
                      0.5 * np.eye(d_t))
    obstacles = list(scenario.obstacles)

    from . import planner
    rpos = (rb.mean.x, rb.mean.y)
    tpos = (float(tb.mean[0]), float(tb.mean[1]))
    n = 2000
    times = {}
    t0 = time.perf_counter()
    for _ in range(n):
        valid = planner.valid_obstacles(
            world, rpos, tpos, scenario.planner_cfg.valid_obstacle_radius)
        g_tf = possdf.gamma_tf(rb, tb, scenario.fov)
        g_lo = [possdf.gamma_lo(rb, tb, obstacles[j]) for j in valid]
        possdf.bpod(g_tf, g_lo)
    times["bpod_eval_ms"] = (time.perf_counter() - t0) / n * 1e3

    times["signed_distance_ms"] = _bench_geometry() * 1e3

    from .estimator import GaussianBelief, ekf_predict, ekf_update
    est = GaussianBelief(tb.mean, tb.cov)
    y = models.measure(scenario.sensor, tb.mean, rb.mean)
    t0 = time.perf_counter()
    for _ in range(n):
        e2 = ekf_predict(est, scenario.target_model,
                         np.zeros(2), scenario.covs, 0.5)
        ekf_update(e2, y, scenario.sensor, rb.mean)
    times["ekf_step_ms"] = (time.perf_counter() - t0) / n * 1e3

    tu = np.zeros((scenario.planner_cfg.horizon, 2))
    t0 = time.perf_counter()
    reps = 20
    for _ in range(reps):
        planner.scp_solve(rb, tb, world, scenario.planner_cfg, scenario.scp,
                          tu)
    times["scp_solve_ms"] = (time.perf_counter() - t0) / reps * 1e3

    print(json.dumps({k: round(v, 4) for k, v in times.items()}, indent=1,
                     sort_keys=True))
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="vistrack",
        description="Visibility-aware target tracking simulator")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="run closed-loop episodes")
    pr.add_argument("--scenario", required=True)
    g = pr.add_mutually_exclusive_group()
    g.add_argument("--seeds", type=int, help="run seeds 0..N-1")
    g.add_argument("--seed-list", type=int, nargs="+")
    pr.add_argument("--objective", choices=["entropy", "bpod"])
    pr.add_argument("--out", help="directory for CSV/JSON outputs")
    pr.set_defaults(func=_cmd_run)

    pb = sub.add_parser("bpod-check",
                        help="compare bpod against Monte Carlo on logged "
                             "belief states")
    pb.add_argument("--scenario", required=True)
    pb.add_argument("--states", required=True,
                    help="belief log (JSON lines) from `run --out`")
    pb.add_argument("--samples", type=int, default=100000)
    pb.add_argument("--limit", type=int, default=0,
                    help="use only the first N states")
    pb.add_argument("--seed", type=int, default=0)
    pb.set_defaults(func=_cmd_bpod_check)

    pg = sub.add_parser("gen-trajectories",
                        help="generate random target control scripts")
    pg.add_argument("--scenario", required=True,
                    help="scenario providing map bounds and obstacles")
    pg.add_argument("--vmax", type=float, required=True)
    pg.add_argument("--count", type=int, default=50)
    pg.add_argument("--steps", type=int, default=400)
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("--out", default="trajectories")
    pg.set_defaults(func=_cmd_gen_trajectories)

    pe = sub.add_parser("bench", help="per-component timing")
    pe.add_argument("--scenario", required=True)
    pe.set_defaults(func=_cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        return exc.code
    except sim.ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
