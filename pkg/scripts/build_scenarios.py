"""Build the bundled scenario files.

Designs the tracking map (60x50 m, ten convex obstacles), converts a waypoint
polyline into a constant-speed velocity script for the point-mass target, and
writes case1.json / case2.json into src/vistrack/scenarios/.  Run from the
repository root:

    python3 scripts/build_scenarios.py
"""

import json
import math
import os

import numpy as np

from vistrack.geom2d import ConvexBody, signed_distance

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, os.pardir, "src", "vistrack", "scenarios")

BOUNDS = (60.0, 50.0)

OBSTACLES = [
    [(10, 10), (14, 10), (14, 18), (10, 18)],
    [(20, 20), (26, 20), (26, 24), (20, 24)],
    [(36, 14), (42, 14), (39, 20)],
    [(46, 8), (52, 8), (52, 12), (46, 12)],
    [(10, 32), (15, 31), (17, 35), (13, 39), (9, 36)],
    [(24, 34), (30, 34), (30, 38), (24, 38)],
    [(40, 30), (46, 32), (42, 38)],
    [(50, 22), (56, 22), (56, 28), (50, 28)],
    [(4, 18), (8, 18), (8, 24), (4, 24)],
    [(33, 42), (38, 42), (38, 46), (33, 46)],
]

# Waypoints for the scripted target: long straight legs punctuated by sharp
# turns taken close to obstacle corners.
WAYPOINTS = [
    (28, 9), (17, 8), (15.5, 20), (18, 27), (28, 28), (34, 22), (34.5, 13),
    (44, 6), (54, 6), (56.5, 14), (55, 18), (49, 20.5), (47.5, 32), (47.5, 40),
    (40, 41), (30, 41), (22, 40), (20, 33), (17, 28),
]

SPEED = 1.2
DT = 0.5


def script_from_waypoints(waypoints, speed, dt):
    """Per-step velocity vectors walking the polyline at constant speed."""
    controls = []
    pts = [np.array(w, dtype=float) for w in waypoints]
    pos = pts[0].copy()
    for nxt in pts[1:]:
        while True:
            gap = nxt - pos
            dist = float(np.hypot(*gap))
            if dist < speed * dt:
                break
            v = gap / dist * speed
            controls.append(v)
            pos = pos + v * dt
    return np.array(controls)


def validate(script, start, clearance=0.8):
    bodies = [ConvexBody.polygon(v) for v in OBSTACLES]
    pos = np.array(start, dtype=float)
    worst = np.inf
    for k, v in enumerate(script):
        pos = pos + v * DT
        if not (1.0 <= pos[0] <= BOUNDS[0] - 1.0
                and 1.0 <= pos[1] <= BOUNDS[1] - 1.0):
            raise SystemExit(f"step {k}: target leaves the map at {pos}")
        p = ConvexBody.point(pos)
        for i, b in enumerate(bodies):
            sd = signed_distance(p, b).signed_distance
            worst = min(worst, sd)
            if sd < clearance:
                raise SystemExit(
                    f"step {k}: clearance {sd:.2f} m to obstacle {i} at {pos}")
    return worst


def common(objective):
    return {
        "map": {"bounds": list(BOUNDS)},
        "obstacles": [[list(map(float, v)) for v in poly]
                      for poly in OBSTACLES],
        "fov": {"r1": 2.0, "r2": 10.0, "psi": 2.0 * math.pi / 3.0,
                "arc_segments": 6},
        "robot_init": [32.0, 7.0, 0.75 * math.pi, 0.0],
        "limits": {"accel": [-4.0, 2.0],
                   "omega": [-math.pi / 3.0, math.pi / 3.0],
                   "speed_max": 4.0},
        "planner": {"objective": objective, "relax_tf": 0.05,
                    "relax_lo": 0.05},
    }


def main():
    script = script_from_waypoints(WAYPOINTS, SPEED, DT)
    worst = validate(script, WAYPOINTS[0])
    print(f"case1 script: {len(script)} steps, "
          f"worst obstacle clearance {worst:.2f} m")

    case1 = common("entropy")
    case1.update({
        "sensor": {"kind": "range_bearing",
                   "noise": [[0.3, 0.0], [0.0, 0.05]]},
        "noise": {
            "robot": (1e-3 * np.diag([4.0, 4.0, 0.4, 0.4])).tolist(),
            "target": (0.01 * np.eye(2)).tolist(),
        },
        "target": {"model": "linear", "init": [28.0, 9.0],
                   "script": [list(map(float, v)) for v in script],
                   "generator": None},
        "episode": {"max_steps": 200, "loss_limit": 15,
                    "seeds": list(range(50))},
    })

    case2 = common("bpod")
    case2["planner"].update({"standoff_weight": 0.02, "standoff_dist": 4.5})
    case2.update({
        "sensor": {"kind": "camera",
                   "noise": (1e-2 * np.diag([1.0, 0.5, 1.0])).tolist()},
        "noise": {
            "robot": (1e-3 * np.diag([4.0, 4.0, 0.4, 0.4])).tolist(),
            # Deliberately conservative filter tuning; the simulated target
            # tracks its script much more tightly.
            "target": (0.5 * np.eye(3)).tolist(),
            "target_true": (1e-3 * np.eye(3)).tolist(),
        },
        "target": {"model": "unicycle", "init": [28.0, 9.0, math.pi],
                   "script": None,
                   "generator": {"v_max": 2.0, "steps": 400, "seed": 7}},
        "episode": {"max_steps": 400, "loss_limit": 15,
                    "seeds": list(range(50))},
    })

    os.makedirs(OUT, exist_ok=True)
    for name, doc in (("case1", case1), ("case2", case2)):
        path = os.path.join(OUT, name + ".json")
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        print("wrote", os.path.normpath(path))


if __name__ == "__main__":
    main()
