import json
import math

import numpy as np
import pytest

from vistrack import cli


@pytest.fixture()
def scenario_path(tmp_path):
    doc = {
        "map": {"bounds": [40.0, 30.0]},
        "obstacles": [[[14.0, 4.0], [18.0, 4.0], [18.0, 8.0], [14.0, 8.0]]],
        "fov": {"r1": 2.0, "r2": 10.0, "psi": 2.0 * math.pi / 3.0,
                "arc_segments": 6},
        "robot_init": [5.0, 15.0, 0.0, 0.0],
        "sensor": {"kind": "range_bearing",
                   "noise": [[0.01, 0.0], [0.0, 0.005]]},
        "noise": {
            "robot": (1e-3 * np.eye(4)).tolist(),
            "target": (0.05 * np.eye(2)).tolist(),
            "target_true": (1e-3 * np.eye(2)).tolist(),
        },
        "target": {"model": "linear", "init": [11.0, 15.0],
                   "script": [[0.0, 0.0]] * 30, "generator": None},
        "planner": {"objective": "bpod"},
        "episode": {"max_steps": 30, "loss_limit": 15, "seeds": [0, 1]},
        "init_belief": {"cov_scale": 1.0, "mean_noise_var": 0.01},
    }
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(doc))
    return path, doc


class TestRun:
    def test_success_exit_zero_and_outputs(self, scenario_path, tmp_path,
                                           capsys):
        path, _ = scenario_path
        out = tmp_path / "out"
        rc = cli.main(["run", "--scenario", str(path), "--out", str(out)])
        assert rc == 0
        for seed in (0, 1):
            assert (out / f"episode_{seed}.csv").is_file()
            assert (out / f"beliefs_{seed}.jsonl").is_file()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["aggregate"]["success_rate"] == 1.0
        printed = json.loads(capsys.readouterr().out)
        assert printed["episodes"] == 2

    def test_repeat_runs_byte_identical(self, scenario_path, tmp_path):
        path, _ = scenario_path
        blobs = []
        for run in range(2):
            out = tmp_path / f"out{run}"
            assert cli.main(["run", "--scenario", str(path),
                             "--out", str(out)]) == 0
            blobs.append([(p.name, p.read_bytes())
                          for p in sorted(out.iterdir())])
        assert blobs[0] == blobs[1]

    def test_failed_episode_exit_one(self, scenario_path, tmp_path, capsys):
        path, doc = scenario_path
        script = [[0.0, 0.0]] * 30
        script[5] = [2000.0, 0.0]
        doc["target"] = dict(doc["target"], script=script)
        doc["map"] = {"bounds": [3000.0, 30.0]}
        bad = tmp_path / "lost.json"
        bad.write_text(json.dumps(doc))
        rc = cli.main(["run", "--scenario", str(bad), "--seed-list", "0"])
        capsys.readouterr()
        assert rc == 1

    def test_bad_scenario_exit_two(self, scenario_path, tmp_path, capsys):
        path, doc = scenario_path
        doc["surprise"] = True
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(doc))
        rc = cli.main(["run", "--scenario", str(bad)])
        assert rc == 2
        assert "error" in capsys.readouterr().err

    def test_missing_file_exit_two(self, tmp_path, capsys):
        rc = cli.main(["run", "--scenario", str(tmp_path / "nope.json")])
        capsys.readouterr()
        assert rc == 2


class TestBpodCheck:
    def test_reports_small_error(self, scenario_path, tmp_path, capsys):
        path, _ = scenario_path
        out = tmp_path / "out"
        assert cli.main(["run", "--scenario", str(path), "--seed-list", "0",
                         "--out", str(out)]) == 0
        capsys.readouterr()
        rc = cli.main(["bpod-check", "--scenario", str(path),
                       "--states", str(out / "beliefs_0.jsonl"),
                       "--samples", "2000", "--limit", "10"])
        assert rc == 0
        report = json.loads(capsys.readouterr().out)
        assert report["states"] == 10
        assert report["mae"] < 0.05

    def test_missing_states_exit_two(self, scenario_path, tmp_path, capsys):
        path, _ = scenario_path
        rc = cli.main(["bpod-check", "--scenario", str(path),
                       "--states", str(tmp_path / "none.jsonl")])
        capsys.readouterr()
        assert rc == 2


class TestGenTrajectories:
    def test_writes_scripts(self, scenario_path, tmp_path, capsys):
        path, _ = scenario_path
        out = tmp_path / "traj"
        rc = cli.main(["gen-trajectories", "--scenario", str(path),
                       "--vmax", "1.5", "--count", "2", "--steps", "40",
                       "--out", str(out)])
        capsys.readouterr()
        assert rc == 0
        for i in range(2):
            lines = (out / f"trajectory_{i}.csv").read_text().splitlines()
            assert lines[0] == "speed,turn_rate"
            assert len(lines) == 41
            speeds = [float(l.split(",")[0]) for l in lines[1:]]
            assert max(speeds) <= 1.5 + 1e-12


class TestBench:
    def test_prints_timings(self, scenario_path, capsys):
        path, _ = scenario_path
        rc = cli.main(["bench", "--scenario", str(path)])
        assert rc == 0
        times = json.loads(capsys.readouterr().out)
        for key in ("bpod_eval_ms", "signed_distance_ms", "ekf_step_ms",
                    "scp_solve_ms"):
            assert times[key] > 0.0


def test_console_script_help():
    import subprocess
    proc = subprocess.run(["vistrack", "--help"], capture_output=True,
                          text=True)
    assert proc.returncode == 0
    assert "run" in proc.stdout
