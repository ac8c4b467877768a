"""Harness tests: metrics, exports, config validation, short episodes."""

import json
import math
import os

import numpy as np
import pytest

from monospheres import errors
from monospheres.baseline_grid import OccupancyGrid, raytrace_update
from monospheres.geometry import Pose
from monospheres.harness import (
    EpisodeConfig,
    EpisodeResult,
    bootstrap_trajectory,
    episode_config_from_dict,
    explored_area,
    explored_volume,
    export_artifacts,
    run_episode,
    write_ply,
    write_report,
)

BBOX = [[-20.0, -20.0, 0.0], [20.0, 20.0, 10.0]]


class TestExploredArea:
    def test_empty(self):
        assert explored_area(np.zeros((0, 3)), BBOX) == 0.0

    def test_single_column(self):
        assert explored_area([[1.0, 1.0, 2.0]], BBOX) == pytest.approx(6.25)

    def test_three_columns(self):
        pts = [[0.0, 0.0, 0.0], [5.0, 0.0, 1.0], [0.0, 5.0, 2.0],
               [0.1, 0.2, 5.0]]  # 4th is in the first column
        assert explored_area(pts, BBOX) == pytest.approx(18.75)


class TestExploredVolume:
    def test_single_sphere(self):
        v = explored_volume((np.array([[0.0, 0.0, 0.0]]), np.array([1.0])))
        assert v == pytest.approx(4.0 * math.pi / 3.0, rel=0.05)

    def test_two_disjoint_spheres(self):
        v = explored_volume((np.array([[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]]),
                             np.array([1.0, 1.0])))
        assert v == pytest.approx(8.0 * math.pi / 3.0, rel=0.05)

    def test_contained_sphere_union(self):
        big = explored_volume((np.array([[0.0, 0.0, 0.0]]), np.array([2.0])))
        both = explored_volume((np.array([[0.0, 0.0, 0.0], [0.3, 0.0, 0.0]]),
                                np.array([2.0, 0.5])))
        assert both == pytest.approx(big, rel=1e-9)

    def test_grid_volume(self):
        grid = OccupancyGrid(bounds=[[-5, -5, -2], [5, 5, 2]], cell_size=0.5)
        raytrace_update(grid, Pose(np.zeros(3)), np.array([[3.0, 0.0, 0.0]]))
        free = grid.counts()["free"]
        assert explored_volume(grid) == pytest.approx(free * 0.125)


class TestConfig:
    def test_ablations_require_monospheres(self):
        with pytest.raises(errors.MalformedConfig):
            EpisodeConfig(world={"generator": "open_field"}, method="grid_baseline",
                          ablations=frozenset(["no_fff"]))

    def test_unknown_ablation(self):
        with pytest.raises(errors.MalformedConfig):
            EpisodeConfig(world={"generator": "open_field"},
                          ablations=frozenset(["no_everything"]))

    def test_unknown_method(self):
        with pytest.raises(errors.MalformedConfig):
            EpisodeConfig(world={}, method="teleport")

    def test_grid_alias(self):
        cfg = EpisodeConfig(world={"generator": "open_field"}, method="grid")
        assert cfg.method == "grid_baseline"

    def test_from_dict_rejects_junk(self):
        with pytest.raises(errors.MalformedConfig):
            episode_config_from_dict({"world": {}, "no_such_field": 1})


class TestBootstrap:
    def test_returns_to_start_with_fixed_yaw(self):
        start = np.array([2.0, 1.0, 1.5])
        traj = bootstrap_trajectory(start, 0.7)
        np.testing.assert_allclose(traj.positions[0], start)
        np.testing.assert_allclose(traj.positions[-1], start)
        assert np.allclose(traj.yaws, 0.7)

    def test_has_lateral_baseline(self):
        start = np.zeros(3)
        traj = bootstrap_trajectory(start, 0.0)
        lateral = traj.positions[:, 1]
        assert lateral.max() - lateral.min() >= 2.0


class TestEpisodes:
    def test_duration_zero(self):
        cfg = EpisodeConfig(world={"generator": "open_field", "seed": 0}, duration=0.0)
        r = run_episode(cfg)
        assert r.n_frames == 0
        assert not r.crashed
        assert r.explored_area == 0.0

    def test_short_episode_deterministic(self):
        def go():
            cfg = EpisodeConfig(world={"generator": "open_field", "seed": 1},
                                duration=6.0, seed=3)
            return run_episode(cfg)
        a, b = go(), go()
        assert a == b

    def test_grid_short_episode(self):
        cfg = EpisodeConfig(world={"generator": "corridor", "seed": 0},
                            method="grid_baseline", duration=6.0, seed=0)
        r = run_episode(cfg)
        assert r.n_frames == 60
        assert not r.crashed

    def test_outputs_written(self, tmp_path):
        out = str(tmp_path / "run")
        cfg = EpisodeConfig(world={"generator": "open_field", "seed": 0},
                            duration=3.0, seed=0, out_dir=out)
        run_episode(cfg)
        for name in ("metrics.json", "series.csv", "trajectory.csv", "map.ply",
                     "snapshot.json", "events.jsonl"):
            assert os.path.exists(os.path.join(out, name)), name

    def test_metrics_round_trip(self, tmp_path):
        out = str(tmp_path / "run")
        cfg = EpisodeConfig(world={"generator": "open_field", "seed": 0},
                            duration=3.0, seed=0, out_dir=out)
        result = run_episode(cfg)
        with open(os.path.join(out, "metrics.json")) as f:
            parsed = EpisodeResult.from_dict(json.load(f))
        assert parsed == result

    def test_empty_outputs_have_headers(self, tmp_path):
        out = str(tmp_path / "empty")
        cfg = EpisodeConfig(world={"generator": "open_field", "seed": 0},
                            duration=0.0, seed=0, out_dir=out)
        run_episode(cfg)
        with open(os.path.join(out, "series.csv")) as f:
            header = f.readline().strip()
        assert header.startswith("t,area_m2,volume_m3")

    def test_world_load_failure(self):
        with pytest.raises((errors.WorldLoadFailure, errors.MalformedSpec)):
            run_episode(EpisodeConfig(world="/nonexistent/world.json", duration=1.0))


class TestPlyAndReport:
    def test_ply_header_conformance(self, tmp_path):
        path = str(tmp_path / "m.ply")
        write_ply(path, np.array([[0.0, 0.0, 1.0], [1.0, 1.0, 2.0]]),
                  np.array([[0.5, 0.5, 0.5]]))
        lines = open(path).read().splitlines()
        assert lines[0] == "ply"
        assert lines[1] == "format ascii 1.0"
        assert lines[2] == "element vertex 3"
        assert "end_header" in lines
        body = lines[lines.index("end_header") + 1:]
        assert len(body) == 3
        for row in body:
            parts = row.split()
            assert len(parts) == 6
            float(parts[0]), float(parts[1]), float(parts[2])
            assert all(0 <= int(c) <= 255 for c in parts[3:])

    def test_report_aggregates(self, tmp_path):
        for seed in (0, 1):
            out = str(tmp_path / f"run{seed}")
            cfg = EpisodeConfig(world={"generator": "open_field", "seed": 0},
                                duration=2.0, seed=seed, out_dir=out)
            run_episode(cfg)
        text = write_report(str(tmp_path), str(tmp_path / "report.md"))
        assert "open_field" in text
        assert "monospheres" in text
        assert os.path.exists(str(tmp_path / "report.csv"))


class TestCli:
    def test_run_and_report(self, tmp_path, capsys):
        from monospheres.cli import main
        out = str(tmp_path / "cli_run")
        rc = main(["run", "--world", "open_field", "--seed", "2",
                   "--duration", "2.0", "--out", out])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["method"] == "monospheres"
        assert os.path.exists(os.path.join(out, "metrics.json"))
        rc = main(["report", "--in", str(tmp_path)])
        assert rc == 0

    def test_env_seed_override(self, tmp_path, capsys, monkeypatch):
        from monospheres.cli import main
        monkeypatch.setenv("MONOSPHERES_SEED", "7")
        rc = main(["run", "--world", "open_field", "--seed", "2", "--duration", "1.0"])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["seed"] == 7

    def test_batch(self, tmp_path, capsys):
        from monospheres.cli import main
        matrix = {
            "worlds": [{"generator": "open_field", "seed": 0}],
            "methods": [{"method": "monospheres"}],
            "seeds": [0],
            "duration": 1.0,
        }
        mpath = str(tmp_path / "matrix.json")
        with open(mpath, "w") as f:
            json.dump(matrix, f)
        rc = main(["batch", "--matrix", mpath, "--out", str(tmp_path / "runs")])
        assert rc == 0
