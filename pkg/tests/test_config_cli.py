import os

import numpy as np
import pytest
import yaml

from splidar import ConfigError, HistogramCube, RunConfig
from splidar.cli import main

BASE_CONFIG = """\
seed: 77
output_dir: out
scene:
  phantom:
    rows: 16
    cols: 16
    n_bins: 64
    background: [0.0625]
    unit_time: 1.0
    primitives:
      - kind: rect
        row: 4
        col: 5
        height: 6
        width: 6
        class_id: 1
        depth_bin: 20
        reflectivity: [4.0]
library:
  signatures: [[4.0]]
  signal_shape: 2.0
irf:
  gaussian_centers: [8.0]
  gaussian_sigmas: [2.0]
  bin_width: 1.0e-9
scenario:
  points_per_iteration: 32
  base_time: 1.0
  importance_cap: 2.0
  min_base_time: 1.0
stop:
  depth_rmse: 0.05
  max_dwell: 40.0
  max_points: 1000000
  max_iterations: 5
static:
  ratio: 0.5
  dwell_levels: [1.0, 4.0]
sweep:
  sbr: [1.0, 66.0]
  photons: [20.0]
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(BASE_CONFIG)
    return path


class TestConfigParsing:
    def test_parses_and_builds(self, config_path):
        cfg = RunConfig.from_file(config_path)
        assert cfg.seed == 77
        scene = cfg.build_scene()
        assert scene.shape == (16, 16)
        assert cfg.build_irf().n_bins == 64
        assert cfg.build_scenario().points_per_iteration == 32
        assert cfg.build_criteria().max_iterations == 5
        assert cfg.build_quadrature().n_nodes == 64

    def test_unknown_key_is_an_error_with_line(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text(BASE_CONFIG + "explorationfloor: 0.1\n")
        with pytest.raises(ConfigError) as err:
            RunConfig.from_file(path)
        msg = str(err.value)
        assert "unknown key 'explorationfloor'" in msg
        assert ":" in msg and "bad.yaml" in msg

    def test_unknown_nested_key_reports_dotted_path(self, tmp_path):
        text = BASE_CONFIG.replace("  ratio: 0.5",
                                   "  ratio: 0.5\n  fraction: 0.2")
        path = tmp_path / "bad.yaml"
        path.write_text(text)
        with pytest.raises(ConfigError, match="static.fraction"):
            RunConfig.from_file(path)

    def test_missing_required_key(self, tmp_path):
        text = BASE_CONFIG.replace("    rows: 16\n", "")
        path = tmp_path / "bad.yaml"
        path.write_text(text)
        with pytest.raises(ConfigError, match="rows"):
            RunConfig.from_file(path)

    def test_roundtrip_is_identical(self, config_path, tmp_path):
        cfg = RunConfig.from_file(config_path)
        out = tmp_path / "effective.yaml"
        cfg.save(out)
        again = RunConfig.from_dict(yaml.safe_load(out.read_text()))
        assert again == cfg
        # and the rewrite of the reloaded config is byte-identical
        out2 = tmp_path / "effective2.yaml"
        again.save(out2)
        assert out.read_bytes() == out2.read_bytes()

    def test_cube_scene_source(self, tmp_path):
        text = BASE_CONFIG.replace(
            "scene:\n  phantom:", "scene:\n  cube: cube.bin\n  phantom:")
        path = tmp_path / "cube_cfg.yaml"
        path.write_text(text)
        cfg = RunConfig.from_file(path)
        assert cfg.scene_cube == "cube.bin"


class TestCli:
    def test_simulate_writes_cube(self, config_path, tmp_path):
        out = tmp_path / "cube.bin"
        assert main(["simulate", "-c", str(config_path), "-o", str(out),
                     "--dwell", "5.0"]) == 0
        cube = HistogramCube.load(out)
        assert cube.shape == (16, 16)
        assert cube.n_bins == 64
        np.testing.assert_allclose(cube.dwell, 5.0)

    def test_run_adaptive_artifacts_and_exit_code(self, config_path, tmp_path):
        outdir = tmp_path / "run"
        code = main(["run", "-c", str(config_path), "-o", str(outdir),
                     "--strategy", "adaptive"])
        assert code in (0, 3)
        for name in ("trace.csv", "effective_config.yaml", "depth.txt",
                     "labels.txt", "depth.pgm", "plans.txt",
                     "confusion.csv"):
            assert (outdir / name).exists(), name
        header = (outdir / "trace.csv").read_text().splitlines()[0]
        assert header == "iteration,dwell_s,total_s,rmse_bins,rmse_m,acc,scanned"

    def test_run_is_deterministic(self, config_path, tmp_path):
        traces = []
        for tag in ("a", "b"):
            outdir = tmp_path / tag
            main(["run", "-c", str(config_path), "-o", str(outdir),
                  "--strategy", "adaptive"])
            traces.append((outdir / "trace.csv").read_bytes())
        assert traces[0] == traces[1]

    def test_run_random_strategy(self, config_path, tmp_path):
        outdir = tmp_path / "rs"
        assert main(["run", "-c", str(config_path), "-o", str(outdir),
                     "--strategy", "random", "--ratio", "0.3"]) == 0
        lines = (outdir / "trace.csv").read_text().splitlines()
        assert len(lines) == 3  # header + two dwell levels

    def test_budget_exhaustion_exit_code(self, config_path, tmp_path):
        # one iteration cannot converge: the run must end with code 3
        text = BASE_CONFIG.replace("max_iterations: 5", "max_iterations: 1")
        cfg = tmp_path / "short.yaml"
        cfg.write_text(text)
        assert main(["run", "-c", str(cfg), "-o", str(tmp_path / "x"),
                     "--strategy", "adaptive"]) == 3

    def test_classify_cube(self, config_path, tmp_path):
        cube_path = tmp_path / "cube.bin"
        main(["simulate", "-c", str(config_path), "-o", str(cube_path),
              "--dwell", "10.0"])
        out = tmp_path / "estimates.csv"
        assert main(["classify", "-c", str(config_path), "--cube",
                     str(cube_path), "-o", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("row,col,status,label,depth,uncertainty")
        assert len(lines) == 1 + 256
        assert ",ok," in lines[1]

    def test_classify_all_zero_cube_reports_no_data(self, config_path,
                                                    tmp_path):
        cube_path = tmp_path / "zero.bin"
        HistogramCube.zeros(16, 16, 1, 64).save(cube_path)
        out = tmp_path / "estimates.csv"
        assert main(["classify", "-c", str(config_path), "--cube",
                     str(cube_path), "-o", str(out)]) == 0
        lines = out.read_text().splitlines()[1:]
        assert all(",no_data," in line for line in lines)

    def test_classify_dimension_mismatch_is_config_error(self, config_path,
                                                         tmp_path):
        cube_path = tmp_path / "bad.bin"
        HistogramCube.zeros(4, 4, 2, 64).save(cube_path)
        code = main(["classify", "-c", str(config_path), "--cube",
                     str(cube_path), "-o", str(tmp_path / "e.csv")])
        assert code == 2

    def test_sweep_grid(self, config_path, tmp_path):
        out = tmp_path / "sweep.csv"
        assert main(["sweep", "-c", str(config_path), "-o", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "sbr,photons,rmse_bins,rmse_m,acc"
        assert len(lines) == 1 + 2  # 2 SBR values x 1 photon level

    def test_parallelism_env_validated(self, config_path, tmp_path,
                                       monkeypatch):
        monkeypatch.setenv("SPLIDAR_PARALLELISM", "zero")
        code = main(["run", "-c", str(config_path),
                     "-o", str(tmp_path / "p"), "--strategy", "adaptive"])
        assert code == 2

    def test_run_from_replayed_cube(self, config_path, tmp_path):
        cube_path = tmp_path / "master.bin"
        main(["simulate", "-c", str(config_path), "-o", str(cube_path),
              "--dwell", "30.0"])
        text = BASE_CONFIG.replace(
            "scene:\n  phantom:",
            f"scene:\n  cube: {cube_path}\n  phantom:")
        cfg = tmp_path / "replay.yaml"
        cfg.write_text(text)
        outdir = tmp_path / "replay_run"
        code = main(["run", "-c", str(cfg), "-o", str(outdir),
                     "--strategy", "adaptive"])
        assert code in (0, 3)
        assert (outdir / "trace.csv").exists()
