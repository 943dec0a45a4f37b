import json
import os

import pytest

import Main
from Core.ErrorHandler import EXIT_OK, EXIT_USAGE

from Libraries.TimeFieldsLib import load_grid, sample_queries, load_model

TINY_CONFIG = {
    "Roadmap": {"MaxNodes": 30, "PairCount": 48},
    "Architecture": {"FourierBands2D": 2, "HiddenWidth": 16, "NumBlocks": 1},
    # 32x32 grids have spacing 1/31
    "LossWeights": {"DeltaT": 0.04},
    "Training": {"Epochs": 2, "BatchSize": 16, "LogEvery": 0},
}


def run(out_dir, *argv) -> int:
    return Main.main(["--out-dir", str(out_dir), "--threads", "1", *argv])


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY_CONFIG), encoding="utf-8")
    return str(path)


@pytest.fixture
def grid(tmp_path):
    assert run(tmp_path, "gen-env", "--shape", "32", "32", "--rooms", "2") == EXIT_OK
    return tmp_path / "grids" / "env.json"


def manifest(out_dir) -> dict:
    return json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))


def free_query(grid_path):
    env, _, _ = load_grid(grid_path)
    (qs, qg), = sample_queries(env, 1, min_separation=0.3, rng_seed=0)
    return [str(v) for v in qs], [str(v) for v in qg]


def test_gen_env_records_artifacts(tmp_path, grid):
    env, d_min, d_max = load_grid(grid)
    assert env.shape == (32, 32)
    assert (d_min, d_max) == (0.015, 0.15)
    data = manifest(tmp_path)
    assert data["runs"][-1]["command"] == "gen-env"
    assert len(data["artifacts"]["grids/env.json"]["sha256"]) == 64
    assert "grids/env.pgm" in data["artifacts"]


def test_missing_subcommand_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        Main.main(["--out-dir", str(tmp_path)])
    assert exc.value.code == EXIT_USAGE


def test_bad_config_file_is_a_usage_error(tmp_path):
    assert run(tmp_path, "--config", str(tmp_path / "absent.json"), "gen-env") == EXIT_USAGE


def test_plan_with_fmm(tmp_path, grid):
    start, goal = free_query(grid)
    assert run(tmp_path, "plan", "--env", str(grid), "--method", "fmm", "--start", *start, "--goal", *goal) == EXIT_OK
    summary = json.loads((tmp_path / "reports" / "plan_query_fmm.json").read_text(encoding="utf-8"))
    assert summary["success"]
    assert summary["collision_free"]
    assert (tmp_path / "reports" / "plan_query_fmm.csv").is_file()


def test_plan_checks_arguments(tmp_path, grid):
    start, goal = free_query(grid)
    assert run(tmp_path, "plan", "--env", str(grid), "--method", "mpc", "--start", *start, "--goal", *goal) == EXIT_USAGE
    assert run(tmp_path, "plan", "--env", str(grid), "--method", "fmm", "--start", "0.5", "--goal", *goal) == EXIT_USAGE


def test_roadmap_dataset_and_training(tmp_path, grid, config_file):
    assert run(tmp_path, "--config", config_file, "build-roadmap", "--env", str(grid)) == EXIT_OK
    roadmap = tmp_path / "roadmaps" / "roadmap.json"
    assert roadmap.is_file()
    assert run(tmp_path, "--config", config_file, "make-dataset", "--env", str(grid), "--roadmap", str(roadmap),
               "--audit", "10") == EXIT_OK
    dataset = tmp_path / "datasets" / "pairs.csv"
    audit = json.loads((tmp_path / "datasets" / "pairs.audit.json").read_text(encoding="utf-8"))
    assert audit["count"] == 10
    assert run(tmp_path, "--config", config_file, "train", "--env", str(grid), "--dataset", str(dataset),
               "--mode", "pde_only", "--eval-pairs", "5") == EXIT_OK
    run_dir = tmp_path / "checkpoints" / "model"
    for name in ("config.json", "history.csv", "model.ckpt", "model_card.json", "field_eval.json"):
        assert (run_dir / name).is_file()
    resolved = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
    assert resolved["Training"]["AblationMode"] == "pde_only"
    load_model(run_dir / "model.ckpt")

    start, goal = free_query(grid)
    assert run(tmp_path, "plan", "--env", str(grid), "--method", "mpc", "--checkpoint", str(run_dir / "model.ckpt"),
               "--start", *start, "--goal", *goal) == EXIT_OK
    assert run(tmp_path, "plot-field", "--env", str(grid), "--goal", *goal, "--checkpoint",
               str(run_dir / "model.ckpt"), "--label", "ours", "--fmm") == EXIT_OK
    assert (tmp_path / "plots" / "field.svg").is_file()
    assert len(manifest(tmp_path)["runs"]) == 6


def test_run_log_is_written(tmp_path, grid):
    logs = os.listdir(tmp_path / "Logs")
    assert any(name.endswith(".log") for name in logs)
