import dataclasses
import json

import pytest
from click.testing import CliRunner

from vaguide.cli import main
from vaguide.model import (
    BackboneConfig,
    GuidanceModel,
    ModelConfig,
    VAAdapterConfig,
    save_checkpoint,
)


@pytest.fixture
def runner():
    return CliRunner()


def tiny_model_json(tmp_path, image_size=32):
    cfg = ModelConfig(
        backbone=BackboneConfig(depth=2, embed_dim=32, patch_size=8, heads=4,
                                image_size=image_size),
        adapter=VAAdapterConfig(bottleneck=8, seq_len=4),
        proj_dim=16,
        gru_hidden=16,
        seed=0,
    )
    path = tmp_path / "model.json"
    path.write_text(json.dumps(cfg.to_dict()))
    return path, cfg


def build_tiny_dataset(runner, tmp_path):
    data = tmp_path / "data"
    result = runner.invoke(main, [
        "dataset", "build", "--phantoms", "2", "--scans-per", "1",
        "--out", str(data), "--split", "0.5",
        "--frames-per-leg", "2", "--pause-frames", "1", "--size", "32",
    ])
    assert result.exit_code == 0, result.output
    return data


def test_phantom_gen(runner, tmp_path):
    out = tmp_path / "ph.json"
    result = runner.invoke(main, ["phantom", "gen", "--seed", "3", "--out", str(out)])
    assert result.exit_code == 0, result.output
    doc = json.loads(out.read_text())
    assert len(doc["chambers"]) >= 5
    assert len(doc["standard_planes"]) == 10
    assert doc["standard_planes"][0]["name"] == "PLAX"


def test_usage_error_exit_code(runner):
    result = runner.invoke(main, ["phantom", "gen", "--out", "x.json"])  # missing --seed
    assert result.exit_code == 2


def test_dataset_build(runner, tmp_path):
    data = build_tiny_dataset(runner, tmp_path)
    manifest = json.loads((data / "manifest.json").read_text())
    assert len(manifest["scans"]) == 2
    splits = {s["split"] for s in manifest["scans"]}
    assert splits == {"train", "val"}


def test_full_pipeline_smoke(runner, tmp_path):
    data = build_tiny_dataset(runner, tmp_path)
    model_json, _ = tiny_model_json(tmp_path)
    run = tmp_path / "run"

    result = runner.invoke(main, [
        "train", "--data", str(data), "--out", str(run),
        "--model-config", str(model_json),
        "--epochs", "1", "--batch-size", "16", "--seed", "0",
    ])
    assert result.exit_code == 0, result.output
    assert (run / "final.vack").exists()

    report = tmp_path / "report.json"
    result = runner.invoke(main, [
        "eval", "--ckpt", str(run / "final.vack"), "--data", str(data),
        "--report", str(report),
    ])
    assert result.exit_code == 0, result.output
    doc = json.loads(report.read_text())
    assert len(doc["planes"]) == 10
    assert doc["avg_trans_mm"] > 0
    assert all(p["mae_trans_mm"] == p["mae_trans_mm"] for p in doc["planes"])  # finite

    result = runner.invoke(main, [
        "predict", "--ckpt", str(run / "final.vack"),
        "--scan", str(data / json.loads((data / "manifest.json").read_text())["scans"][0]["path"]),
        "--frame", "5",
    ])
    assert result.exit_code == 0, result.output
    assert len(result.output.strip().splitlines()) == 10
    assert "PLAX" in result.output


def test_eval_missing_checkpoint(runner, tmp_path):
    result = runner.invoke(main, [
        "eval", "--ckpt", str(tmp_path / "nope.vack"), "--data", str(tmp_path),
        "--report", str(tmp_path / "r.json"),
    ])
    assert result.exit_code == 2  # click validates the path


def test_corrupt_checkpoint_exit_code(runner, tmp_path):
    data = build_tiny_dataset(runner, tmp_path)
    bad = tmp_path / "bad.vack"
    bad.write_bytes(b"not a checkpoint at all")
    result = runner.invoke(main, [
        "eval", "--ckpt", str(bad), "--data", str(data),
        "--report", str(tmp_path / "r.json"),
    ])
    assert result.exit_code == 3


def test_serve_missing_checkpoint_exit_code(runner, tmp_path):
    result = runner.invoke(main, [
        "serve", "--ckpt", str(tmp_path / "missing.vack"), "--phantom-seed", "1",
    ])
    assert result.exit_code == 5


def test_ablate_small_grid(runner, tmp_path):
    data = build_tiny_dataset(runner, tmp_path)
    out = tmp_path / "abl"
    result = runner.invoke(main, [
        "ablate", "--data", str(data), "--out", str(out),
        "--widths", "8", "--variants", "vanilla,single_frame", "--epochs", "1",
    ])
    # desk ablation uses the default-size backbone; keep the grid tiny
    assert result.exit_code == 0, result.output
    assert (out / "summary.csv").exists()
    assert (out / "vanilla_r8.json").exists()
    assert (out / "single_frame.json").exists()
