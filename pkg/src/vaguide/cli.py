"""Command-line surface for the whole pipeline.

Exit codes: 0 success, 2 usage (click), 3 data/format, 4 numeric failure
(NaN during optimization), 5 I/O.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from .evaluation import evaluate, run_ablation
from .model import (
    BackboneConfig,
    GuidanceModel,
    ModelConfig,
    VAAdapterConfig,
    load_checkpoint,
    save_checkpoint,
)
from .phantom import PLANE_NAMES, make_phantom, standard_planes
from .scangen import (
    ScanConfig,
    ScanFormatError,
    build_dataset,
    load_manifest,
    read_scan,
    segmental_sample,
)
from .train import TrainConfig, batch_arrays, desk_config, train

EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_IO = 5


def guarded(fn):
    """Map exceptions to the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ScanFormatError, json.JSONDecodeError) as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_DATA)
        except ValueError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_DATA)
        except RuntimeError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_NUMERIC)
        except OSError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_IO)

    return wrapper


@click.group()
def main():
    """Synthetic ultrasound probe guidance pipeline."""


@main.group()
def phantom():
    """Phantom inspection."""


@phantom.command("gen")
@click.option("--seed", type=int, required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@guarded
def phantom_gen(seed, out):
    """Write the phantom description (chambers + standard planes) as JSON."""
    ph = make_phantom(seed)
    planes = standard_planes(ph)
    doc = {
        "seed": seed,
        "bounds_mm": ph.bounds.tolist(),
        "chambers": [
            {
                "label": c.label,
                "center_mm": c.center.tolist(),
                "radii_mm": c.radii.tolist(),
                "orientation_wxyz": c.orientation.tolist(),
                "intensity": c.intensity,
                "phase_amplitude": c.phase_amplitude,
            }
            for c in ph.chambers
        ],
        "standard_planes": [
            {"id": i + 1, "name": name, "pose": p.to_array().tolist()}
            for i, (name, p) in enumerate(zip(planes.names, planes.planes))
        ],
    }
    Path(out).write_text(json.dumps(doc, indent=2))
    click.echo(f"wrote phantom {seed} to {out}")


@main.group()
def dataset():
    """Scan dataset generation."""


@dataset.command("build")
@click.option("--phantoms", type=int, required=True)
@click.option("--scans-per", type=int, default=2, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--split", type=float, default=0.8, show_default=True)
@click.option("--base-seed", type=int, default=100, show_default=True)
@click.option("--frames-per-leg", type=int, default=6, show_default=True)
@click.option("--pause-frames", type=int, default=3, show_default=True)
@click.option("--size", type=int, default=64, show_default=True)
@guarded
def dataset_build(phantoms, scans_per, out, split, base_seed, frames_per_leg,
                  pause_frames, size):
    """Generate scans for PHANTOMS phantoms and write a split manifest."""
    cfg = ScanConfig(
        frames_per_leg=frames_per_leg, pause_frames=pause_frames,
        width=size, height=size,
    )
    manifest = build_dataset(
        list(range(base_seed, base_seed + phantoms)), scans_per, out,
        train_fraction=split, config=cfg,
    )
    n_train = len(manifest.paths("train"))
    n_val = len(manifest.paths("val"))
    click.echo(f"wrote {n_train} train / {n_val} val scans to {out}")


def _model_config(path: str | None, image_size: int, seed: int) -> ModelConfig:
    if path is not None:
        return ModelConfig.from_dict(json.loads(Path(path).read_text()))
    backbone = dataclasses.replace(BackboneConfig(), image_size=image_size)
    return ModelConfig(backbone=backbone, adapter=VAAdapterConfig(), seed=seed)


@main.command("train")
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--model-config", "model_config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr-init", type=float, default=None)
@click.option("--lr-final", type=float, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--desk/--paper", default=True, show_default=True,
              help="Desk profile (batch 32, higher lr) vs paper defaults.")
@guarded
def train_cmd(data, out, model_config_path, epochs, batch_size, lr_init, lr_final,
              seed, desk):
    """Train a guidance model on a built dataset."""
    manifest = load_manifest(Path(data) / "manifest.json")
    first = read_scan(Path(data) / manifest.scans[0]["path"])
    image_size = first.frames[0].image.width
    model = GuidanceModel(_model_config(model_config_path, image_size, seed))

    overrides = {"seed": seed}
    for key, val in (("epochs", epochs), ("batch_size", batch_size),
                     ("lr_init", lr_init), ("lr_final", lr_final)):
        if val is not None:
            overrides[key] = val
    cfg = desk_config(**overrides) if desk else TrainConfig(**overrides)

    log = train(model, manifest, data, cfg, out_dir=out)
    final = log.rows[-1]
    click.echo(
        f"trained {len(log.rows)} steps in {log.wall_time_s:.1f}s; "
        f"final loss {final['loss']:.4f} "
        f"(MAE {final['mae_trans']:.2f} mm / {final['mae_rot']:.2f} deg)"
    )
    click.echo(f"checkpoint: {Path(out) / 'final.vack'}")


@main.command("eval")
@click.option("--ckpt", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--report", type=click.Path(dir_okay=False), required=True)
@click.option("--split", default="val", show_default=True)
@click.option("--stride", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@guarded
def eval_cmd(ckpt, data, report, split, stride, seed):
    """Evaluate a checkpoint and write the per-plane MAE report."""
    model = load_checkpoint(ckpt)
    manifest = load_manifest(Path(data) / "manifest.json")
    rep = evaluate(model, manifest, data, split=split, sampler_seed=seed,
                   frame_stride=stride)
    Path(report).write_text(rep.to_json())
    click.echo(rep.to_csv(), nl=False)
    click.echo(f"avg MAE: {rep.avg_trans_mm:.3f} mm / {rep.avg_rot_deg:.3f} deg")


@main.command("ablate")
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--widths", default="8,16,32,64,128", show_default=True)
@click.option("--variants", default="full,vanilla,single_frame", show_default=True)
@click.option("--epochs", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@guarded
def ablate_cmd(data, out, widths, variants, epochs, seed):
    """Train/evaluate the adapter ablation grid."""
    manifest = load_manifest(Path(data) / "manifest.json")
    first = read_scan(Path(data) / manifest.scans[0]["path"])
    base = _model_config(None, first.frames[0].image.width, seed)
    reports = run_ablation(
        manifest, data, base, desk_config(epochs=epochs, seed=seed),
        variants=tuple(variants.split(",")),
        widths=tuple(int(w) for w in widths.split(",")),
        out_dir=out,
    )
    click.echo((Path(out) / "summary.csv").read_text(), nl=False)
    click.echo(f"{len(reports)} cells written to {out}")


@main.command("serve")
@click.option("--ckpt", type=click.Path(dir_okay=False), required=True)
@click.option("--phantom-seed", type=int, default=0, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@guarded
def serve_cmd(ckpt, phantom_seed, host, port):
    """Start the interactive guidance service."""
    import uvicorn

    from .service import create_app

    if not Path(ckpt).is_file():
        raise OSError(f"checkpoint not found: {ckpt}")
    model = load_checkpoint(ckpt)
    app = create_app(
        model, phantom_seed, image_size=model.cfg.backbone.image_size
    )
    click.echo(f"serving phantom {phantom_seed} on {host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command("predict")
@click.option("--ckpt", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--scan", "scan_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--frame", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@guarded
def predict_cmd(ckpt, scan_path, frame, seed):
    """Print the ten predicted actions for one scan frame."""
    model = load_checkpoint(ckpt)
    scan = read_scan(scan_path)
    sample = segmental_sample(
        scan, frame, model.cfg.adapter.seq_len, rng_seed=seed, allow_fallback=True
    )
    images, actions, labels = batch_arrays([sample], dtype=model.store.dtype)
    pred = model.forward(images, actions).data[0]
    for i, name in enumerate(PLANE_NAMES):
        row = pred[i]
        err = np.abs(row - labels[0, i])
        click.echo(
            f"{i + 1:2d} {name:8s} "
            f"t=({row[0]:+7.2f},{row[1]:+7.2f},{row[2]:+7.2f}) mm  "
            f"r=({row[3]:+7.2f},{row[4]:+7.2f},{row[5]:+7.2f}) deg  "
            f"| MAE {err[:3].mean():.2f} mm {err[3:].mean():.2f} deg"
        )


if __name__ == "__main__":
    main()
