"""Evaluation: per-plane MAE reports, nearest-neighbor frame retrieval, and
the ablation sweep over adapter variants and bottleneck widths."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Action6, Pose, pose_distance
from .model import (
    BackboneConfig,
    GuidanceModel,
    ModelConfig,
    SingleFrameModel,
    VAAdapterConfig,
)
from .phantom import PLANE_NAMES
from .rng import mix64
from .scangen import DatasetManifest, Scan, read_scan, segmental_sample
from .train import TrainConfig, batch_arrays, train


@dataclass(frozen=True)
class EvalReport:
    planes: tuple[dict, ...]  # {"id", "name", "mae_trans_mm", "mae_rot_deg"}
    avg_trans_mm: float
    avg_rot_deg: float
    params: dict
    config: dict
    runtime_s: float = 0.0

    def __post_init__(self):
        if len(self.planes) != 10:
            raise ValueError("report must cover all ten planes")
        for avg, key in ((self.avg_trans_mm, "mae_trans_mm"), (self.avg_rot_deg, "mae_rot_deg")):
            mean = float(np.mean([p[key] for p in self.planes]))
            if abs(avg - mean) > 1e-9:
                raise ValueError(f"average {key} does not match per-plane mean")

    def to_json(self) -> str:
        # runtime_s is excluded so repeated runs with one seed serialize
        # byte-identically
        d = dataclasses.asdict(self)
        del d["runtime_s"]
        return json.dumps(d, indent=2)

    def to_csv(self) -> str:
        lines = ["plane_id,name,mae_trans_mm,mae_rot_deg"]
        lines += [
            f"{p['id']},{p['name']},{p['mae_trans_mm']:.6f},{p['mae_rot_deg']:.6f}"
            for p in self.planes
        ]
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_json(text: str) -> "EvalReport":
        d = json.loads(text)
        return EvalReport(
            planes=tuple(d["planes"]),
            avg_trans_mm=d["avg_trans_mm"],
            avg_rot_deg=d["avg_rot_deg"],
            params=d["params"],
            config=d["config"],
            runtime_s=d.get("runtime_s", 0.0),
        )


def mae(pred: Action6, target: Action6) -> tuple[float, float]:
    """Mean absolute error split into translation (mm) and rotation (deg)."""
    dt = np.abs(pred.translation - target.translation)
    dr = np.abs(pred.rotation - target.rotation)
    if not (np.all(np.isfinite(dt)) and np.all(np.isfinite(dr))):
        raise ValueError("mae requires finite actions")
    return float(dt.mean()), float(dr.mean())


def _report_from_errors(per_plane: np.ndarray, params: dict, config: dict,
                        runtime_s: float) -> EvalReport:
    planes = tuple(
        {
            "id": i + 1,
            "name": PLANE_NAMES[i],
            "mae_trans_mm": float(per_plane[i, 0]),
            "mae_rot_deg": float(per_plane[i, 1]),
        }
        for i in range(10)
    )
    return EvalReport(
        planes=planes,
        avg_trans_mm=float(per_plane[:, 0].mean()),
        avg_rot_deg=float(per_plane[:, 1].mean()),
        params=params,
        config=config,
        runtime_s=runtime_s,
    )


def evaluate(
    model,
    manifest: DatasetManifest,
    data_dir,
    split: str = "val",
    sampler_seed: int = 0,
    frame_stride: int = 5,
    oracle: bool = False,
) -> EvalReport:
    """Per-plane MAE over one segmental sample per (strided) validation frame.

    With oracle=True the labels themselves are used as predictions, which
    must produce an all-zero report; this validates the metric plumbing.
    """
    data_dir = Path(data_dir)
    paths = manifest.paths(split)
    if not paths:
        raise ValueError(f"manifest has no scans in split {split!r}")
    if frame_stride < 1:
        raise ValueError("frame_stride must be >= 1")

    is_single = isinstance(model, SingleFrameModel)
    L = model.cfg.adapter.seq_len
    t0 = time.monotonic()
    totals = np.zeros((10, 2))
    count = 0
    for si, rel in enumerate(paths):
        scan = read_scan(data_dir / rel)
        for qi in range(0, len(scan.frames), frame_stride):
            sample = segmental_sample(
                scan, qi, L,
                rng_seed=mix64(sampler_seed + 0x9E37) ^ mix64(si * 100003 + qi),
                allow_fallback=True,
            )
            if oracle:
                preds = sample.labels
            elif is_single:
                out = model.forward(
                    sample.images[-1].data[None].astype(np.float32)
                ).data[0]
                preds = tuple(
                    Action6(row[:3].astype(np.float64), row[3:].astype(np.float64))
                    for row in out
                )
            else:
                images, actions, _ = batch_arrays([sample], dtype=model.store.dtype)
                preds = model.predict_sample(images[0], actions[0])
            for pi, (p, t) in enumerate(zip(preds, sample.labels)):
                mt, mr = mae(p, t)
                totals[pi] += (mt, mr)
            count += 1

    per_plane = totals / count
    return _report_from_errors(
        per_plane,
        params=model.count_params(),
        config=model.cfg.to_dict(),
        runtime_s=time.monotonic() - t0,
    )


def nn_retrieve(scan: Scan, pose: Pose, w_rot: float = 1.0) -> int:
    """Frame whose pose minimizes trans_mm + w_rot * rot_deg; first wins ties."""
    best_idx = 0
    best = float("inf")
    for i, frame in enumerate(scan.frames):
        dt, dr = pose_distance(frame.pose, pose)
        d = dt + w_rot * dr
        if d < best:
            best, best_idx = d, i
    return best_idx


DEFAULT_ABLATION_VARIANTS = ("full", "vanilla", "single_frame")
DEFAULT_ABLATION_WIDTHS = (8, 16, 32, 64, 128)


def run_ablation(
    manifest: DatasetManifest,
    data_dir,
    base_cfg: ModelConfig,
    train_cfg: TrainConfig,
    variants=DEFAULT_ABLATION_VARIANTS,
    widths=DEFAULT_ABLATION_WIDTHS,
    out_dir=None,
    eval_split: str = "val",
) -> dict[str, EvalReport]:
    """Train and evaluate each (variant, bottleneck) cell with a shared seed.

    The single-frame baseline ignores the bottleneck width and appears once.
    Partial results are written per cell when out_dir is given, so a failed
    sweep keeps its finished cells.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    reports: dict[str, EvalReport] = {}
    for variant in variants:
        cell_widths = [base_cfg.adapter.bottleneck] if variant == "single_frame" else widths
        for r in cell_widths:
            key = "single_frame" if variant == "single_frame" else f"{variant}_r{r}"
            adapter = dataclasses.replace(base_cfg.adapter, bottleneck=r, variant=(
                "full" if variant == "single_frame" else variant))
            cfg = dataclasses.replace(base_cfg, adapter=adapter)
            if variant == "single_frame":
                model = SingleFrameModel(cfg)
                _train_single_frame(model, manifest, data_dir, train_cfg)
            else:
                model = GuidanceModel(cfg)
                train(model, manifest, data_dir, train_cfg)
            reports[key] = evaluate(
                model, manifest, data_dir, split=eval_split,
                sampler_seed=train_cfg.seed,
            )
            if out is not None:
                (out / f"{key}.json").write_text(reports[key].to_json())
    if out is not None:
        (out / "summary.csv").write_text(ablation_table(reports))
    return reports


def ablation_table(reports: dict[str, EvalReport]) -> str:
    lines = ["cell,trainable_params,avg_trans_mm,avg_rot_deg"]
    lines += [
        f"{key},{rep.params['trainable']},{rep.avg_trans_mm:.6f},{rep.avg_rot_deg:.6f}"
        for key, rep in reports.items()
    ]
    return "\n".join(lines) + "\n"


def _train_single_frame(model: SingleFrameModel, manifest, data_dir, cfg: TrainConfig):
    """Same loop shape as train(), reduced to one image per sample."""
    import math

    from .diffarray import backward
    from .scangen import compute_labels
    from .train import AdamState, adam_step, calibrate_model, cosine_lr, smooth_l1_loss

    data_dir = Path(data_dir)
    scans = [read_scan(data_dir / p) for p in manifest.paths("train")]
    index = [(si, qi) for si, s in enumerate(scans) for qi in range(len(s.frames))]
    calibrate_model(model, scans, index)
    steps_per_epoch = max(1, math.ceil(len(index) / cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    if cfg.max_steps is not None:
        total_steps = min(total_steps, cfg.max_steps)
    adam = AdamState()
    rng = np.random.default_rng(cfg.seed)
    step = 0
    for _epoch in range(cfg.epochs):
        order = rng.permutation(len(index))
        for b0 in range(0, len(order), cfg.batch_size):
            if step >= total_steps:
                break
            chunk = [index[i] for i in order[b0 : b0 + cfg.batch_size]]
            images = np.stack(
                [scans[si].frames[qi].image.data for si, qi in chunk]
            ).astype(np.float32)
            labels = np.stack(
                [
                    np.stack([a.to_array() for a in compute_labels(scans[si], qi)])
                    for si, qi in chunk
                ]
            ).astype(np.float32)
            for p in model.store.params.values():
                p.grad = None
            loss = smooth_l1_loss(model.forward(images), labels)
            if not math.isfinite(float(loss.data)):
                raise RuntimeError(f"non-finite loss at step {step}")
            backward(loss)
            adam_step(
                model.store.params, adam,
                cosine_lr(step, total_steps, cfg.lr_init, cfg.lr_final),
                cfg.beta1, cfg.beta2, cfg.eps,
            )
            step += 1
