"""End-to-end acceptance suite.

Integration-level guarantees that go beyond the per-module unit tests:
independent numeric oracles for the geometry and metrics, 64-bit gradient
checking of the autodiff engine and the composite trainable blocks, training
contracts (frozen backbone, zero-init identity, parameter efficiency),
convergence and directional model-comparison experiments on synthetic
datasets, statistical validation of the history sampler, and byte-level
determinism / format guarantees.
"""

import json
import math
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation
from scipy.stats import chisquare

from gradcheck import check_gradients
from vaguide import diffarray as da
from vaguide.diffarray import DiffArray
from vaguide.evaluation import EvalReport, _train_single_frame, evaluate, mae
from vaguide.geometry import Action6, Pose, apply_action, relative_action
from vaguide.model import (
    BackboneConfig,
    GuidanceModel,
    ModelConfig,
    SingleFrameModel,
    VAAdapterConfig,
    VAAdapterStack,
    load_checkpoint,
    save_checkpoint,
)
from vaguide.model.guidance import PlaneHeads
from vaguide.model.layers import ParamStore
from vaguide.phantom import make_phantom
from vaguide.rng import mix64
from vaguide.scangen import (
    DatasetManifest,
    ScanChecksumError,
    ScanConfig,
    ScanFormatError,
    build_dataset,
    compute_labels,
    generate_scan,
    read_scan,
    segmental_sample,
    write_scan,
)
from vaguide.train import (
    AdamState,
    TrainConfig,
    cosine_lr,
    smooth_l1_loss,
    train,
)

# ---------------------------------------------------------------------------
# shared experiment configuration


def small_model_config(seed=7, variant="full", head_scale=30.0, bottleneck=16):
    """The small trainable configuration used by the experiment tests."""
    return ModelConfig(
        backbone=BackboneConfig(
            depth=4, embed_dim=64, heads=4, image_size=64, patch_size=8
        ),
        adapter=VAAdapterConfig(bottleneck=bottleneck, seq_len=4, variant=variant),
        gru_hidden=128,
        proj_dim=128,
        seed=seed,
        head_scale=head_scale,
    )


OVERFIT_SCAN = ScanConfig(
    frames_per_leg=2,
    pause_frames=300,
    speckle=False,
    heart_rate_hz=1e-6,  # effectively frozen cardiac phase
    jitter_mm=0.0,
    jitter_deg=0.0,
)


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory):
    """Two scans of one phantom, 200 optimization steps at batch 8.

    Shared by the frozen-backbone contract and the convergence gate.
    """
    root = tmp_path_factory.mktemp("overfit")
    ph = make_phantom(42)
    for i in range(2):
        write_scan(generate_scan(ph, 1000 + i, OVERFIT_SCAN), root / f"s{i}.uscn")
    manifest = DatasetManifest(
        scans=tuple(
            {"path": f"s{i}.uscn", "split": "train", "phantom_seed": 42,
             "scan_seed": 1000 + i}
            for i in range(2)
        )
    )
    model = GuidanceModel(small_model_config(head_scale=60.0, bottleneck=32))
    backbone_before = {
        n: p.data.tobytes()
        for n, p in model.store.params.items()
        if n.startswith("backbone.")
    }
    adam = AdamState()
    cfg = TrainConfig(
        batch_size=8, lr_init=2.5e-3, lr_final=5e-6, epochs=100, seed=0, max_steps=200
    )
    t0 = time.monotonic()
    log = train(model, manifest, root, cfg, adam=adam)
    elapsed = time.monotonic() - t0
    return {
        "model": model,
        "backbone_before": backbone_before,
        "adam": adam,
        "log": log,
        "root": root,
        "manifest": manifest,
        "elapsed": elapsed,
    }


# ---------------------------------------------------------------------------
# 1. rigid-motion algebra against a homogeneous-matrix oracle


def _random_pose(rng):
    """Random pose with pitch within ±85° plus its 4x4 matrix."""
    rz = rng.uniform(-179.0, 179.0)
    ry = rng.uniform(-85.0, 85.0)
    rx = rng.uniform(-179.0, 179.0)
    m = np.eye(4)
    m[:3, :3] = Rotation.from_euler("ZYX", [rz, ry, rx], degrees=True).as_matrix()
    m[:3, 3] = rng.uniform(-80.0, 80.0, 3)
    return Pose.from_matrix(m), m


def _quat_angle_deg(qa, qb):
    d = min(float(np.linalg.norm(qa - qb)), float(np.linalg.norm(qa + qb)))
    return math.degrees(4.0 * math.asin(min(1.0, d / 2.0)))


def test_relative_action_matrix_oracle_and_round_trip():
    t0 = time.monotonic()
    rng = np.random.default_rng(20240817)
    for _ in range(1000):
        pi, mi = _random_pose(rng)
        pj, mj = _random_pose(rng)
        act = relative_action(pi, pj)

        rel = np.linalg.inv(mi) @ mj
        rz, ry, rx = Rotation.from_matrix(rel[:3, :3]).as_euler("ZYX", degrees=True)
        np.testing.assert_allclose(act.translation, rel[:3, 3], atol=1e-9)
        np.testing.assert_allclose(act.rotation, [rx, ry, rz], atol=1e-9)

        back = apply_action(pi, act)
        assert np.max(np.abs(back.position - pj.position)) < 1e-9
        assert _quat_angle_deg(back.orientation, pj.orientation) < 1e-9
    assert time.monotonic() - t0 < 5.0


# ---------------------------------------------------------------------------
# 2. gradient checks at 64-bit: every primitive plus the composite blocks


def _leaf(rng, shape):
    return DiffArray(rng.standard_normal(shape), requires_grad=True)


def _primitive_cases(seed):
    """(name, build_loss, leaves) triples covering every primitive."""
    rng = np.random.default_rng(seed)
    a = _leaf(rng, (3, 4))
    b = _leaf(rng, (3, 4))
    v = _leaf(rng, (4,))
    m1 = _leaf(rng, (3, 4))
    m2 = _leaf(rng, (4, 2))
    bm1 = _leaf(rng, (2, 3, 4))
    bm2 = _leaf(rng, (2, 4, 3))
    ln_x = _leaf(rng, (3, 6))
    ln_w = _leaf(rng, (6,))
    ln_b = _leaf(rng, (6,))
    table = _leaf(rng, (5, 4))
    idx = np.array([0, 3, 3, 1])
    tgt = DiffArray(rng.standard_normal((3, 4)))
    sm = _leaf(rng, (3, 4))  # softmax input
    cases = [
        ("add", lambda: da.sum_(da.mul(da.add(a, b), da.add(a, b))), [a, b]),
        ("sub", lambda: da.sum_(da.mul(da.sub(a, b), da.sub(a, b))), [a, b]),
        ("add_broadcast", lambda: da.sum_(da.mul(da.add(a, v), a)), [a, v]),
        ("mul", lambda: da.sum_(da.mul(a, b)), [a, b]),
        ("scale", lambda: da.sum_(da.mul(da.scale(a, 2.5), b)), [a]),
        ("matmul", lambda: da.sum_(da.mul(da.matmul(m1, m2), da.matmul(m1, m2))), [m1, m2]),
        ("matmul_batched", lambda: da.sum_(da.matmul(bm1, bm2)), [bm1, bm2]),
        ("concat", lambda: da.sum_(da.mul(da.concat([a, b], axis=1), da.concat([b, a], axis=1))), [a, b]),
        ("split", lambda: da.sum_(da.mul(*da.split(a, 2, axis=1))), [a]),
        ("transpose", lambda: da.sum_(da.matmul(da.transpose(m1), m1)), [m1]),
        ("reshape", lambda: da.sum_(da.mul(da.reshape(a, (4, 3)), da.reshape(b, (4, 3)))), [a, b]),
        ("sum", lambda: da.sum_(da.mul(da.sum_(bm1, axis=1), da.sum_(bm1, axis=1))), [bm1]),
        ("mean", lambda: da.sum_(da.mul(da.mean(bm1, axis=2), da.mean(bm1, axis=2))), [bm1]),
        ("relu", lambda: da.sum_(da.mul(da.relu(a), b)), [a]),
        ("gelu", lambda: da.sum_(da.mul(da.gelu(a), b)), [a]),
        ("sigmoid", lambda: da.sum_(da.mul(da.sigmoid(a), b)), [a]),
        ("tanh", lambda: da.sum_(da.mul(da.tanh(a), b)), [a]),
        ("softmax", lambda: da.sum_(da.mul(da.softmax(sm), tgt)), [sm]),
        ("layer_norm", lambda: da.sum_(da.mul(da.layer_norm(ln_x, ln_w, ln_b), DiffArray(np.arange(18.0).reshape(3, 6)))), [ln_x, ln_w, ln_b]),
        ("embedding_lookup", lambda: da.sum_(da.mul(da.embedding_lookup(table, idx), DiffArray(np.ones((4, 4))))), [table]),
        ("smooth_l1", lambda: da.mean(da.smooth_l1(a, tgt)), [a]),
    ]
    return cases


def test_gradcheck_every_primitive_20_seeds():
    t0 = time.monotonic()
    for seed in range(20):
        for name, build_loss, leaves in _primitive_cases(seed):
            try:
                check_gradients(build_loss, leaves, rtol=1e-4)
            except AssertionError as exc:  # attach the primitive's name
                raise AssertionError(f"{name} (seed {seed}): {exc}") from exc
    assert time.monotonic() - t0 < 120.0


def test_gradcheck_composite_adapter_and_heads_20_seeds():
    t0 = time.monotonic()
    acfg = VAAdapterConfig(
        bottleneck=4,
        seq_len=3,
        interaction_heads=2,
        interaction_mlp_ratio=2,
        zero_init_up=False,
        zero_init_action=False,
    )
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        store = ParamStore(seed, dtype=np.float64)
        stack = VAAdapterStack(store, "ad", [6], acfg)
        heads = PlaneHeads(store, "hd", 4, 3, scale=2.0)
        vision = DiffArray(rng.standard_normal((2, 3, 6)))
        actions = DiffArray(rng.standard_normal((2, 2, 6)))
        target = rng.standard_normal((2, 3, 6))

        def build_loss():
            state = {"raw": actions, "feats": None}
            resid = stack.site_forward(0, vision, state)  # (2, 3, 6)
            pooled = da.mean(resid, axis=1)  # (2, 6)
            bottled = da.mean(da.reshape(pooled, (2, 6, 1)), axis=2)
            # heads expect the bottleneck width; fold features down to it
            h = da.matmul(pooled, DiffArray(np.ones((6, 4)) / 6.0))
            pred = heads(h)  # (2, 3, 6)
            return smooth_l1_loss(pred, target)

        leaves = list(store.trainable().values())
        check_gradients(build_loss, leaves, rtol=1e-3)
    assert time.monotonic() - t0 < 120.0


# ---------------------------------------------------------------------------
# 3. + 6. shared 200-step run: frozen backbone and convergence


def test_backbone_frozen_through_training(overfit_run):
    model = overfit_run["model"]
    for name, before in overfit_run["backbone_before"].items():
        assert model.store.params[name].data.tobytes() == before, (
            f"backbone parameter {name} changed during training"
        )
    for key in list(overfit_run["adam"].m) + list(overfit_run["adam"].v):
        assert not key.startswith("backbone."), (
            f"optimizer state tracked frozen parameter {key}"
        )


def test_overfit_two_scans_converges(overfit_run):
    report = evaluate(
        overfit_run["model"],
        overfit_run["manifest"],
        overfit_run["root"],
        split="train",
        sampler_seed=0,
        frame_stride=1,  # every frame, so plateau-length aliasing cannot hide errors
    )
    assert report.avg_trans_mm < 1.0, f"translation MAE {report.avg_trans_mm:.3f} mm"
    assert report.avg_rot_deg < 1.0, f"rotation MAE {report.avg_rot_deg:.3f} deg"
    assert len(overfit_run["log"].rows) == 200
    assert overfit_run["elapsed"] < 600.0


# ---------------------------------------------------------------------------
# 4. zero-initialized adapters leave the backbone function untouched


def test_zero_init_adapters_match_backbone_bit_exactly():
    cfg = small_model_config()
    assert cfg.adapter.zero_init_up
    model = GuidanceModel(cfg)
    rng = np.random.default_rng(3)
    images = rng.uniform(0.0, 1.0, (2, 4, 64, 64)).astype(np.float32)
    actions = rng.uniform(-5.0, 5.0, (2, 3, 6)).astype(np.float32)
    with_adapters, _ = model.encode_sequence(images, actions)
    backbone_only = model.backbone.forward(images)
    assert np.array_equal(with_adapters.data, backbone_only.data)


# ---------------------------------------------------------------------------
# 5. parameter efficiency and an exact hand count


def test_default_config_trains_under_10_percent_of_parameters():
    counts = GuidanceModel(ModelConfig()).count_params()
    total = counts["trainable"] + counts["frozen"]
    assert counts["trainable"] / total < 0.10


def test_count_params_matches_hand_count():
    # documented small configuration, every tensor enumerated by hand
    cfg = ModelConfig(
        backbone=BackboneConfig(
            depth=4, embed_dim=32, patch_size=8, heads=4, image_size=32, mlp_ratio=4
        ),
        adapter=VAAdapterConfig(
            bottleneck=8, seq_len=3, interaction_heads=2, interaction_mlp_ratio=2
        ),
        proj_dim=16,
        gru_hidden=24,
    )
    e, r, p, g, planes = 32, 8, 16, 24, 10
    tokens = (32 // 8) ** 2  # 16
    sites = 2 * math.ceil(4 / 2)  # two insertion points per adapted block

    block = (2 * e) + (e * 3 * e + 3 * e) + (e * e + e) + (2 * e) \
        + (e * 4 * e + 4 * e) + (4 * e * e + e)
    backbone = (8 * 8 * e + e) + tokens * e + 4 * block + 2 * e + tokens
    calibration = (sites + 1) * 2 * e  # mean + scale at each site and the output

    interaction = (2 * r) + (r * 3 * r + 3 * r) + (r * r + r) + (2 * r) \
        + (r * 2 * r + 2 * r) + (2 * r * r + r)
    site = (e * r + r) + (r * e + e) + interaction
    adapter = 3 * r + sites * site + (6 * r + r)  # timestep + sites + one action proj

    gru = (2 * p) * (3 * g) + g * (3 * g) + 3 * g + 3 * g
    head = (e * p + p) + (r * p + p) + r + planes * ((g * g + g) + (g * 6 + 6))

    counts = GuidanceModel(cfg).count_params()
    assert counts["frozen"] == backbone + calibration
    assert counts["trainable"] == adapter + gru + head


# ---------------------------------------------------------------------------
# 7. + 8. directional experiments on a 10-phantom dataset


@pytest.fixture(scope="session")
def directional_runs(tmp_path_factory):
    """Train full / vanilla / single-frame models with an equal budget on a
    10-phantom dataset (8 train / 2 validation phantoms), 3 seeds each."""
    root = tmp_path_factory.mktemp("directional")
    t0 = time.monotonic()
    manifest = build_dataset(
        list(range(1, 11)), 1, root, train_fraction=0.8,
        config=ScanConfig(frames_per_leg=4, pause_frames=8),
    )
    results = {}
    for seed in (0, 1, 2):
        cfg = TrainConfig(
            batch_size=16, lr_init=2e-3, lr_final=4e-6, epochs=50,
            seed=seed, max_steps=300,
        )
        for kind in ("full", "vanilla", "single"):
            if kind == "single":
                model = SingleFrameModel(small_model_config(seed=seed))
                _train_single_frame(model, manifest, root, cfg)
            else:
                model = GuidanceModel(small_model_config(seed=seed, variant=kind))
                train(model, manifest, root, cfg)
            report = evaluate(model, manifest, root, split="val", sampler_seed=seed)
            results[(kind, seed)] = (report.avg_trans_mm, report.avg_rot_deg)
    results["elapsed"] = time.monotonic() - t0
    return results


def _seed_mean(results, kind):
    vals = np.array([results[(kind, s)] for s in (0, 1, 2)])
    return vals[:, 0].mean(), vals[:, 1].mean()


def test_sequence_model_beats_single_frame_baseline(directional_runs):
    seq_t, seq_r = _seed_mean(directional_runs, "full")
    sf_t, sf_r = _seed_mean(directional_runs, "single")
    assert seq_t < sf_t, f"translation: sequence {seq_t:.3f} vs single-frame {sf_t:.3f}"
    assert seq_r < sf_r, f"rotation: sequence {seq_r:.3f} vs single-frame {sf_r:.3f}"
    assert directional_runs["elapsed"] < 2700.0


def test_interaction_block_not_inferior_to_vanilla_adapter(directional_runs):
    full_t, full_r = _seed_mean(directional_runs, "full")
    van_t, van_r = _seed_mean(directional_runs, "vanilla")
    # report the improvement; the hard gate is non-inferiority
    print(
        f"full vs vanilla: trans {100 * (van_t - full_t) / van_t:+.1f}% "
        f"rot {100 * (van_r - full_r) / van_r:+.1f}%"
    )
    assert full_t <= van_t * 1.05
    assert full_r <= van_r * 1.05


# ---------------------------------------------------------------------------
# 9. history sampler follows its stated law


def test_segmental_sampler_uniform_per_segment():
    ph = make_phantom(9)
    scan = generate_scan(
        ph, 77, ScanConfig(frames_per_leg=5, pause_frames=2, width=16, height=16)
    )
    query, L = 60, 4
    seg = query // (L - 1)  # 20 frames per segment
    counts = np.zeros((L - 1, seg))
    for k in range(10_000):
        s = segmental_sample(scan, query, L, rng_seed=mix64(0xAB5 ^ k))
        idx = s.frame_indices
        assert idx[-1] == query
        assert list(idx) == sorted(set(idx)), "indices must be strictly increasing"
        for j, frame in enumerate(idx[:-1]):
            assert j * seg <= frame < (j + 1) * seg, "one draw per segment"
            counts[j, frame - j * seg] += 1
    for j in range(L - 1):
        _, p = chisquare(counts[j])
        assert p > 0.001, f"segment {j} non-uniform (p={p:.2e})"


# ---------------------------------------------------------------------------
# 10. metric and schedule oracles


def test_smooth_l1_and_mae_match_brute_force():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        x = rng.standard_normal(6) * 3.0
        y = rng.standard_normal(6) * 3.0
        got = float(smooth_l1_loss(DiffArray(x), y).data)
        per = [0.5 * d * d if abs(d) < 1.0 else abs(d) - 0.5 for d in x - y]
        assert got == sum(per) / 6.0

        a = Action6(x[:3], np.clip(y[:3] * 20.0, -179.0, 179.0))
        b = Action6(y[3:], np.clip(x[3:] * 20.0, -179.0, 179.0))
        mt, mr = mae(a, b)
        assert mt == sum(abs(u - v) for u, v in zip(a.translation, b.translation)) / 3.0
        assert mr == sum(abs(u - v) for u, v in zip(a.rotation, b.rotation)) / 3.0


def test_cosine_schedule_endpoints_exact():
    assert abs(cosine_lr(0, 1000, 1e-4, 1e-6) - 1e-4) < 1e-12
    assert abs(cosine_lr(1000, 1000, 1e-4, 1e-6) - 1e-6) < 1e-12


# ---------------------------------------------------------------------------
# 11. two identical pipeline runs are byte-identical


def _pipeline(root):
    data = root / "data"
    manifest = build_dataset(
        [21, 22], 1, data, train_fraction=0.5,
        config=ScanConfig(frames_per_leg=2, pause_frames=2, width=32, height=32),
    )
    cfg = ModelConfig(
        backbone=BackboneConfig(depth=2, embed_dim=32, heads=4, image_size=32, patch_size=8),
        adapter=VAAdapterConfig(bottleneck=8, seq_len=3),
        proj_dim=16,
        gru_hidden=16,
        seed=5,
    )
    model = GuidanceModel(cfg)
    out = root / "run"
    train(
        model, manifest, data,
        TrainConfig(batch_size=16, lr_init=1e-3, lr_final=1e-5, epochs=2, seed=3),
        out_dir=out,
    )
    report = evaluate(model, manifest, data, split="val", sampler_seed=1)
    scan_bytes = {
        str(p.relative_to(data)): p.read_bytes() for p in sorted(data.rglob("*.uscn"))
    }
    return scan_bytes, (out / "train_log.csv").read_bytes(), report.to_json()


def test_pipeline_runs_are_byte_identical(tmp_path):
    scans1, log1, report1 = _pipeline(tmp_path / "a")
    scans2, log2, report2 = _pipeline(tmp_path / "b")
    assert scans1.keys() == scans2.keys() and len(scans1) == 2
    for name in scans1:
        assert scans1[name] == scans2[name], f"scan {name} differs between runs"
    assert log1 == log2
    assert report1 == report2


# ---------------------------------------------------------------------------
# 12. frames paused at one pose share identical labels


def test_paused_pose_frames_share_labels():
    ph = make_phantom(31)
    config = ScanConfig(frames_per_leg=3, pause_frames=4, width=16, height=16)
    scan = generate_scan(ph, 55, config)
    assert scan.plane_marks  # every plane has a pause
    for start in scan.plane_marks.values():
        group = [
            np.stack([a.to_array() for a in compute_labels(scan, start + k)])
            for k in range(config.pause_frames)
        ]
        for other in group[1:]:
            np.testing.assert_array_equal(group[0], other)


# ---------------------------------------------------------------------------
# 13. container formats round-trip; corruption yields the designated errors


def test_scan_and_checkpoint_round_trip_and_corruption(tmp_path):
    ph = make_phantom(4)
    scan = generate_scan(
        ph, 12, ScanConfig(frames_per_leg=2, pause_frames=2, width=16, height=16)
    )
    spath = tmp_path / "scan.uscn"
    write_scan(scan, spath)
    back = read_scan(spath)
    assert len(back.frames) == len(scan.frames)
    for f1, f2 in zip(scan.frames, back.frames):
        assert np.array_equal(f1.image.data, f2.image.data)
        assert np.array_equal(f1.pose.to_array(), f2.pose.to_array())
    spath2 = tmp_path / "again.uscn"
    write_scan(back, spath2)
    assert spath.read_bytes() == spath2.read_bytes()

    cfg = ModelConfig(
        backbone=BackboneConfig(depth=2, embed_dim=32, heads=4, image_size=16, patch_size=8),
        adapter=VAAdapterConfig(bottleneck=8, seq_len=3),
        proj_dim=16,
        gru_hidden=16,
    )
    model = GuidanceModel(cfg)
    cpath = tmp_path / "model.vack"
    save_checkpoint(model, cpath)
    loaded = load_checkpoint(cpath)
    for name, p in model.store.params.items():
        assert np.array_equal(loaded.store.params[name].data, p.data)
    cpath2 = tmp_path / "again.vack"
    save_checkpoint(loaded, cpath2)
    assert cpath.read_bytes() == cpath2.read_bytes()

    # corrupted payload byte -> checksum error; bad magic -> format error
    raw = bytearray(spath.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    bad = tmp_path / "bad.uscn"
    bad.write_bytes(bytes(raw))
    with pytest.raises(ScanChecksumError):
        read_scan(bad)
    notscan = tmp_path / "not.uscn"
    notscan.write_bytes(b"JUNKJUNKJUNKJUNK")
    with pytest.raises(ScanFormatError):
        read_scan(notscan)
    with pytest.raises(ScanFormatError):
        load_checkpoint(notscan)

    craw = bytearray(cpath.read_bytes())
    craw[len(craw) // 2] ^= 0xFF
    badc = tmp_path / "bad.vack"
    badc.write_bytes(bytes(craw))
    with pytest.raises(ScanChecksumError):
        load_checkpoint(badc)
