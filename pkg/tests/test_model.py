import numpy as np
import pytest

from vaguide import diffarray as da
from vaguide.diffarray import DiffArray, backward
from vaguide.model import (
    BackboneConfig,
    GuidanceModel,
    ModelConfig,
    SingleFrameModel,
    VAAdapterConfig,
    load_checkpoint,
    save_checkpoint,
    timestep_embedding,
)
from vaguide.model.adapter import deinterleave, interleave
from vaguide.scangen import ScanChecksumError, ScanFormatError


def tiny_cfg(variant="full", r=8, L=4, kind="transformer", zero_init_up=True, seed=0):
    return ModelConfig(
        backbone=BackboneConfig(
            kind=kind, depth=4 if kind == "transformer" else 3,
            embed_dim=32, patch_size=4, heads=4, image_size=16,
        ),
        adapter=VAAdapterConfig(
            bottleneck=r, seq_len=L, variant=variant, zero_init_up=zero_init_up
        ),
        proj_dim=16,
        gru_hidden=16,
        seed=seed,
    )


def random_batch(rng, cfg, b=2):
    L = cfg.adapter.seq_len
    s = cfg.backbone.image_size
    images = rng.random((b, L, s, s)).astype(np.float32)
    actions = (rng.standard_normal((b, L - 1, 6)) * 5).astype(np.float32)
    return images, actions


def test_timestep_embedding_values():
    t = timestep_embedding(4, 8)
    assert t.shape == (4, 8)
    np.testing.assert_allclose(t[0, :4], 0.0, atol=1e-15)
    np.testing.assert_allclose(t[0, 4:], 1.0, atol=1e-15)
    assert np.all(np.abs(t) <= 1.0)
    assert t[1, 0] == pytest.approx(np.sin(1.0))
    with pytest.raises(ValueError):
        timestep_embedding(4, 7)


def test_interleave_roundtrip():
    rng = np.random.default_rng(0)
    z_v = DiffArray(rng.random((2, 4, 8)))
    z_a = DiffArray(rng.random((2, 3, 8)))
    tok = interleave(z_v, z_a)
    assert tok.shape == (2, 7, 8)  # L=4 -> sequence length 7
    np.testing.assert_array_equal(tok.data[:, 0], z_v.data[:, 0])
    np.testing.assert_array_equal(tok.data[:, 1], z_a.data[:, 0])
    np.testing.assert_array_equal(tok.data[:, 6], z_v.data[:, 3])
    v, a = deinterleave(tok, 4)
    np.testing.assert_array_equal(v.data, z_v.data)
    np.testing.assert_array_equal(a.data, z_a.data)


@pytest.mark.parametrize("kind", ["transformer", "conv"])
def test_zero_init_identity(kind):
    cfg = tiny_cfg(kind=kind)
    model = GuidanceModel(cfg)
    rng = np.random.default_rng(1)
    images, actions = random_batch(rng, cfg)
    z_v, z_a = model.encode_sequence(images, actions)
    plain = model.backbone.forward(images.astype(np.float32))
    assert np.array_equal(z_v.data, plain.data)
    assert z_a.shape == (2, cfg.adapter.seq_len - 1, cfg.adapter.bottleneck)


def test_forward_shapes_and_determinism():
    cfg = tiny_cfg()
    model = GuidanceModel(cfg)
    rng = np.random.default_rng(2)
    images, actions = random_batch(rng, cfg, b=3)
    out1 = model.forward(images, actions)
    out2 = model.forward(images, actions)
    assert out1.shape == (3, 10, 6)
    assert np.array_equal(out1.data, out2.data)


def test_query_image_changes_output():
    cfg = tiny_cfg(zero_init_up=False)
    model = GuidanceModel(cfg)
    rng = np.random.default_rng(3)
    images, actions = random_batch(rng, cfg, b=1)
    out1 = model.forward(images, actions).data.copy()
    images2 = images.copy()
    images2[0, -1] = rng.random(images2[0, -1].shape)
    out2 = model.forward(images2, actions).data
    assert not np.array_equal(out1, out2)


def test_full_variant_history_sensitivity():
    cfg = tiny_cfg(variant="full", zero_init_up=False)
    model = GuidanceModel(cfg)
    rng = np.random.default_rng(4)
    images, actions = random_batch(rng, cfg, b=1)
    z_v1, _ = model.encode_sequence(images, actions)
    images2 = images.copy()
    images2[0, 0] = rng.random(images2[0, 0].shape)
    z_v2, _ = model.encode_sequence(images2, actions)
    assert not np.array_equal(z_v1.data[0, -1], z_v2.data[0, -1])


def test_vanilla_variant_frame_isolation():
    cfg = tiny_cfg(variant="vanilla", zero_init_up=False)
    model = GuidanceModel(cfg)
    rng = np.random.default_rng(5)
    images, actions = random_batch(rng, cfg, b=1)
    z_v1, _ = model.encode_sequence(images, actions)
    # replace all other frames and all actions: query features must not move
    images2 = images.copy()
    images2[0, :-1] = rng.random(images2[0, :-1].shape)
    actions2 = (rng.standard_normal(actions.shape) * 5).astype(np.float32)
    z_v2, _ = model.encode_sequence(images2, actions2)
    assert np.array_equal(z_v1.data[0, -1], z_v2.data[0, -1])


def test_gradient_flow_and_frozen_backbone():
    cfg = tiny_cfg(zero_init_up=False)
    model = GuidanceModel(cfg)
    rng = np.random.default_rng(6)
    images, actions = random_batch(rng, cfg)
    target = DiffArray(rng.standard_normal((2, 10, 6)).astype(np.float32))
    loss = da.mean(da.smooth_l1(model.forward(images, actions), target))
    backward(loss)
    for name, p in model.store.params.items():
        if p.requires_grad:
            assert p.grad is not None and np.any(p.grad != 0), f"dead gradient: {name}"
        else:
            assert p.grad is None, f"frozen leaf got gradient: {name}"


def test_count_params_vanilla_vs_full():
    r = 8
    full = GuidanceModel(tiny_cfg(variant="full", r=r)).count_params()
    vanilla = GuidanceModel(tiny_cfg(variant="vanilla", r=r)).count_params()
    assert full["frozen"] == vanilla["frozen"]
    n_sites = len(GuidanceModel(tiny_cfg()).adapters.sites)
    # interaction block: 2 layer norms + qkv + proj + 2-layer MLP at ratio 2
    block = (
        2 * 2 * r
        + (r * 3 * r + 3 * r)
        + (r * r + r)
        + (r * 2 * r + 2 * r)
        + (2 * r * r + r)
    )
    assert full["trainable"] - vanilla["trainable"] == n_sites * block


def test_count_params_grows_with_r():
    counts = [
        GuidanceModel(tiny_cfg(r=r)).count_params()["trainable"] for r in (8, 16, 32)
    ]
    assert counts[0] < counts[1] < counts[2]


def test_single_frame_model():
    cfg = tiny_cfg()
    model = SingleFrameModel(cfg)
    rng = np.random.default_rng(7)
    images = rng.random((3, 16, 16)).astype(np.float32)
    out = model.forward(images)
    assert out.shape == (3, 10, 6)
    assert np.array_equal(out.data, model.forward(images).data)
    counts = model.count_params()
    assert counts["trainable"] < counts["frozen"]
    guidance = GuidanceModel(cfg).count_params()
    assert counts["trainable"] < guidance["trainable"]


def test_predict_sample_returns_actions():
    cfg = tiny_cfg()
    model = GuidanceModel(cfg)
    rng = np.random.default_rng(8)
    images, actions = random_batch(rng, cfg, b=1)
    acts = model.predict_sample(images[0], actions[0])
    assert len(acts) == 10
    assert all(a.to_array().shape == (6,) for a in acts)


def test_checkpoint_round_trip(tmp_path):
    cfg = tiny_cfg(zero_init_up=False)
    model = GuidanceModel(cfg)
    path = tmp_path / "m.vack"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.cfg == cfg
    for name, p in model.store.params.items():
        q = loaded.store.params[name]
        assert np.array_equal(p.data.astype(np.float32), q.data)
        assert p.requires_grad == q.requires_grad
    rng = np.random.default_rng(9)
    images, actions = random_batch(rng, cfg, b=1)
    assert np.array_equal(
        model.forward(images, actions).data, loaded.forward(images, actions).data
    )


def test_checkpoint_corruption(tmp_path):
    model = GuidanceModel(tiny_cfg())
    path = tmp_path / "m.vack"
    save_checkpoint(model, path)
    raw = bytearray(path.read_bytes())
    bad = bytearray(raw)
    bad[0:4] = b"XXXX"
    (tmp_path / "magic.vack").write_bytes(bad)
    with pytest.raises(ScanFormatError):
        load_checkpoint(tmp_path / "magic.vack")
    bad = bytearray(raw)
    bad[-200] ^= 0x01
    (tmp_path / "crc.vack").write_bytes(bad)
    with pytest.raises(ScanChecksumError):
        load_checkpoint(tmp_path / "crc.vack")


def test_wrong_sequence_length_rejected():
    cfg = tiny_cfg(L=4)
    model = GuidanceModel(cfg)
    rng = np.random.default_rng(10)
    images = rng.random((1, 3, 16, 16)).astype(np.float32)
    actions = rng.standard_normal((1, 2, 6)).astype(np.float32)
    with pytest.raises(ValueError):
        model.forward(images, actions)
