"""The guidance network: frozen backbone + adapter stack + GRU sequence
encoder + ten per-plane prediction heads, plus the single-frame baseline."""

from __future__ import annotations

import numpy as np

from .. import diffarray as da
from ..diffarray import DiffArray
from ..geometry import Action6
from .adapter import ACTION_DIM, VAAdapterStack
from .backbone import build_backbone
from .config import ModelConfig
from .layers import Linear, ParamStore


class GRU:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_hidden: int,
                 gate_bias: float = -3.0):
        self.d_hidden = d_hidden
        self.w_ih = store.trunc_normal(
            f"{name}.w_ih", (d_in, 3 * d_hidden), std=1.0 / np.sqrt(d_in)
        )
        self.w_hh = store.trunc_normal(
            f"{name}.w_hh", (d_hidden, 3 * d_hidden), std=1.0 / np.sqrt(d_hidden)
        )
        # negative reset/update gate biases start the cell as a feedforward
        # encoder of the current step; training opens the gates when carrying
        # history pays off (the usual recurrent gate-bias initialization)
        b0 = np.concatenate([
            np.full(2 * d_hidden, gate_bias), np.zeros(d_hidden)
        ])
        self.b_ih = store.array(f"{name}.b_ih", b0)
        self.b_hh = store.zeros(f"{name}.b_hh", (3 * d_hidden,))

    def __call__(self, xs: list[DiffArray]) -> DiffArray:
        """Run over a list of (B, d_in) steps; returns the final hidden state."""
        b = xs[0].shape[0]
        h = DiffArray(np.zeros((b, self.d_hidden), dtype=xs[0].data.dtype))
        for x in xs:
            gi = da.add(da.matmul(x, self.w_ih), self.b_ih)
            gh = da.add(da.matmul(h, self.w_hh), self.b_hh)
            gi_r, gi_z, gi_n = da.split(gi, 3, axis=1)
            gh_r, gh_z, gh_n = da.split(gh, 3, axis=1)
            r = da.sigmoid(da.add(gi_r, gh_r))
            z = da.sigmoid(da.add(gi_z, gh_z))
            n = da.tanh(da.add(gi_n, da.mul(r, gh_n)))
            h = da.add(n, da.mul(z, da.sub(h, n)))
        return h


class PlaneHeads:
    """Ten independent two-layer MLP heads with a GELU between them."""

    def __init__(self, store: ParamStore, name: str, d_in: int, n_planes: int,
                 scale: float = 1.0):
        self.n_planes = n_planes
        self.scale = scale
        self.heads = [
            (
                Linear(store, f"{name}.plane{i + 1:02d}.fc1", d_in, d_in,
                       fan_in_init=True),
                Linear(store, f"{name}.plane{i + 1:02d}.fc2", d_in, ACTION_DIM,
                       fan_in_init=True),
            )
            for i in range(n_planes)
        ]

    def __call__(self, h: DiffArray) -> DiffArray:
        """(B, d) -> (B, n_planes, 6)."""
        b = h.shape[0]
        outs = [
            da.reshape(fc2(da.gelu(fc1(h))), (b, 1, ACTION_DIM))
            for fc1, fc2 in self.heads
        ]
        out = da.concat(outs, axis=1)
        return da.scale(out, self.scale) if self.scale != 1.0 else out


class FeatureCalibration:
    """Frozen per-channel standardization of pooled backbone features.

    A frozen random encoder emits features dominated by a large component
    shared across images; the discriminative part is orders of magnitude
    smaller, which stalls the trainable layers. Centering and rescaling with
    statistics measured once on sample images (analogous to stored input
    normalization constants) restores the separation. The identity defaults
    (mean 0, scale 1) leave an uncalibrated model unchanged.
    """

    def __init__(self, store: ParamStore, name: str, dims: list[str | int]):
        self.means = [store.zeros(f"{name}.l{k:02d}.mean", (d,)) for k, d in enumerate(dims)]
        self.scales = [store.ones(f"{name}.l{k:02d}.scale", (d,)) for k, d in enumerate(dims)]
        store.freeze(f"{name}.")

    def apply(self, k: int, feats: DiffArray) -> DiffArray:
        return da.mul(da.sub(feats, self.means[k]), self.scales[k])

    def fit(self, k: int, values: np.ndarray, dtype) -> None:
        """Set layer k statistics from pooled features flattened over (..., C).

        The scale is a single scalar (mean channel std) rather than
        per-channel: near-constant channels would otherwise be amplified far
        beyond their calibration range on unseen inputs.
        """
        flat = values.reshape(-1, values.shape[-1])
        self.means[k].data = flat.mean(axis=0).astype(dtype)
        scale = 1.0 / (flat.std(axis=0).mean() + 1e-6)
        self.scales[k].data = np.full(flat.shape[-1], scale, dtype=dtype)


class GuidanceModel:
    """Sequence model: L images + L-1 actions -> 10 predicted actions."""

    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        self.cfg = cfg
        self.store = ParamStore(cfg.seed, dtype=dtype)
        self.backbone = build_backbone(self.store, "backbone", cfg.backbone)
        self.calib = FeatureCalibration(
            self.store, "calib",
            list(self.backbone.site_dims) + [cfg.backbone.embed_dim],
        )
        self.adapters = VAAdapterStack(
            self.store, "adapter", self.backbone.site_dims, cfg.adapter
        )
        self.vision_proj = Linear(
            self.store, "head.vision_proj", cfg.backbone.embed_dim, cfg.proj_dim,
            fan_in_init=True,
        )
        self.action_proj = Linear(
            self.store, "head.action_proj", cfg.adapter.bottleneck, cfg.proj_dim,
            fan_in_init=True,
        )
        self.global_token = self.store.trunc_normal(
            "head.global_token", (cfg.adapter.bottleneck,)
        )
        self.gru = GRU(self.store, "gru", 2 * cfg.proj_dim, cfg.gru_hidden)
        self.heads = PlaneHeads(self.store, "head", cfg.gru_hidden, cfg.n_planes,
                                scale=cfg.head_scale)
        if cfg.backbone.frozen:
            self.store.freeze("backbone.")

    def encode_sequence(self, images: np.ndarray, actions: np.ndarray):
        """(B, L, H, W) images + (B, L-1, 6) actions -> final vision (B, L, C)
        and action (B, L-1, r) features."""
        L = self.cfg.adapter.seq_len
        if images.shape[1] != L or actions.shape[1] != L - 1:
            raise ValueError(
                f"model expects L={L} images and {L - 1} actions, got "
                f"{images.shape[1]} and {actions.shape[1]}"
            )
        state = {"raw": DiffArray(actions.astype(self.store.dtype)), "feats": None}
        z_v = self.backbone.forward(
            images.astype(self.store.dtype),
            site_cb=lambda k, feats: self.adapters.site_forward(
                k, self.calib.apply(k, feats), state
            ),
        )
        return self.calib.apply(len(self.backbone.site_dims), z_v), state["feats"]

    def calibrate(self, images: np.ndarray) -> None:
        """Measure feature-standardization statistics on sample frames.

        images: (N, H, W). Runs the frozen backbone (adapters bypassed) and
        fits per-channel mean/scale at every adapter site and at the output.
        """
        pooled: dict[int, np.ndarray] = {}

        def record(k, feats):
            pooled[k] = feats.data
            return DiffArray(np.zeros_like(feats.data))

        z = self.backbone.forward(
            images[:, None].astype(self.store.dtype), site_cb=record
        )
        for k, values in pooled.items():
            self.calib.fit(k, values, self.store.dtype)
        self.calib.fit(len(self.backbone.site_dims), z.data, self.store.dtype)

    def forward(self, images: np.ndarray, actions: np.ndarray) -> DiffArray:
        """-> predicted actions (B, 10, 6) in mm / deg."""
        z_v, z_a = self.encode_sequence(images, actions)
        b = z_v.shape[0]
        L = self.cfg.adapter.seq_len
        v = self.vision_proj(z_v)  # (B, L, p)
        a = self.action_proj(z_a)  # (B, L-1, p)
        m = self.action_proj(
            da.reshape(self.global_token, (1, self.cfg.adapter.bottleneck))
        )  # (1, p)
        v_steps = da.split(v, L, axis=1)
        a_steps = da.split(a, L - 1, axis=1)
        p = self.cfg.proj_dim
        ones = DiffArray(np.ones((b, 1), dtype=self.store.dtype))
        steps = []
        for i in range(L):
            vi = da.reshape(v_steps[i], (b, p))
            ai = (
                da.reshape(a_steps[i], (b, p))
                if i < L - 1
                else da.matmul(ones, m)  # broadcast the global token over the batch
            )
            steps.append(da.concat([vi, ai], axis=1))
        h = self.gru(steps)
        return self.heads(h)

    def predict_sample(self, images: np.ndarray, actions: np.ndarray) -> list[Action6]:
        """Single-sample convenience: arrays without batch axis."""
        out = self.forward(images[None], actions[None]).data[0]
        return [Action6(row[:3].astype(np.float64), row[3:].astype(np.float64)) for row in out]

    def count_params(self) -> dict:
        return count_params(self.store)


class SingleFrameModel:
    """Baseline: one image through the frozen backbone, then the same
    projection + ten-head structure (no adapters, no sequence encoder)."""

    def __init__(self, cfg: ModelConfig, dtype=np.float32, train_final_block: bool = False):
        self.cfg = cfg
        self.store = ParamStore(cfg.seed, dtype=dtype)
        self.backbone = build_backbone(self.store, "backbone", cfg.backbone)
        self.calib = FeatureCalibration(self.store, "calib", [cfg.backbone.embed_dim])
        self.proj = Linear(
            self.store, "head.vision_proj", cfg.backbone.embed_dim, cfg.proj_dim,
            fan_in_init=True,
        )
        self.heads = PlaneHeads(self.store, "head", cfg.proj_dim, cfg.n_planes,
                                scale=cfg.head_scale)
        if cfg.backbone.frozen:
            self.store.freeze("backbone.")
            if train_final_block:
                last = cfg.backbone.depth - 1
                for name, p in self.store.params.items():
                    if name.startswith(f"backbone.block{last:02d}"):
                        p.requires_grad = True

    def forward(self, images: np.ndarray) -> DiffArray:
        """(B, H, W) -> (B, 10, 6)."""
        feats = self.backbone.forward(images[:, None].astype(self.store.dtype))
        f = da.reshape(
            self.calib.apply(0, feats), (images.shape[0], self.cfg.backbone.embed_dim)
        )
        return self.heads(da.gelu(self.proj(f)))

    def calibrate(self, images: np.ndarray) -> None:
        """Fit output feature standardization on sample frames (N, H, W)."""
        z = self.backbone.forward(images[:, None].astype(self.store.dtype))
        self.calib.fit(0, z.data, self.store.dtype)

    def count_params(self) -> dict:
        return count_params(self.store)


def count_params(store: ParamStore) -> dict:
    by_component: dict[str, dict] = {}
    trainable = frozen = 0
    for name, p in store.params.items():
        comp = name.split(".")[0]
        entry = by_component.setdefault(comp, {"trainable": 0, "frozen": 0})
        n = p.data.size
        if p.requires_grad:
            trainable += n
            entry["trainable"] += n
        else:
            frozen += n
            entry["frozen"] += n
    return {"trainable": trainable, "frozen": frozen, "by_component": by_component}
