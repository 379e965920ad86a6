"""Frozen vision encoders: a ViT-style transformer and a patch-merging
convolutional variant. Both expose adapter insertion sites in their latter
half via a callback that sees the running feature map and returns a pooled
residual to broadcast-add back."""

from __future__ import annotations

import math

import numpy as np

from .. import diffarray as da
from ..diffarray import DiffArray
from .config import BackboneConfig
from .layers import LayerNorm, Linear, ParamStore, TransformerBlock, sincos_positions


def _patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B, L, H, W) -> (B, L, N, patch*patch), non-overlapping patches."""
    b, l, h, w = images.shape
    hp, wp = h // patch, w // patch
    x = images.reshape(b, l, hp, patch, wp, patch)
    x = x.transpose(0, 1, 2, 4, 3, 5)
    return x.reshape(b, l, hp * wp, patch * patch)


class TransformerBackbone:
    def __init__(self, store: ParamStore, name: str, cfg: BackboneConfig):
        self.cfg = cfg
        n_tokens = (cfg.image_size // cfg.patch_size) ** 2
        # the embedding gain and the damped positional table keep the token
        # stream dominated by image content rather than position constants
        self.patch_embed = Linear(
            store, f"{name}.patch_embed", cfg.patch_size**2, cfg.embed_dim,
            fan_in_init=True, init_gain=8.0,
        )
        self.pos = store.array(
            f"{name}.pos_embed", 0.3 * sincos_positions(n_tokens, cfg.embed_dim)
        )
        self.blocks = [
            TransformerBlock(
                store, f"{name}.block{i:02d}", cfg.embed_dim, cfg.heads,
                cfg.mlp_ratio, fan_in_init=True,
            )
            for i in range(cfg.depth)
        ]
        self.final_ln = LayerNorm(store, f"{name}.final_ln", cfg.embed_dim)
        # non-uniform token pooling: a plain token mean cancels most of the
        # image-dependent variation (slices share global statistics), so pool
        # with fixed positive per-token weights to keep spatial structure
        rng = np.random.default_rng(store._seed_for(f"{name}.pool_weights"))
        self.pool_w = store.array(
            f"{name}.pool_weights",
            1.0 + 0.9 * rng.uniform(-1.0, 1.0, size=(n_tokens, 1)),
        )
        # adapters go into the deepest ceil(depth/2) blocks, two sites per block
        first = cfg.depth - math.ceil(cfg.depth / 2)
        self.adapter_blocks = list(range(first, cfg.depth))
        self.site_dims = [cfg.embed_dim] * (2 * len(self.adapter_blocks))

    def _pool(self, x: DiffArray) -> DiffArray:
        return da.mean(da.mul(x, self.pool_w), axis=2)

    def forward(self, images: np.ndarray, site_cb=None) -> DiffArray:
        """Images (B, L, H, W) -> pooled features (B, L, C)."""
        patches = DiffArray(_patchify(images, self.cfg.patch_size))
        x = da.add(self.patch_embed(patches), DiffArray(self.pos.data))
        site = 0
        for i, blk in enumerate(self.blocks):
            x = da.add(x, blk.attn(blk.ln1(x)))
            if site_cb is not None and i in self.adapter_blocks:
                x = _add_pooled_residual(x, site_cb(site, self._pool(x)))
                site += 1
            x = da.add(x, blk.fc2(blk.act(blk.fc1(blk.ln2(x)))))
            if site_cb is not None and i in self.adapter_blocks:
                x = _add_pooled_residual(x, site_cb(site, self._pool(x)))
                site += 1
        return self._pool(self.final_ln(x))


class ConvBackbone:
    """Hierarchy of non-overlapping patch convolutions with ReLU, ending in
    global average pooling. Stage s maps (h, w, d) -> (h/2, w/2, 2d)."""

    def __init__(self, store: ParamStore, name: str, cfg: BackboneConfig):
        self.cfg = cfg
        dims = [max(8, cfg.embed_dim >> (cfg.depth - 1 - i)) for i in range(cfg.depth)]
        dims[-1] = cfg.embed_dim
        self.dims = dims
        self.stem = Linear(store, f"{name}.stem", cfg.patch_size**2, dims[0],
                           fan_in_init=True)
        self.stages = [
            Linear(store, f"{name}.stage{i:02d}", 4 * dims[i - 1], dims[i],
                   fan_in_init=True)
            for i in range(1, cfg.depth)
        ]
        grid = cfg.image_size // cfg.patch_size
        if grid >> (cfg.depth - 1) < 1:
            raise ValueError("conv backbone too deep for the image size")
        first = cfg.depth - math.ceil(cfg.depth / 2)
        self.adapter_stages = list(range(first, cfg.depth))
        self.site_dims = [dims[i] for i in self.adapter_stages]

    def forward(self, images: np.ndarray, site_cb=None) -> DiffArray:
        patches = DiffArray(_patchify(images, self.cfg.patch_size))
        x = da.relu(self.stem(patches))
        b, l = images.shape[:2]
        grid = self.cfg.image_size // self.cfg.patch_size
        site = 0
        if site_cb is not None and 0 in self.adapter_stages:
            x = _add_pooled_residual(x, site_cb(site, _pool(x)))
            site += 1
        for i, stage in enumerate(self.stages, start=1):
            x = _merge_patches(x, b, l, grid)
            grid //= 2
            x = da.relu(stage(x))
            if site_cb is not None and i in self.adapter_stages:
                x = _add_pooled_residual(x, site_cb(site, _pool(x)))
                site += 1
        return _pool(x)


def _pool(x: DiffArray) -> DiffArray:
    """Mean over the token/spatial axis of (B, L, N, C)."""
    return da.mean(x, axis=2)


def _add_pooled_residual(x: DiffArray, resid: DiffArray) -> DiffArray:
    b, l, c = resid.shape
    return da.add(x, da.reshape(resid, (b, l, 1, c)))


def _merge_patches(x: DiffArray, b: int, l: int, grid: int) -> DiffArray:
    """2x2 patch merge: (B, L, g*g, d) -> (B, L, g*g/4, 4d)."""
    d = x.shape[-1]
    x = da.reshape(x, (b, l, grid // 2, 2, grid // 2, 2, d))
    x = da.transpose(x, (0, 1, 2, 4, 3, 5, 6))
    return da.reshape(x, (b, l, (grid // 2) ** 2, 4 * d))


def build_backbone(store: ParamStore, name: str, cfg: BackboneConfig):
    if cfg.kind == "transformer":
        return TransformerBackbone(store, name, cfg)
    return ConvBackbone(store, name, cfg)
