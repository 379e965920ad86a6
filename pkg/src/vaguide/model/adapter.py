"""Vision-action adapters.

Each insertion site holds a down projection D, an up projection U, and (full
variant) an interaction transformer block S over the interleaved token
sequence [z_v1, z_a1, ..., z_vL]. Raw 6-vector actions are projected once at
the first site and the resulting r-dim features propagate site to site; the
trainable timestep table (sincos-initialized) is added to vision tokens at
every site and to action tokens at the first.

The vanilla variant keeps D, A, U but drops S: each frame's residual is
U(relu(D(f) + T)) with no cross-token mixing.
"""

from __future__ import annotations

import numpy as np

from .. import diffarray as da
from ..diffarray import DiffArray
from .config import VAAdapterConfig
from .layers import Linear, ParamStore, TransformerBlock, sincos_positions

ACTION_DIM = 6


def timestep_embedding(length: int, r: int) -> np.ndarray:
    """1-D sincos table, one row per sequence position."""
    if r % 2:
        raise ValueError("timestep embedding dimension must be even")
    return sincos_positions(length, r)


class VAAdapterSite:
    def __init__(self, store: ParamStore, name: str, feat_dim: int, cfg: VAAdapterConfig,
                 with_action_proj: bool):
        self.cfg = cfg
        self.down = Linear(store, f"{name}.down", feat_dim, cfg.bottleneck)
        self.up = Linear(
            store, f"{name}.up", cfg.bottleneck, feat_dim, zero_init=cfg.zero_init_up
        )
        self.action_proj = (
            Linear(store, f"{name}.action", ACTION_DIM, cfg.bottleneck,
                   zero_init=cfg.zero_init_action)
            if with_action_proj
            else None
        )
        self.interaction = (
            TransformerBlock(
                store,
                f"{name}.interaction",
                cfg.bottleneck,
                cfg.interaction_heads,
                cfg.interaction_mlp_ratio,
                activation=da.relu,
            )
            if cfg.variant == "full"
            else None
        )


class VAAdapterStack:
    """All adapter sites of one model, sharing the timestep table."""

    def __init__(self, store: ParamStore, name: str, site_dims: list[int],
                 cfg: VAAdapterConfig):
        self.cfg = cfg
        self.timestep = store.array(
            f"{name}.timestep", timestep_embedding(cfg.seq_len, cfg.bottleneck)
        )
        self.sites = [
            VAAdapterSite(
                store,
                f"{name}.site{k:02d}",
                dim,
                cfg,
                with_action_proj=(k == 0 or cfg.per_site_action_proj),
            )
            for k, dim in enumerate(site_dims)
        ]

    def _timestep_rows(self, n: int) -> DiffArray:
        return da.embedding_lookup(self.timestep, np.arange(n))

    def site_forward(self, k: int, vision_feats: DiffArray, action_state: dict):
        """One adapter pass.

        vision_feats: pooled (B, L, C) features from the backbone at this
        depth. action_state carries {"raw": (B, L-1, 6) DiffArray, "feats":
        propagated (B, L-1, r) or None}. Returns (B, L, C) vision residuals
        and updates action_state["feats"].
        """
        site = self.sites[k]
        L = self.cfg.seq_len
        b = vision_feats.shape[0]
        if vision_feats.shape[1] != L:
            raise ValueError(
                f"adapter configured for L={L}, got {vision_feats.shape[1]} frames"
            )
        r = self.cfg.bottleneck

        z_v = da.add(site.down(vision_feats), self._timestep_rows(L))

        if site.action_proj is not None:
            z_a = da.add(
                site.action_proj(action_state["raw"]), self._timestep_rows(L - 1)
            )
        else:
            z_a = action_state["feats"]

        if site.interaction is None:
            action_state["feats"] = z_a
            return site.up(da.relu(z_v))

        tokens = interleave(z_v, z_a)  # (B, 2L-1, r)
        mixed = site.interaction(tokens)
        h_v, a_out = deinterleave(mixed, L)
        action_state["feats"] = a_out
        return site.up(da.relu(da.add(h_v, z_v)))


def interleave(z_v: DiffArray, z_a: DiffArray) -> DiffArray:
    """[v1, a1, v2, a2, ..., vL] from (B, L, r) and (B, L-1, r)."""
    b, l, r = z_v.shape
    head, tail = da.split(z_v, [l - 1, 1], axis=1)
    pairs = da.concat(
        [da.reshape(head, (b, l - 1, 1, r)), da.reshape(z_a, (b, l - 1, 1, r))], axis=2
    )
    return da.concat([da.reshape(pairs, (b, 2 * (l - 1), r)), tail], axis=1)


def deinterleave(tokens: DiffArray, l: int) -> tuple[DiffArray, DiffArray]:
    """Inverse of interleave: (B, 2L-1, r) -> vision (B, L, r), action (B, L-1, r)."""
    b, _, r = tokens.shape
    body, tail = da.split(tokens, [2 * (l - 1), 1], axis=1)
    pairs = da.reshape(body, (b, l - 1, 2, r))
    v_head, a_out = da.split(pairs, 2, axis=2)
    vision = da.concat([da.reshape(v_head, (b, l - 1, r)), tail], axis=1)
    return vision, da.reshape(a_out, (b, l - 1, r))
