"""Parameter store and shared neural layers built on the diffarray engine."""

from __future__ import annotations

import math
import zlib

import numpy as np

from .. import diffarray as da
from ..diffarray import DiffArray, init_trunc_normal
from ..rng import mix64

INIT_STD = 0.02


class ParamStore:
    """Named parameter dictionary with deterministic per-name init seeds."""

    def __init__(self, seed: int, dtype=np.float32):
        self.seed = seed
        self.dtype = dtype
        self.params: dict[str, DiffArray] = {}

    def _seed_for(self, name: str) -> int:
        return mix64(self.seed ^ zlib.crc32(name.encode()))

    def _register(self, name: str, p: DiffArray) -> DiffArray:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        self.params[name] = p
        return p

    def trunc_normal(self, name: str, shape, std: float = INIT_STD) -> DiffArray:
        return self._register(
            name, init_trunc_normal(shape, std, self._seed_for(name), dtype=self.dtype)
        )

    def zeros(self, name: str, shape) -> DiffArray:
        return self._register(
            name, DiffArray(np.zeros(shape, dtype=self.dtype), requires_grad=True)
        )

    def ones(self, name: str, shape) -> DiffArray:
        return self._register(
            name, DiffArray(np.ones(shape, dtype=self.dtype), requires_grad=True)
        )

    def array(self, name: str, values: np.ndarray) -> DiffArray:
        return self._register(
            name, DiffArray(values.astype(self.dtype), requires_grad=True)
        )

    def freeze(self, prefix: str):
        for name, p in self.params.items():
            if name.startswith(prefix):
                p.requires_grad = False

    def trainable(self) -> dict[str, DiffArray]:
        return {n: p for n, p in self.params.items() if p.requires_grad}


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 zero_init: bool = False, fan_in_init: bool = False,
                 init_gain: float = 1.0):
        if zero_init:
            self.w = store.zeros(f"{name}.weight", (d_in, d_out))
        else:
            # fan-in scaling keeps activations O(1) through frozen/plumbing
            # layers; the narrow default is reserved for the adapter modules
            std = 1.0 / math.sqrt(d_in) if fan_in_init else INIT_STD
            self.w = store.trunc_normal(f"{name}.weight", (d_in, d_out),
                                        std=init_gain * std)
        self.b = store.zeros(f"{name}.bias", (d_out,))

    def __call__(self, x: DiffArray) -> DiffArray:
        return da.add(da.matmul(x, self.w), self.b)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int, eps: float = 1e-5):
        self.w = store.ones(f"{name}.weight", (dim,))
        self.b = store.zeros(f"{name}.bias", (dim,))
        self.eps = eps

    def __call__(self, x: DiffArray) -> DiffArray:
        return da.layer_norm(x, self.w, self.b, eps=self.eps)


class SelfAttention:
    """Multi-head self-attention over (..., N, dim) token arrays."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int,
                 fan_in_init: bool = False):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = Linear(store, f"{name}.qkv", dim, 3 * dim, fan_in_init=fan_in_init)
        self.proj = Linear(store, f"{name}.proj", dim, dim, fan_in_init=fan_in_init)

    def __call__(self, x: DiffArray) -> DiffArray:
        lead = x.shape[:-2]
        n, d = x.shape[-2], x.shape[-1]
        qkv = self.qkv(x)  # (..., N, 3*dim)
        q, k, v = da.split(qkv, 3, axis=qkv.ndim - 1)

        def heads_first(t):
            t = da.reshape(t, lead + (n, self.heads, self.head_dim))
            axes = tuple(range(len(lead))) + (
                len(lead) + 1,
                len(lead),
                len(lead) + 2,
            )
            return da.transpose(t, axes)  # (..., heads, N, head_dim)

        q, k, v = heads_first(q), heads_first(k), heads_first(v)
        attn = da.softmax(
            da.scale(da.matmul(q, da.transpose(k)), 1.0 / math.sqrt(self.head_dim))
        )
        out = da.matmul(attn, v)  # (..., heads, N, head_dim)
        axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        out = da.transpose(out, axes)  # (..., N, heads, head_dim)
        out = da.reshape(out, lead + (n, d))
        return self.proj(out)


class TransformerBlock:
    """Pre-norm block: x + attn(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int,
                 mlp_ratio: int, activation=da.gelu, fan_in_init: bool = False):
        self.ln1 = LayerNorm(store, f"{name}.ln1", dim)
        self.attn = SelfAttention(store, f"{name}.attn", dim, heads, fan_in_init=fan_in_init)
        self.ln2 = LayerNorm(store, f"{name}.ln2", dim)
        self.fc1 = Linear(store, f"{name}.mlp.fc1", dim, mlp_ratio * dim,
                          fan_in_init=fan_in_init)
        self.fc2 = Linear(store, f"{name}.mlp.fc2", mlp_ratio * dim, dim,
                          fan_in_init=fan_in_init)
        self.act = activation

    def __call__(self, x: DiffArray) -> DiffArray:
        x = da.add(x, self.attn(self.ln1(x)))
        return da.add(x, self.fc2(self.act(self.fc1(self.ln2(x)))))


def sincos_positions(n: int, dim: int) -> np.ndarray:
    """Fixed 1-D sincos table: sin(i / 10000^(2d/dim)) | cos, shape (n, dim)."""
    if dim % 2:
        raise ValueError("sincos dimension must be even")
    half = dim // 2
    freqs = 1.0 / (10000.0 ** (2.0 * np.arange(half) / dim))
    angles = np.arange(n)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
