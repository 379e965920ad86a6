"""Model configuration records."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "transformer"  # "transformer" | "conv"
    depth: int = 8
    embed_dim: int = 384
    patch_size: int = 8
    heads: int = 6
    image_size: int = 64
    mlp_ratio: int = 4
    frozen: bool = True

    def __post_init__(self):
        if self.kind not in ("transformer", "conv"):
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        if self.depth < 2:
            raise ValueError("backbone depth must be >= 2")
        if self.kind == "transformer" and self.image_size % self.patch_size:
            raise ValueError("image size must be divisible by patch size")


@dataclass(frozen=True)
class VAAdapterConfig:
    bottleneck: int = 64  # r
    seq_len: int = 4  # L
    interaction_heads: int = 4
    interaction_mlp_ratio: int = 2
    variant: str = "full"  # "full" | "vanilla"
    per_site_action_proj: bool = False  # per-layer action projection reading
    zero_init_up: bool = True  # start at the frozen backbone's function
    # zero action projection at init: the model starts insensitive to the
    # (stochastically sampled) history and learns to use it where it helps
    zero_init_action: bool = True

    def __post_init__(self):
        if self.bottleneck < 1:
            raise ValueError("bottleneck must be >= 1")
        if self.seq_len < 2:
            raise ValueError("sequence length must be >= 2")
        if self.variant not in ("full", "vanilla"):
            raise ValueError(f"unknown adapter variant {self.variant!r}")
        if self.bottleneck % 2:
            raise ValueError("bottleneck must be even for the sincos timestep table")


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    adapter: VAAdapterConfig = field(default_factory=VAAdapterConfig)
    proj_dim: int = 128  # image/action features mapped here before the GRU
    gru_hidden: int = 128
    n_planes: int = 10
    # fixed multiplier on the head outputs so predictions can span the full
    # mm/deg label range (rotations reach +/-180) within a short schedule
    head_scale: float = 10.0
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(
            backbone=BackboneConfig(**d["backbone"]),
            adapter=VAAdapterConfig(**d["adapter"]),
            proj_dim=d["proj_dim"],
            gru_hidden=d["gru_hidden"],
            n_planes=d["n_planes"],
            head_scale=d.get("head_scale", 10.0),
            seed=d["seed"],
        )
