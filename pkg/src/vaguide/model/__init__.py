from .adapter import VAAdapterStack, timestep_embedding
from .checkpoint import load_checkpoint, save_checkpoint
from .config import BackboneConfig, ModelConfig, VAAdapterConfig
from .guidance import GuidanceModel, SingleFrameModel, count_params

__all__ = [
    "BackboneConfig",
    "GuidanceModel",
    "ModelConfig",
    "SingleFrameModel",
    "VAAdapterConfig",
    "VAAdapterStack",
    "count_params",
    "load_checkpoint",
    "save_checkpoint",
    "timestep_embedding",
]
