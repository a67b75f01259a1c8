from .decoder import DecoderConfig, MapDecoder, TimestepEmbed, rms_norm
from .encoder import EncoderConfig, RadioEncoder, RopeAttention
from .network import PROFILES, FarmModel, ModelConfig, TokenBatch, grid_coords
from .pos import axis_split, rope_phases, rope_rotate, rotate_pairs, sincos_pe

__all__ = [
    "DecoderConfig", "MapDecoder", "TimestepEmbed", "rms_norm",
    "EncoderConfig", "RadioEncoder", "RopeAttention",
    "PROFILES", "FarmModel", "ModelConfig", "TokenBatch", "grid_coords",
    "axis_split", "rope_phases", "rope_rotate", "rotate_pairs", "sincos_pe",
]
