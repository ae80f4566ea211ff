"""Diffusion over neural-field weight vectors."""
from .checkpoint import dumps_checkpoint, load_checkpoint, loads_checkpoint, save_checkpoint
from .condition import NULL, Condition, EmbeddingVector, TypeId, read_embedding, write_embedding
from .denoiser import CondBatch, Denoiser, DenoiserConfig, build_denoiser, timestep_embedding
from .sampling import sample_cfg, sample_uncond
from .schedule import NoiseSchedule, forward_marginal, forward_step, make_schedule
from .training import DenoiserParams, TrainConfig, train

__all__ = [
    "NULL", "Condition", "CondBatch", "Denoiser", "DenoiserConfig", "DenoiserParams", "EmbeddingVector",
    "NoiseSchedule", "TrainConfig", "TypeId", "build_denoiser", "dumps_checkpoint", "forward_marginal",
    "forward_step", "load_checkpoint", "loads_checkpoint", "make_schedule", "read_embedding",
    "sample_cfg", "sample_uncond", "save_checkpoint", "timestep_embedding", "train", "write_embedding",
]
