"""Masked denoising autoencoder that compresses a thermal sequence into one aligned image."""
from .estimator import MaskedAutoencoderAdapter, PixelCentering
from .masking import MaskSpec, corrupt, corrupt_batch
from .model import AdapterModel, ArchSpec, decode, encode, load_checkpoint, resample, save_checkpoint
from .optim import Adam
from .training import (
    POOLINGS,
    AlignedImage,
    LatentStack,
    TrainConfig,
    latent_stack,
    pool,
    run_adapter,
    train,
)

__all__ = [
    "Adam",
    "AdapterModel",
    "AlignedImage",
    "ArchSpec",
    "LatentStack",
    "MaskSpec",
    "MaskedAutoencoderAdapter",
    "POOLINGS",
    "PixelCentering",
    "TrainConfig",
    "corrupt",
    "corrupt_batch",
    "decode",
    "encode",
    "latent_stack",
    "load_checkpoint",
    "pool",
    "resample",
    "run_adapter",
    "save_checkpoint",
    "train",
]
