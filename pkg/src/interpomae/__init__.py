"""Masked autoencoder for multivariate time series that restores masked
patches with a learned interpolator over visible latent codes."""

from .data import Blocks, MaskPattern, Series, Uniform, UniformRange, generate_sines, load_csv, write_csv
from .generate import augment, denoise, impute, synthesize
from .model import ModelBundle, ModelConfig, init_params
from .train import TrainConfig, TrainState, fit, load_checkpoint, save_checkpoint

__all__ = [
    "Blocks", "MaskPattern", "Series", "Uniform", "UniformRange", "generate_sines", "load_csv", "write_csv",
    "augment", "denoise", "impute", "synthesize",
    "ModelBundle", "ModelConfig", "init_params",
    "TrainConfig", "TrainState", "fit", "load_checkpoint", "save_checkpoint",
]
