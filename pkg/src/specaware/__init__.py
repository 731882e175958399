"""Spectral-metadata-conditioned masked autoencoding for hyperspectral cubes.

A hypernetwork turns per-band wavelength, bandwidth and sensor descriptors into
low-rank patch-embedding and reconstruction weights, so one parameter set
serves sensors with any number of bands.
"""

from .config import LossConfig, ModelConfig, Stage, TrainConfig, default_stages, load_config, save_config
from .data import Dataset, NormStats, build_dataset, compute_stats, normalize, read_patch, write_patch
from .hyper import HyperEmbedding, factorized_embed, flops_report, param_count
from .losses import charbonnier, sam_loss, total_loss
from .mae import SpecAwareMAE, hyperlinear_reconstruct, load_checkpoint, save_checkpoint
from .meta import MetaEncoder, TextEmbeddingProvider
from .sensors import Level, SensorSpec, get_sensor, subset
from .train import Trainer, linear_probe

__version__ = "0.1.0"

__all__ = [
    "Dataset", "HyperEmbedding", "Level", "LossConfig", "MetaEncoder", "ModelConfig", "NormStats",
    "SensorSpec", "SpecAwareMAE", "Stage", "TextEmbeddingProvider", "TrainConfig", "Trainer",
    "build_dataset", "charbonnier", "compute_stats", "default_stages", "factorized_embed",
    "flops_report", "get_sensor", "hyperlinear_reconstruct", "linear_probe", "load_checkpoint",
    "load_config", "normalize", "param_count", "read_patch", "sam_loss", "save_checkpoint",
    "save_config", "subset", "total_loss", "write_patch",
]
