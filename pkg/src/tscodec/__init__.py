"""Compression of multichannel physiological time series: wavelets, FPCA and a numpy VAE."""

from .data import Dataset, Label, Record, generate_synthetic, load_dataset, save_dataset
from .results import CompressionResult, ConfusionMatrix, Method, NoiseExperimentResult, Regime

__version__ = "0.1.0"

__all__ = [
    "CompressionResult",
    "ConfusionMatrix",
    "Dataset",
    "generate_synthetic",
    "Label",
    "load_dataset",
    "Method",
    "NoiseExperimentResult",
    "Record",
    "Regime",
    "save_dataset",
]
