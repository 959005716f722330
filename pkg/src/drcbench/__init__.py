"""Blind estimation of dynamic range compressor parameters.

Synthesizes audio loops, compresses them over parameter grids, trains
siamese convolutional models on unprocessed/processed pairs, and regresses
the compressor settings from the learned embeddings with a random forest.
"""

from .audio import AudioClip, LoopRecipe, synthesize_loop
from .compressor import DrcParams, compress, static_gain_db
from .dataset import DatasetManifest, GridAxis, GridSpec, FAMILIES, build_grid, materialize
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    DrcBenchError,
    FormatError,
    GraphError,
    NumericError,
    ProtocolError,
    RecipeError,
    ShapeError,
    SizeError,
)
from .evaluate import EvalConfig, EvalReport, baseline_features, evaluate, mean_predictor_mae
from .forest import Forest, ForestConfig, RegressionTree
from .models import ModelSpec, SiameseModel, TrainConfig, load_model, save_model, train
from .spectrogram import Spectrogram, mel_filterbank, mel_spectrogram, stft_magnitude, transform
from .wavio import read_wav, write_wav

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "ConfigError",
    "DataError",
    "DatasetManifest",
    "DomainError",
    "DrcBenchError",
    "DrcParams",
    "EvalConfig",
    "EvalReport",
    "FAMILIES",
    "Forest",
    "ForestConfig",
    "FormatError",
    "GraphError",
    "GridAxis",
    "GridSpec",
    "LoopRecipe",
    "ModelSpec",
    "NumericError",
    "ProtocolError",
    "RecipeError",
    "RegressionTree",
    "ShapeError",
    "SiameseModel",
    "SizeError",
    "Spectrogram",
    "TrainConfig",
    "baseline_features",
    "build_grid",
    "compress",
    "evaluate",
    "load_model",
    "materialize",
    "mean_predictor_mae",
    "mel_filterbank",
    "mel_spectrogram",
    "read_wav",
    "save_model",
    "static_gain_db",
    "stft_magnitude",
    "synthesize_loop",
    "train",
    "transform",
    "write_wav",
    "__version__",
]
