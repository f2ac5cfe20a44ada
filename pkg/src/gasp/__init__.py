"""Generative models over functions: implicit MLPs produced by a hypernetwork and
trained adversarially against a point-cloud discriminator."""

from .errors import (CheckpointError, ConfigError, DataFormatError, DimensionError, DomainError,
                     GaspError, NumericError, StatisticsError)
from .function_rep import FunctionRep, MlpArchitecture, evaluate, fit_single
from .hypernet import Hypernetwork, sample_latent
from .pointcloud import GridSpec, PointCloud, grid_to_pointcloud, subsample
from .pointconv import DiscriminatorStack, PointConvLayer, discriminate, knn, pointconv_forward, pool_downsample
from .rff import FourierEncoding, encode, sample_encoding
from .training import Trainer, TrainingConfig, train

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ConfigError", "DataFormatError", "DimensionError", "DomainError", "GaspError",
    "NumericError", "StatisticsError", "FunctionRep", "MlpArchitecture", "evaluate", "fit_single",
    "Hypernetwork", "sample_latent", "GridSpec", "PointCloud", "grid_to_pointcloud", "subsample",
    "DiscriminatorStack", "PointConvLayer", "discriminate", "knn", "pointconv_forward", "pool_downsample",
    "FourierEncoding", "encode", "sample_encoding", "Trainer", "TrainingConfig", "train",
]
