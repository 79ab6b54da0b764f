"""Attention-based imputation of multivariate time series with learned feature identities.

The network, its tensor engine and the training loop are implemented on top
of NumPy; see :class:`HelixImputer` for the estimator interface and
:mod:`helix_impute.cli` for the command line.
"""

from .baselines import BaselineImputer, impute_linear, impute_locf, impute_mean, impute_median
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import SeriesBatch
from .encoder import forward
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    HelixError,
    NumericError,
    ParseError,
)
from .estimator import HelixImputer
from .missingness import CorruptionSpec, SyntheticSpec, apply_corruption, synth_spatial
from .model import HelixModel, ModelConfig
from .training import TrainConfig, fit, impute

__all__ = [
    "BaselineImputer",
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "CorruptionSpec",
    "DataError",
    "DimensionError",
    "HelixError",
    "HelixImputer",
    "HelixModel",
    "ModelConfig",
    "NumericError",
    "ParseError",
    "RunConfig",
    "SeriesBatch",
    "SyntheticSpec",
    "TrainConfig",
    "apply_corruption",
    "fit",
    "forward",
    "impute",
    "impute_linear",
    "impute_locf",
    "impute_mean",
    "impute_median",
    "load_checkpoint",
    "save_checkpoint",
    "synth_spatial",
]
