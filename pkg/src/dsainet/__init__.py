"""Dual-scale attentive interaction network for EEG decoding, on a small numpy autodiff core."""
from .config import ABLATIONS, DATASETS, ModelConfig, RunConfig, TrainConfig, ablate, preset_configs
from .data import (SplitManifest, TrialSet, make_splits, read_matrix, read_trials, segment, synth_generate,
                   write_matrix, write_trials, zscore)
from .efficiency import count_macs, count_parameters
from .estimator import DSAINetClassifier, ZScoreTransformer
from .exceptions import ConfigurationError, ContractError, DataError, DimensionError, DSAINetError
from .metrics import accuracy, weighted_f1
from .model import DSAINet
from .training import Adam, RunRecord, cross_entropy, train

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS", "DATASETS", "ModelConfig", "RunConfig", "TrainConfig", "ablate", "preset_configs",
    "SplitManifest", "TrialSet", "make_splits", "read_matrix", "read_trials", "segment", "synth_generate",
    "write_matrix", "write_trials", "zscore", "count_macs", "count_parameters", "DSAINetClassifier",
    "ZScoreTransformer", "ConfigurationError", "ContractError", "DataError", "DimensionError",
    "DSAINetError", "accuracy", "weighted_f1", "DSAINet", "Adam", "RunRecord", "cross_entropy", "train",
]
