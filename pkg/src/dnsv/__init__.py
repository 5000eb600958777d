"""Speaker verification with length-normalized deep embeddings at desk scale."""

from .backend import PLDA, PldaModel, cosine, inner_product, length_normalize, plda_score, plda_train
from .embedding import EmbeddingSet, extract, extract_all
from .estimator import SpeakerEmbeddingNet
from .exceptions import (ConfigError, DegenerateNorm, DnsvError, DomainError, FormatError,
                         MetricUndefined, ModelDegenerate, TapPointUnavailable, TrainingDataError,
                         TrainingDiverged, UtteranceTooShort)
from .features import FeatureMatrix, LogMelExtractor, Waveform
from .metrics import DcfParams, alpha_lower_bound, compute_eer, compute_min_dcf, det_points, evaluate
from .nn import Model, TrainConfig, train
from .synth import SynthSpec, generate

__version__ = "0.1.0"

__all__ = [
    "PLDA", "PldaModel", "cosine", "inner_product", "length_normalize", "plda_score", "plda_train",
    "EmbeddingSet", "extract", "extract_all", "SpeakerEmbeddingNet",
    "ConfigError", "DegenerateNorm", "DnsvError", "DomainError", "FormatError", "MetricUndefined",
    "ModelDegenerate", "TapPointUnavailable", "TrainingDataError", "TrainingDiverged",
    "UtteranceTooShort", "FeatureMatrix", "LogMelExtractor", "Waveform",
    "DcfParams", "alpha_lower_bound", "compute_eer", "compute_min_dcf", "det_points", "evaluate",
    "Model", "TrainConfig", "train", "SynthSpec", "generate",
]
