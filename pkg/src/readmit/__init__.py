"""Multimodal 30-day hospital readmission prediction.

Feature pipelines (random-forest EHR selection, TF-IDF notes, precomputed
image vectors), per-modality transformer encoders with attention pooling,
a fusion MLP head, label-smoothing focal loss, dynamic feature noise,
K-fold ensembling, and ROC/AUC evaluation — all on a small numpy-backed
reverse-mode autodiff engine.
"""

__version__ = "0.1.0"

from .data import AdmissionRecord, Dataset, SynthConfig, generate_synthetic
from .errors import ConfigError, DataError, NumericError
from .evaluation import auc, auc_mann_whitney, evaluate, roc_curve
from .features import FeatureSelection, TfidfModel, fit_tfidf, transform_tfidf
from .model import ModelConfig, ReadmissionModel, positional_encoding
from .tensor import Tensor, grad_check
from .training import (AdamW, LossConfig, NoiseSchedule, TrainConfig,
                       focal_loss, train)

__all__ = [
    "AdmissionRecord", "Dataset", "SynthConfig", "generate_synthetic",
    "ConfigError", "DataError", "NumericError",
    "auc", "auc_mann_whitney", "evaluate", "roc_curve",
    "FeatureSelection", "TfidfModel", "fit_tfidf", "transform_tfidf",
    "ModelConfig", "ReadmissionModel", "positional_encoding",
    "Tensor", "grad_check",
    "AdamW", "LossConfig", "NoiseSchedule", "TrainConfig", "focal_loss", "train",
    "__version__",
]
