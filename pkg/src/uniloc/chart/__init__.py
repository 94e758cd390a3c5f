"""Neural channel-charting core: feature extraction, MLP, losses, training."""

from .features import FeatureConfig, default_feature_config, extract_features, feature_dim, features_batch
from .model import Adam, ChartModel, ChartModelConfig
from .losses import LossWeights, loss_los, loss_pairwise, loss_triplet
from .training import (
    TrainConfig,
    fit_affine,
    self_generated_labels,
    train_fingerprint,
    train_uniloc,
    train_unilocpro,
)
from .infer import infer

__all__ = [
    "Adam",
    "ChartModel",
    "ChartModelConfig",
    "FeatureConfig",
    "LossWeights",
    "TrainConfig",
    "default_feature_config",
    "extract_features",
    "feature_dim",
    "features_batch",
    "fit_affine",
    "infer",
    "loss_los",
    "loss_pairwise",
    "loss_triplet",
    "self_generated_labels",
    "train_fingerprint",
    "train_uniloc",
    "train_unilocpro",
]
