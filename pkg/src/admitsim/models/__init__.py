"""Model families for completion risk: linear, boosted trees, and two
sequence architectures, plus featurization, search, and adapters."""

from .adapters import SequencePredictor, TabularPredictor, build_risk_table
from .features import FeatureSchema, featurize, fit_feature_schema, raw_features
from .gbt import GBTModel, train_gbt
from .logreg import LogisticModel, train_logreg
from .search import draw_candidates, random_search_cv
from .sequence import (
    LSTMClassifier,
    LSTMConfig,
    TransformerClassifier,
    TransformerConfig,
    evaluate_loss,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
    train_sequence_model,
)

__all__ = [
    "FeatureSchema",
    "fit_feature_schema",
    "featurize",
    "raw_features",
    "LogisticModel",
    "train_logreg",
    "GBTModel",
    "train_gbt",
    "TransformerConfig",
    "LSTMConfig",
    "TransformerClassifier",
    "LSTMClassifier",
    "train_sequence_model",
    "predict_proba",
    "evaluate_loss",
    "save_checkpoint",
    "load_checkpoint",
    "draw_candidates",
    "random_search_cv",
    "SequencePredictor",
    "TabularPredictor",
    "build_risk_table",
]
