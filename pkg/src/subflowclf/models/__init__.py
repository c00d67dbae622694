from .base import LabeledDataset, SubflowPrediction, TrainingError
from .baselines import GaussianNB, KNNClassifier, knn_predict, train_predict_nb
from .gbdt import (
    GbdtModel,
    GbdtParams,
    ModelFormatError,
    Tree,
    load_model,
    model_to_json,
    predict_gbdt,
    save_model,
    train_gbdt,
)

__all__ = [
    "GaussianNB",
    "GbdtModel",
    "GbdtParams",
    "KNNClassifier",
    "LabeledDataset",
    "ModelFormatError",
    "SubflowPrediction",
    "TrainingError",
    "Tree",
    "knn_predict",
    "load_model",
    "model_to_json",
    "predict_gbdt",
    "save_model",
    "train_gbdt",
    "train_predict_nb",
]
