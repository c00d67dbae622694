"""Baseline subflow classifiers: Gaussian Naive Bayes and K-nearest neighbours."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit

from ..features import FeatureVector
from .base import LabeledDataset, SubflowPrediction, TrainingError, check_schema, check_training

VAR_FLOOR = 1e-12


class GaussianNB:
    """Per-class, per-feature Gaussian likelihoods with class priors from the data."""

    def __init__(self, var_floor: float = VAR_FLOOR):
        self.var_floor = var_floor

    def fit(self, data: LabeledDataset) -> "GaussianNB":
        check_training(data)
        self.schema = data.schema
        self.means = np.empty((2, data.X.shape[1]))
        self.vars = np.empty((2, data.X.shape[1]))
        self.log_prior = np.empty(2)
        for c in (0, 1):
            Xc = data.X[data.y == c]
            self.means[c] = Xc.mean(axis=0)
            self.vars[c] = np.maximum(Xc.var(axis=0), self.var_floor)
            self.log_prior[c] = np.log(len(Xc) / len(data))
        return self

    def joint_log_likelihood(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.empty((len(X), 2))
        for c in (0, 1):
            z = (X - self.means[c]) ** 2 / self.vars[c]
            out[:, c] = self.log_prior[c] - 0.5 * np.sum(np.log(2 * np.pi * self.vars[c]) + z, axis=1)
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        jll = self.joint_log_likelihood(X)
        return expit(jll[:, 1] - jll[:, 0])


def train_predict_nb(data: LabeledDataset, v: FeatureVector) -> SubflowPrediction:
    check_schema(v, data.schema)
    model = GaussianNB().fit(data)
    return SubflowPrediction.from_score(float(model.predict_proba(v.values)[0]))


class KNNClassifier:
    """Majority vote of the ``k`` nearest training points in z-scored feature space.

    The score is the fraction of neighbours labelled unknown, so an even split
    resolves to unknown.
    """

    def __init__(self, k: int = 3):
        if k < 1:
            raise ValueError("k must be positive")
        if k % 2 == 0:
            warnings.warn(f"k={k} is even; vote ties resolve to unknown", stacklevel=2)
        self.k = k

    def fit(self, data: LabeledDataset) -> "KNNClassifier":
        if len(data) == 0:
            raise TrainingError("empty dataset")
        if len(data) < self.k:
            raise TrainingError(f"need at least k={self.k} training points, got {len(data)}")
        self.schema = data.schema
        self.mean = data.X.mean(axis=0)
        std = data.X.std(axis=0)
        self.scale = np.where(std > 0, std, 1.0)
        self.y = data.y.copy()
        self._tree = cKDTree((data.X - self.mean) / self.scale)
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        Z = (np.atleast_2d(np.asarray(X, dtype=np.float64)) - self.mean) / self.scale
        _, idx = self._tree.query(Z, k=self.k)
        idx = np.asarray(idx).reshape(len(Z), self.k)
        return self.y[idx].mean(axis=1)


def knn_predict(data: LabeledDataset, v: FeatureVector, k: int = 3) -> SubflowPrediction:
    check_schema(v, data.schema)
    model = KNNClassifier(k).fit(data)
    return SubflowPrediction.from_score(float(model.predict_proba(v.values)[0]))
