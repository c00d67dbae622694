from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..features import FeatureVector, arity
from ..flows import KNOWN, UNKNOWN


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class SubflowPrediction:
    label: str
    score: float  # probability of class unknown

    @classmethod
    def from_score(cls, score: float) -> "SubflowPrediction":
        return cls(UNKNOWN if score >= 0.5 else KNOWN, score)


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray  # 1 = unknown, 0 = known
    schema: str

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.size == 0:
            self.X = self.X.reshape(0, arity(self.schema))
        if self.X.ndim != 2 or self.X.shape[1] != arity(self.schema) or len(self.X) != len(self.y):
            raise ValueError(f"dataset shape {self.X.shape} does not fit schema {self.schema}")

    def __len__(self) -> int:
        return len(self.y)

    @classmethod
    def from_vectors(cls, vectors: Sequence[FeatureVector]) -> "LabeledDataset":
        if not vectors:
            raise TrainingError("empty dataset")
        schema = vectors[0].schema
        if any(v.schema != schema for v in vectors):
            raise TrainingError("mixed feature schemas in dataset")
        y = []
        for i, v in enumerate(vectors):
            if v.label not in (KNOWN, UNKNOWN):
                raise TrainingError(f"vector {i} has no known/unknown label")
            y.append(int(v.label == UNKNOWN))
        return cls(np.stack([v.values for v in vectors]), np.array(y), schema)


def check_schema(v: FeatureVector, schema: str) -> None:
    if v.schema != schema:
        raise ValueError(f"feature schema mismatch: vector is {v.schema}, model expects {schema}")


def check_training(data: LabeledDataset) -> None:
    if len(data) == 0:
        raise TrainingError("empty dataset")
    bad = ~np.isfinite(data.X).all(axis=1)
    if bad.any():
        raise TrainingError(f"non-finite feature value in training vector {int(np.argmax(bad))}")
    if data.y.min() == data.y.max():
        raise TrainingError("training data must contain both known and unknown samples")
