"""Gradient-boosted regression trees for the binary known/unknown subflow task.

Binomial deviance, label ``unknown`` = 1. Each round fits a least-squares
regression tree to the residuals ``y - p`` using exact greedy splits over
presorted feature values, then sets each leaf to a Newton step
``sum(r) / sum(p (1 - p))``. The step is halved until the leaf's training
loss does not increase, so the training loss is monotone over rounds.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from ..features import FEATURE_NAMES, FeatureVector, arity
from .base import LabeledDataset, SubflowPrediction, TrainingError, check_schema, check_training

FORMAT_VERSION = 1
MODEL_TYPE = "gbdt-binary-logistic"

_HESS_FLOOR = 1e-12
_MAX_HALVINGS = 40


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GbdtParams:
    trees: int = 100
    max_depth: int = 4
    learning_rate: float = 0.1
    min_leaf: int = 5
    seed: int = 0
    subsample: float = 1.0

    def __post_init__(self) -> None:
        if self.trees < 0 or self.max_depth < 0 or self.min_leaf < 1:
            raise ValueError(f"invalid GBDT params {self}")
        if not 0 < self.subsample <= 1 or not self.learning_rate > 0:
            raise ValueError(f"invalid GBDT params {self}")


@dataclass
class Tree:
    """Flat binary tree. ``feature[i] == -1`` marks a leaf; internal nodes
    send ``x[feature] <= threshold`` to ``left``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def depth(self) -> int:
        def rec(i: int) -> int:
            if self.feature[i] < 0:
                return 0
            return 1 + max(rec(int(self.left[i])), rec(int(self.right[i])))
        return rec(0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index for each row of ``X``."""
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            go_left = X[rows, np.where(inner, f, 0)] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        t = cls(np.asarray(d["feature"], dtype=np.int64),
                np.asarray(d["threshold"], dtype=np.float64),
                np.asarray(d["left"], dtype=np.int64),
                np.asarray(d["right"], dtype=np.int64),
                np.asarray(d["value"], dtype=np.float64))
        n = len(t.feature)
        if n == 0 or not all(len(a) == n for a in (t.threshold, t.left, t.right, t.value)):
            raise ModelFormatError("tree arrays are empty or differ in length")
        inner = t.feature >= 0
        kids = np.concatenate([t.left[inner], t.right[inner]])
        if kids.size and (kids.min() <= 0 or kids.max() >= n):
            raise ModelFormatError("tree child index out of range")
        return t


@dataclass
class GbdtModel:
    trees: list[Tree]
    learning_rate: float
    base_score: float
    schema: str
    params: GbdtParams = field(default_factory=GbdtParams)
    train_loss: list[float] = field(default_factory=list, repr=False, compare=False)

    def raw_score(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != arity(self.schema):
            raise ValueError(f"model expects {arity(self.schema)} {self.schema} features, got shape {X.shape}")
        out = np.full(len(X), self.base_score)
        if self.trees:
            out += self.learning_rate * sum(t.predict(X) for t in self.trees)
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Probability of class unknown for each row."""
        return expit(self.raw_score(X))

    def predict_unknown(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X) >= 0.5

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "model_type": MODEL_TYPE,
            "schema": self.schema,
            "feature_names": list(FEATURE_NAMES[self.schema]),
            "params": asdict(self.params),
            "learning_rate": self.learning_rate,
            "base_score": self.base_score,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model format_version {d.get('format_version')!r}")
        if d.get("model_type") != MODEL_TYPE:
            raise ModelFormatError(f"unsupported model_type {d.get('model_type')!r}")
        try:
            schema = d["schema"]
            width = arity(schema)
            if list(d["feature_names"]) != list(FEATURE_NAMES[schema]):
                raise ModelFormatError("feature_names do not match schema")
            trees = [Tree.from_dict(t) for t in d["trees"]]
            params = GbdtParams(**d["params"])
            model = cls(trees, float(d["learning_rate"]), float(d["base_score"]), schema, params)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ModelFormatError):
                raise
            raise ModelFormatError(f"corrupt model document: {exc}") from None
        for t in trees:
            if t.feature.max() >= width:
                raise ModelFormatError("tree feature index exceeds schema arity")
        return model


def _logloss(F: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, F) - y * F


def _best_splits(r, order, xsorted, node_of, splittable, min_leaf):
    """Best (gain, feature, threshold) for every splittable node.

    Arrays are indexed by node id; gain is -inf where no valid split exists.
    ``splittable`` carries one extra False slot so that ``node_of == -1``
    (rows outside the tree) indexes it.
    """
    n_nodes = len(splittable) - 1
    best_gain = np.full(n_nodes, -np.inf)
    best_feat = np.full(n_nodes, -1, dtype=np.int64)
    best_thr = np.zeros(n_nodes)
    for f in range(len(order)):
        o = order[f]
        nid = node_of[o]
        keep = splittable[nid]
        o = o[keep]
        nid = nid[keep]
        xs = xsorted[f][keep]
        if len(o) == 0:
            continue
        if n_nodes > 1:
            # group rows by node while keeping feature order inside each node
            g = np.argsort(nid.astype(np.int16) if n_nodes < 2**15 else nid, kind="stable")
            o, nid, xs = o[g], nid[g], xs[g]
        rs = r[o]
        starts = np.flatnonzero(np.r_[True, nid[1:] != nid[:-1]])
        lengths = np.diff(np.r_[starts, len(o)])
        seg = np.repeat(np.arange(len(starts)), lengths)
        cum = np.cumsum(rs)
        before = np.where(starts > 0, cum[starts - 1], 0.0)
        tot = np.add.reduceat(rs, starts)
        sl = cum - before[seg]
        nl = np.arange(len(o)) - starts[seg] + 1
        nn = lengths[seg]
        nr = nn - nl
        sr = tot[seg] - sl
        valid = (nl >= min_leaf) & (nr >= min_leaf)
        valid[:-1] &= xs[:-1] < xs[1:]
        valid[-1] = False
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = sl * sl / nl + sr * sr / np.maximum(nr, 1) - tot[seg] ** 2 / nn
        gain = np.where(valid, gain, -np.inf)
        seg_max = np.maximum.reduceat(gain, starts)
        pos = np.where(valid & (gain == seg_max[seg]), np.arange(len(o)), len(o))
        first = np.minimum.reduceat(pos, starts)
        nodes = nid[starts]
        better = (seg_max > best_gain[nodes]) & (seg_max > 0)
        if better.any():
            nb = nodes[better]
            best_gain[nb] = seg_max[better]
            best_feat[nb] = f
            best_thr[nb] = xs[first[better]]
    return best_gain, best_feat, best_thr


def _leaf_values(leaf_rows, n_leaves, r, h, F, y, lr):
    sum_r = np.bincount(leaf_rows[0], weights=r[leaf_rows[1]], minlength=n_leaves)
    sum_h = np.bincount(leaf_rows[0], weights=h[leaf_rows[1]], minlength=n_leaves)
    gamma = sum_r / np.maximum(sum_h, _HESS_FLOOR)
    leaf_of, rows = leaf_rows
    F_s, y_s = F[rows], y[rows]
    old = np.bincount(leaf_of, weights=_logloss(F_s, y_s), minlength=n_leaves)
    pending = np.ones(n_leaves, dtype=bool)
    for _ in range(_MAX_HALVINGS):
        new = np.bincount(leaf_of, weights=_logloss(F_s + lr * gamma[leaf_of], y_s), minlength=n_leaves)
        pending &= new > old
        if not pending.any():
            return gamma
        gamma = np.where(pending, gamma * 0.5, gamma)
    return np.where(pending, 0.0, gamma)


def _build_tree(X, y, F, r, h, order, xsorted, rows, params: GbdtParams) -> Tree:
    n = len(X)
    node_of = np.full(n, -1, dtype=np.int64)
    node_of[rows] = 0
    feature, threshold, left, right = [-1], [0.0], [-1], [-1]
    frontier = [0]
    for _depth in range(params.max_depth):
        n_nodes = len(feature)
        counts = np.bincount(node_of[node_of >= 0], minlength=n_nodes)
        splittable = np.zeros(n_nodes + 1, dtype=bool)
        cand = [i for i in frontier if counts[i] >= 2 * params.min_leaf]
        if not cand:
            break
        splittable[cand] = True
        gain, feat, thr = _best_splits(r, order, xsorted, node_of, splittable, params.min_leaf)
        new_frontier = []
        for i in cand:
            if feat[i] < 0:
                continue
            feature[i], threshold[i] = int(feat[i]), float(thr[i])
            left[i], right[i] = len(feature), len(feature) + 1
            for _ in range(2):
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
            new_frontier += [left[i], right[i]]
        if not new_frontier:
            break
        feature_a = np.asarray(feature)
        thr_a = np.asarray(threshold)
        active = node_of >= 0
        active[active] = feature_a[node_of[active]] >= 0
        idx = np.flatnonzero(active)
        nd = node_of[idx]
        go_left = X[idx, feature_a[nd]] <= thr_a[nd]
        node_of[idx] = np.where(go_left, np.asarray(left)[nd], np.asarray(right)[nd])
        frontier = new_frontier

    feature_a = np.asarray(feature, dtype=np.int64)
    leaves = np.flatnonzero(feature_a < 0)
    leaf_index = np.full(len(feature_a), -1, dtype=np.int64)
    leaf_index[leaves] = np.arange(len(leaves))
    in_tree = np.flatnonzero(node_of >= 0)
    gamma = _leaf_values((leaf_index[node_of[in_tree]], in_tree), len(leaves), r, h, F, y,
                         params.learning_rate)
    value = np.zeros(len(feature_a))
    value[leaves] = gamma
    return Tree(feature_a, np.asarray(threshold, dtype=np.float64),
                np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64), value)


def train_gbdt(data: LabeledDataset, params: GbdtParams = GbdtParams()) -> GbdtModel:
    """Fit a boosted ensemble on ``data`` (``y`` is 1 for unknown, 0 for known)."""
    check_training(data)
    X = np.ascontiguousarray(data.X, dtype=np.float64)
    y = data.y.astype(np.float64)
    if not np.isin(y, (0.0, 1.0)).all():
        raise TrainingError("labels must be 0 (known) or 1 (unknown)")
    schema = data.schema

    frac = y.mean()
    base = math.log(frac / (1.0 - frac))
    F = np.full(len(y), base)
    order = [np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])]
    xsorted = [X[o, f] for f, o in enumerate(order)]
    rng = np.random.default_rng(params.seed)
    all_rows = np.arange(len(y))
    trees = []
    history = [float(_logloss(F, y).mean())]
    for _ in range(params.trees):
        p = expit(F)
        r = y - p
        h = p * (1.0 - p)
        if params.subsample < 1.0:
            k = max(1, int(round(params.subsample * len(y))))
            rows = np.sort(rng.choice(len(y), size=k, replace=False))
        else:
            rows = all_rows
        tree = _build_tree(X, y, F, r, h, order, xsorted, rows, params)
        trees.append(tree)
        F = F + params.learning_rate * tree.predict(X)
        history.append(float(_logloss(F, y).mean()))
    return GbdtModel(trees, params.learning_rate, base, schema, params, history)


def predict_gbdt(model: GbdtModel, v: FeatureVector) -> SubflowPrediction:
    check_schema(v, model.schema)
    score = float(model.predict_proba(np.asarray(v.values)[None, :])[0])
    return SubflowPrediction.from_score(score)


def model_to_json(model: GbdtModel) -> str:
    return json.dumps(model.to_dict(), indent=1, sort_keys=True) + "\n"


def save_model(model: GbdtModel, path: str | Path) -> None:
    Path(path).write_text(model_to_json(model), encoding="utf-8")


def load_model(path: str | Path) -> GbdtModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not a model document: {exc}") from None
    return GbdtModel.from_dict(doc)
