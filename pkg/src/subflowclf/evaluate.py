"""Experiment harness: flow-level splits, subflow-prefix subsets and per-class accuracy grids."""

from __future__ import annotations

import io
import logging
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .classify import (
    INCREMENTAL_MAJORITY,
    INCREMENTAL_STRICT,
    MODES,
    UNCERTAIN,
    DecisionPolicy,
    classify_flow,
)
from .features import CORE8, arity, flow_feature_matrix
from .flows import KNOWN, UNKNOWN, Flow
from .likelihood import ConfusionCounts, LikelihoodTable, fit_from_counts
from .models import GaussianNB, GbdtModel, GbdtParams, KNNClassifier, LabeledDataset, train_gbdt

log = logging.getLogger(__name__)

CLASSES = (KNOWN, UNKNOWN)
INCREMENTAL_MODES = (INCREMENTAL_STRICT, INCREMENTAL_MAJORITY)
CSV_HEADER = "mode,subflow_size,fraction,class,accuracy,uncertain_rate,evaluated,excluded,mean_fraction_to_decision"


@dataclass(frozen=True)
class ExperimentConfig:
    subflow_sizes: tuple[int, ...] = (25, 100, 1000)
    fractions: tuple[float, ...] = (0.25, 0.50, 0.75, 1.00)
    certainty: float = 0.95
    certainty_known: float | None = None
    certainty_unknown: float | None = None
    modes: tuple[str, ...] = MODES
    split_fraction: float = 0.8
    calibration_fraction: float = 0.25
    calibrate_on_train: bool = False
    seed: int = 0
    min_subflows: int = 15
    alpha: float = 1.0
    schema: str = CORE8
    gbdt: GbdtParams = field(default_factory=GbdtParams)

    def __post_init__(self) -> None:
        if not all(0 < q <= 1 for q in self.fractions):
            raise ValueError("fractions must lie in (0, 1]")
        if not 0 < self.split_fraction < 1:
            raise ValueError("split_fraction must lie in (0, 1)")
        if not 0 < self.calibration_fraction < 1:
            raise ValueError("calibration_fraction must lie in (0, 1)")
        if any(n < 2 for n in self.subflow_sizes):
            raise ValueError("subflow sizes must be at least 2")
        bad = set(self.modes) - set(MODES)
        if bad:
            raise ValueError(f"unknown modes {sorted(bad)}")

    def policy(self) -> DecisionPolicy:
        return DecisionPolicy.from_certainty(self.certainty, self.certainty_known,
                                             self.certainty_unknown, self.min_subflows)


@dataclass(frozen=True)
class CellResult:
    mode: str
    subflow_size: int
    fraction: float
    cls: str
    accuracy: float | None
    uncertain_rate: float | None
    evaluated: int
    excluded: int
    mean_fraction_to_decision: float | None = None


@dataclass(frozen=True)
class DecisionRecord:
    flow_key: str
    true_label: str
    subflow_size: int
    fraction: float
    mode: str
    verdict: str
    log_ratio_known: float
    subflows_used: int
    subflows_available: int
    flow_subflows: int


@dataclass
class SizeArtifacts:
    subflow_size: int
    model: GbdtModel
    table: LikelihoodTable
    calibration: ConfusionCounts
    test_subflow_accuracy: float


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    cells: list[CellResult]
    decisions: list[DecisionRecord]
    artifacts: dict[int, SizeArtifacts]

    def cell(self, mode: str, subflow_size: int, fraction: float, cls: str) -> CellResult:
        for c in self.cells:
            if (c.mode, c.subflow_size, c.fraction, c.cls) == (mode, subflow_size, fraction, cls):
                return c
        raise KeyError((mode, subflow_size, fraction, cls))

    def to_csv(self) -> str:
        def num(x: float | None) -> str:
            return "" if x is None else f"{x:.6f}"

        lines = [CSV_HEADER]
        for c in self.cells:
            lines.append(f"{c.mode},{c.subflow_size},{c.fraction:g},{c.cls},{num(c.accuracy)},"
                         f"{num(c.uncertain_rate)},{c.evaluated},{c.excluded},"
                         f"{num(c.mean_fraction_to_decision)}")
        return "\n".join(lines) + "\n"

    def decisions_csv(self) -> str:
        lines = ["flow_key,true_label,subflow_size,fraction,mode,verdict,log_ratio_known,"
                 "subflows_used,subflows_available,flow_subflows"]
        for d in self.decisions:
            lines.append(f"{d.flow_key},{d.true_label},{d.subflow_size},{d.fraction:g},{d.mode},"
                         f"{d.verdict},{d.log_ratio_known!r},{d.subflows_used},"
                         f"{d.subflows_available},{d.flow_subflows}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        cfg = self.config
        out = io.StringIO()
        head = f"{'':<22}" + "".join(f"{int(q * 100):>8}%" for q in cfg.fractions)

        def row(name: str, vals: Sequence[float | None]) -> str:
            return f"{name:<22}" + "".join(
                f"{'-':>9}" if v is None else f"{100 * v:>9.1f}" for v in vals)

        for mode in cfg.modes:
            out.write(f"== {mode} (certainty {cfg.certainty:g}) ==\n")
            metrics = [("Accuracies", "accuracy"), ("Uncertain rates", "uncertain_rate")]
            if mode in INCREMENTAL_MODES:
                metrics.append(("Subflows to decision", "mean_fraction_to_decision"))
            for cls in CLASSES:
                for title, attr in metrics:
                    out.write(f"{cls.capitalize()} {title} (% of evaluated flows):\n{head}\n")
                    for n in cfg.subflow_sizes:
                        vals = [getattr(self.cell(mode, n, q, cls), attr) for q in cfg.fractions]
                        out.write(row(f"{n}-Packet Subflows", vals) + "\n")
            out.write("Evaluated / excluded flows:\n")
            for cls in CLASSES:
                for n in cfg.subflow_sizes:
                    cells = [self.cell(mode, n, q, cls) for q in cfg.fractions]
                    out.write(f"  {cls:<8}{n:>5}: " + "  ".join(
                        f"{c.evaluated}/{c.excluded}" for c in cells) + "\n")
            out.write("\n")
        return out.getvalue()


def split_flows(flows: Sequence[Flow], split_fraction: float, seed: int | Sequence[int]
                ) -> tuple[list[Flow], list[Flow]]:
    """Uniform random split at flow granularity; ``round(split_fraction * len)`` flows go to train."""
    if not flows:
        raise ValueError("no flows to split")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(flows))
    k = int(round(split_fraction * len(flows)))
    train_idx = np.sort(perm[:k])
    test_idx = np.sort(perm[k:])
    return [flows[i] for i in train_idx], [flows[i] for i in test_idx]


def subflow_prefix(subflows: Sequence, q: float) -> Sequence:
    """First ceil(q * M) subflows."""
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    k = math.ceil(Fraction(repr(float(q))) * len(subflows))
    return subflows[:k]


def _dataset(flows: Sequence[Flow], mats: dict[int, np.ndarray], schema: str) -> LabeledDataset:
    if not flows:
        return LabeledDataset(np.empty((0, arity(schema))), np.empty(0), schema)
    X = np.concatenate([mats[id(f)] for f in flows])
    y = np.concatenate([np.full(len(mats[id(f)]), int(f.label == UNKNOWN)) for f in flows])
    return LabeledDataset(X, y, schema)


def _check_labels(flows: Sequence[Flow], label: str) -> None:
    bad = [str(f.key) for f in flows if f.label != label]
    if bad:
        raise ValueError(f"flows {bad[:3]} are not labelled {label}")


@dataclass
class SplitFlows:
    gbdt_train: list[Flow]
    calibration: list[Flow]
    test: list[Flow]

    @property
    def train(self) -> list[Flow]:
        return self.gbdt_train + self.calibration


def make_splits(known: Sequence[Flow], unknown: Sequence[Flow], config: ExperimentConfig) -> SplitFlows:
    """Class-stratified train/test split, then the train part is split again
    into GBDT-training and likelihood-calibration flows."""
    gbdt_train, calib, test = [], [], []
    for ci, flows in enumerate((known, unknown)):
        tr, te = split_flows(flows, config.split_fraction, (config.seed, ci))
        if config.calibrate_on_train:
            g, c = tr, tr
        else:
            g, c = split_flows(tr, 1.0 - config.calibration_fraction, (config.seed, ci, 1))
        gbdt_train += g
        calib += c
        test += te
    return SplitFlows(gbdt_train, calib, test)


def _feature_cache(flows: Sequence[Flow], n: int, schema: str) -> dict[int, np.ndarray]:
    return {id(f): flow_feature_matrix(f, n, schema) for f in flows}


def run_experiment(config: ExperimentConfig, known: Sequence[Flow], unknown: Sequence[Flow]
                   ) -> ExperimentReport:
    if not known or not unknown:
        raise ValueError("both known and unknown flows are required")
    _check_labels(known, KNOWN)
    _check_labels(unknown, UNKNOWN)
    splits = make_splits(known, unknown, config)
    if config.calibrate_on_train:
        calib_flows = splits.gbdt_train
        train_flows = splits.gbdt_train
    else:
        calib_flows = splits.calibration
        train_flows = splits.gbdt_train
    base_policy = config.policy()

    cells: list[CellResult] = []
    decisions: list[DecisionRecord] = []
    artifacts: dict[int, SizeArtifacts] = {}
    all_flows = list({id(f): f for f in [*train_flows, *calib_flows, *splits.test]}.values())
    for n in config.subflow_sizes:
        t0 = time.perf_counter()
        mats = _feature_cache(all_flows, n, config.schema)
        train = _dataset(train_flows, mats, config.schema)
        model = train_gbdt(train, config.gbdt)
        cal = _dataset(calib_flows, mats, config.schema)
        cal_pred = model.predict_unknown(cal.X) if len(cal) else np.zeros(0, dtype=bool)
        counts = ConfusionCounts(
            n_kk=int(np.sum(~cal_pred & (cal.y == 0))), n_ku=int(np.sum(~cal_pred & (cal.y == 1))),
            n_uk=int(np.sum(cal_pred & (cal.y == 0))), n_uu=int(np.sum(cal_pred & (cal.y == 1))))
        table = fit_from_counts(counts, config.alpha)

        test = _dataset(splits.test, mats, config.schema)
        test_pred = model.predict_unknown(test.X) if len(test) else np.zeros(0, dtype=bool)
        acc = float(np.mean(test_pred == (test.y == 1))) if len(test) else float("nan")
        artifacts[n] = SizeArtifacts(n, model, table, counts, acc)
        log.info("n=%d: %d train / %d calibration / %d test subflows, test subflow accuracy %.4f, %s",
                 n, len(train), len(cal), len(test), acc, table)

        pk_of = {False: (table.p_kk, table.p_ku), True: (table.p_uk, table.p_uu)}
        seqs = []
        start = 0
        for f in splits.test:
            m = len(mats[id(f)])
            seqs.append([pk_of[bool(b)] for b in test_pred[start:start + m]])
            start += m

        for mode in config.modes:
            policy = base_policy.with_mode(mode)
            for q in config.fractions:
                tally = {c: {"eval": 0, "excl": 0, "ok": 0, "unc": 0, "frac": 0.0} for c in CLASSES}
                for f, seq in zip(splits.test, seqs):
                    t = tally[f.label]
                    prefix = subflow_prefix(seq, q)
                    if len(prefix) < config.min_subflows:
                        t["excl"] += 1
                        continue
                    d = classify_flow(prefix, policy)
                    t["eval"] += 1
                    t["ok"] += d.verdict == f.label
                    t["unc"] += d.verdict == UNCERTAIN
                    t["frac"] += d.subflows_used / d.subflows_available
                    decisions.append(DecisionRecord(str(f.key), f.label, n, q, mode, d.verdict,
                                                    d.log_ratio_known, d.subflows_used,
                                                    d.subflows_available, len(seq)))
                for c in CLASSES:
                    t = tally[c]
                    ev = t["eval"]
                    cells.append(CellResult(
                        mode, n, q, c,
                        accuracy=t["ok"] / ev if ev else None,
                        uncertain_rate=t["unc"] / ev if ev else None,
                        evaluated=ev, excluded=t["excl"],
                        mean_fraction_to_decision=(t["frac"] / ev if ev and mode in INCREMENTAL_MODES
                                                   else None)))
        log.info("n=%d done in %.1fs", n, time.perf_counter() - t0)
    return ExperimentReport(config, cells, decisions, artifacts)


@dataclass(frozen=True)
class ClassifierScores:
    subflow_size: int
    gbdt: float
    naive_bayes: float
    knn: float
    test_subflows: int


def compare_subflow_classifiers(config: ExperimentConfig, known: Sequence[Flow],
                                unknown: Sequence[Flow], k: int = 3) -> list[ClassifierScores]:
    """Held-out subflow accuracy of GBDT, Gaussian NB and KNN trained on the
    same training flows (GBDT-train plus calibration) for each subflow size."""
    splits = make_splits(known, unknown, config)
    out = []
    for n in config.subflow_sizes:
        mats = _feature_cache([*splits.train, *splits.test], n, config.schema)
        train = _dataset(splits.train, mats, config.schema)
        test = _dataset(splits.test, mats, config.schema)
        truth = test.y == 1
        g = train_gbdt(train, config.gbdt).predict_unknown(test.X)
        nb = GaussianNB().fit(train).predict_proba(test.X) >= 0.5
        kn = KNNClassifier(k).fit(train).predict_proba(test.X) >= 0.5
        out.append(ClassifierScores(n, float(np.mean(g == truth)), float(np.mean(nb == truth)),
                                    float(np.mean(kn == truth)), len(test)))
    return out
