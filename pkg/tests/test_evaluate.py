from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, strategies as st

from subflowclf.classify import INCREMENTAL_MAJORITY, MAJORITY, STRICT, UNCERTAIN
from subflowclf.evaluate import (
    CSV_HEADER, ExperimentConfig, make_splits, run_experiment, split_flows, subflow_prefix,
)
from subflowclf.flows import Flow, FlowKey
from subflowclf.models import GbdtParams
from subflowclf.synth import ClassProfile, generate

SMALL_GBDT = GbdtParams(trees=15)


def dummy_flows(n, label="known"):
    return [Flow(FlowKey((f"10.0.0.{i + 1}", 1000), ("10.0.1.1", 80)), [0, 1], [60, 60], [0, 0],
                 [0, 0], [True, True], label) for i in range(n)]


def split_labels(flows):
    known = [f for f in flows if f.label == "known"]
    return known, [f for f in flows if f.label == "unknown"]


@pytest.fixture(scope="module")
def separable():
    profiles = [
        ClassProfile("known", 1400, 40, 2e-4, 2e-4, flows=30, packets_per_flow=(300, 900)),
        ClassProfile("unknown", 600, 40, 2e-3, 2e-3, ack_prob=0.8, flows=30,
                     packets_per_flow=(300, 900)),
    ]
    return split_labels(generate(profiles, seed=3))


@pytest.fixture(scope="module")
def separable_report(separable):
    cfg = ExperimentConfig(subflow_sizes=(10, 25), fractions=(0.25, 0.5, 1.0), gbdt=SMALL_GBDT, seed=2)
    return run_experiment(cfg, *separable)


def test_split_ten_flows():
    flows = dummy_flows(10)
    tr, te = split_flows(flows, 0.8, 0)
    assert (len(tr), len(te)) == (8, 2)
    tr2, te2 = split_flows(flows, 0.8, 0)
    assert [id(f) for f in tr] == [id(f) for f in tr2] and [id(f) for f in te] == [id(f) for f in te2]


@given(st.integers(1, 60), st.floats(0.05, 0.95), st.integers(0, 2**32 - 1))
def test_split_disjoint_and_exhaustive(n, frac, seed):
    flows = dummy_flows(n)
    tr, te = split_flows(flows, frac, seed)
    ids = [id(f) for f in tr + te]
    assert len(set(ids)) == len(ids) == n
    assert len(tr) == round(frac * n)


def test_split_rejects_empty():
    with pytest.raises(ValueError):
        split_flows([], 0.8, 0)


def test_prefix_rule():
    assert subflow_prefix(list(range(100)), 0.25) == list(range(25))
    assert subflow_prefix(list(range(7)), 0.5) == [0, 1, 2, 3]
    assert subflow_prefix(list(range(7)), 1.0) == list(range(7))
    assert subflow_prefix(list(range(100)), 0.29) == list(range(29))
    with pytest.raises(ValueError):
        subflow_prefix([1], 0)


@given(st.integers(0, 500), st.floats(0.001, 1.0))
def test_prefix_length_property(m, q):
    k = len(subflow_prefix(list(range(m)), q))
    assert k >= q * m - 1e-9 and (k == 0 or k - 1 < q * m)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(fractions=(0.0,))
    with pytest.raises(ValueError):
        ExperimentConfig(split_fraction=1.0)
    with pytest.raises(ValueError):
        ExperimentConfig(modes=("fast",))


def test_splits_are_stratified_and_disjoint(separable):
    cfg = ExperimentConfig(seed=4)
    s = make_splits(*separable, cfg)
    keys = lambda fl: {str(f.key) for f in fl}
    assert not keys(s.test) & keys(s.train)
    assert not keys(s.gbdt_train) & keys(s.calibration)
    assert len(s.test) + len(s.train) == 60
    for label in ("known", "unknown"):
        assert sum(f.label == label for f in s.test) == 6


def test_separable_cells_perfect(separable_report):
    assert sum(c.evaluated for c in separable_report.cells) > 100
    for c in separable_report.cells:
        if c.accuracy is not None:
            assert c.accuracy == 1.0 and c.uncertain_rate == 0.0


def test_cell_counts_cover_test_flows(separable_report):
    for c in separable_report.cells:
        assert c.evaluated + c.excluded == 6


def test_report_matches_decision_recount(separable_report):
    tally = defaultdict(lambda: [0, 0, 0, 0.0])
    for d in separable_report.decisions:
        t = tally[d.mode, d.subflow_size, d.fraction, d.true_label]
        t[0] += 1
        t[1] += d.verdict == d.true_label
        t[2] += d.verdict == UNCERTAIN
        t[3] += d.subflows_used / d.subflows_available
    for c in separable_report.cells:
        ev, ok, unc, frac = tally.get((c.mode, c.subflow_size, c.fraction, c.cls), [0, 0, 0, 0.0])
        assert c.evaluated == ev
        if ev == 0:
            assert c.accuracy is None
            continue
        assert c.accuracy == ok / ev and c.uncertain_rate == unc / ev
        if c.mode.startswith("incremental"):
            assert c.mean_fraction_to_decision == pytest.approx(frac / ev, rel=1e-12)
        else:
            assert c.mean_fraction_to_decision is None


def test_prefix_lengths_in_decisions(separable_report):
    for d in separable_report.decisions:
        assert d.subflows_available == len(subflow_prefix(range(d.flow_subflows), d.fraction))
        assert d.subflows_available >= 15


def test_csv_layout(separable_report):
    lines = separable_report.to_csv().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 1 + len(separable_report.cells)
    first = lines[1].split(",")
    assert first[:4] == ["strict", "10", "0.25", "known"] and first[8] == ""
    text = separable_report.to_text()
    assert "== strict (certainty 0.95) ==" in text and "10-Packet Subflows" in text


def test_absent_cells(separable):
    cfg = ExperimentConfig(subflow_sizes=(25,), fractions=(0.25,), modes=(STRICT,),
                           min_subflows=10**6, gbdt=GbdtParams(trees=3))
    report = run_experiment(cfg, *separable)
    for c in report.cells:
        assert c.accuracy is None and c.uncertain_rate is None and c.evaluated == 0
    assert "strict,25,0.25,known,,,0,6," in report.to_csv()
    assert "-" in report.to_text()


def test_experiment_requires_both_classes(separable):
    with pytest.raises(ValueError):
        run_experiment(ExperimentConfig(), separable[0], [])
    with pytest.raises(ValueError):
        run_experiment(ExperimentConfig(), separable[0], separable[0])


def test_no_signal_classes():
    p = ClassProfile("known", 900, 400, 1e-3, 2e-3, flows=40, packets_per_flow=(400, 800))
    known = generate([p], seed=1)
    unknown = [Flow(f.key, f.timestamps_us, f.sizes, f.tcp_flags, f.windows, f.forward, "unknown")
               for f in generate([p], seed=2)]
    for i, f in enumerate(unknown):
        f.key = FlowKey(("10.9.0.1", 2000 + i), ("172.16.9.1", 443))
    cfg = ExperimentConfig(subflow_sizes=(25,), fractions=(1.0,), modes=(STRICT, MAJORITY),
                           gbdt=SMALL_GBDT, seed=1)
    report = run_experiment(cfg, known, unknown)
    strict_unc = np.mean([report.cell(STRICT, 25, 1.0, c).uncertain_rate for c in ("known", "unknown")])
    maj_acc = np.mean([report.cell(MAJORITY, 25, 1.0, c).accuracy for c in ("known", "unknown")])
    assert strict_unc >= 0.5
    assert 0.3 <= maj_acc <= 0.7


def test_majority_keeps_strict_correct_verdicts(separable_report):
    by_flow = {}
    for d in separable_report.decisions:
        by_flow[d.mode, d.subflow_size, d.fraction, d.flow_key] = d.verdict
    for (mode, n, q, key), verdict in by_flow.items():
        if mode == STRICT and verdict != UNCERTAIN:
            assert by_flow[MAJORITY, n, q, key] == verdict
        if mode == INCREMENTAL_MAJORITY:
            assert verdict != UNCERTAIN
