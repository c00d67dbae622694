import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import KEY, make_subflow, naive_ext14, rel_close
from subflowclf.features import (
    CORE8, EXT14, FEATURE_NAMES, ExtractStats, FeatureVector, cdf_points, emit_cdf,
    extract, extract_core8, extract_ext14, flow_feature_matrix, format_cdf,
)
from subflowclf.flows import Flow, segment_subflows


def test_core8_three_packet_example():
    v = extract_core8(make_subflow([0, 10, 30], [100, 200, 300]))
    assert v.schema == CORE8
    np.testing.assert_allclose(v.values[:4], [2.0e-5, 1.0e-5, 1.5e-5, 5.0e-6], rtol=1e-12)
    np.testing.assert_allclose(v.values[4:], [300, 100, 200, 81.64965809277261], rtol=1e-12)


def test_core8_zero_variance_exact():
    v = extract_core8(make_subflow([i * 1000 for i in range(25)], [1500] * 25))
    iat_max, iat_min, iat_mean, iat_std, _, _, _, size_std = v.values
    assert size_std == 0.0 and iat_std == 0.0
    assert iat_max == iat_min == iat_mean == 1.0e-3


def test_ext14_three_packet_example():
    stats = ExtractStats()
    v = extract_ext14(make_subflow([0, 10, 30], [100, 200, 300],
                                   windows=[65535, 65535, 32768]), stats)
    d = dict(zip(FEATURE_NAMES[EXT14], v.values))
    assert d["total_bytes"] == 600
    assert d["ack_count"] == 3
    assert d["rwnd_min"] == 32768 and d["rwnd_max"] == 65535
    assert d["pkt_throughput"] == pytest.approx(100_000, rel=1e-12)
    assert d["byte_throughput"] == pytest.approx(2.0e7, rel=1e-12)
    assert stats.degenerate == 0


def test_ext14_no_acks():
    v = extract_ext14(make_subflow([0, 5, 9], [60, 60, 60], flags=[0x02, 0x02, 0x01]))
    assert v.values[3] == 0


def test_ext14_zero_duration_is_degenerate():
    stats = ExtractStats()
    v = extract_ext14(make_subflow([7, 7, 7], [60, 70, 80]), stats)
    assert v.values[12] == 0 and v.values[13] == 0
    assert stats.degenerate == 1
    assert np.isfinite(v.values).all()


def test_shared_statistics_agree():
    sub = make_subflow([0, 13, 40, 41, 90], [60, 1500, 800, 52, 1400])
    c = dict(zip(FEATURE_NAMES[CORE8], extract(sub, CORE8).values))
    e = dict(zip(FEATURE_NAMES[EXT14], extract(sub, EXT14).values))
    for name, value in c.items():
        assert e[name] == value


def test_vector_length_checked():
    with pytest.raises(ValueError):
        FeatureVector(np.zeros(7), CORE8)
    with pytest.raises(ValueError):
        FeatureVector(np.zeros(8), "core9")


def test_too_short_subflow():
    with pytest.raises(ValueError):
        extract_core8(make_subflow([0], [100]))


subflows = st.integers(2, 40).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 10**7), min_size=n - 1, max_size=n - 1),
    st.lists(st.integers(40, 65535), min_size=n, max_size=n),
    st.lists(st.integers(0, 255), min_size=n, max_size=n),
    st.lists(st.integers(0, 65535), min_size=n, max_size=n),
    st.integers(0, 2**50),
))


def _build(gaps, sizes, flags, windows, start):
    ts = np.concatenate([[start], start + np.cumsum(gaps)]).tolist()
    return ts, make_subflow(ts, sizes, flags, windows)


@given(subflows)
def test_order_statistics(case):
    gaps, sizes, flags, windows, start = case
    _, sub = _build(gaps, sizes, flags, windows, start)
    imax, imin, imean, istd, smax, smin, smean, sstd = extract_core8(sub).values
    assert imin <= imean * (1 + 1e-12) and imean <= imax * (1 + 1e-12)
    assert smin <= smean <= smax
    assert istd >= 0 and sstd >= 0


@given(subflows, st.integers(-2**40, 2**40))
def test_timestamp_shift_invariance(case, shift):
    gaps, sizes, flags, windows, start = case
    start = max(start, 2**40)
    _, a = _build(gaps, sizes, flags, windows, start)
    _, b = _build(gaps, sizes, flags, windows, start + shift)
    assert extract(a, EXT14).values.tolist() == extract(b, EXT14).values.tolist()


@given(subflows)
def test_matches_naive_statistics(case):
    gaps, sizes, flags, windows, start = case
    ts, sub = _build(gaps, sizes, flags, windows, start)
    got = extract(sub, EXT14).values.tolist()
    want = naive_ext14(ts, sizes, flags, windows)
    # constant sequences leave sub-ulp residue in the naive std; integer inputs
    # make any genuinely nonzero std far larger than 1e-9
    for name, g, w in zip(FEATURE_NAMES[EXT14], got, want):
        if name.endswith("_std") and abs(w) < 1e-9:
            assert g == 0.0
            continue
        assert rel_close([g], [w], 1e-9), (name, g, w)


def test_flow_matrix_matches_per_subflow_extraction():
    rng = np.random.default_rng(1)
    n = 253
    flow = Flow(KEY, np.cumsum(rng.integers(1, 5000, n)), rng.integers(40, 1500, n),
                rng.integers(0, 256, n), rng.integers(0, 65535, n), rng.random(n) < 0.5)
    for schema in (CORE8, EXT14):
        m = flow_feature_matrix(flow, 25, schema)
        rows = [extract(s, schema).values for s in segment_subflows(flow, 25).subflows]
        np.testing.assert_array_equal(m, np.stack(rows))
        assert m.shape == (10, len(FEATURE_NAMES[schema]))
    assert flow_feature_matrix(flow, 300).shape == (0, 8)


def test_features_ignore_addresses():
    a = make_subflow([0, 10, 25, 70], [60, 900, 1500, 40])
    b = make_subflow([0, 10, 25, 70], [60, 900, 1500, 40])
    b.flow_key = type(KEY)(("192.168.7.7", 9), ("8.8.4.4", 53), 6)
    assert extract(a, EXT14).values.tolist() == extract(b, EXT14).values.tolist()


def test_cdf_examples():
    assert cdf_points([1, 2, 2, 4]) == [(1, 0.25), (2, 0.75), (4, 1.0)]
    assert cdf_points([3.5]) == [(3.5, 1.0)]
    assert cdf_points([]) == []


def test_emit_cdf_per_class():
    vecs = [FeatureVector(np.full(8, x), CORE8, label=lab)
            for x, lab in [(1, "known"), (2, "known"), (2, "known"), (4, "known"), (9, "unknown")]]
    cdf = emit_cdf(vecs, 6)
    assert cdf["known"] == [(1.0, 0.25), (2.0, 0.75), (4.0, 1.0)]
    assert cdf["unknown"] == [(9.0, 1.0)]
    assert emit_cdf(vecs[:4], 0)["unknown"] == []
    assert format_cdf({"known": [(1.0, 1.0)]}) == "known 1.0 1.0\n"
    with pytest.raises(IndexError):
        emit_cdf(vecs, 8)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60))
def test_cdf_monotone(values):
    pts = cdf_points(values)
    xs = [p[0] for p in pts]
    fs = [p[1] for p in pts]
    assert xs == sorted(set(xs)) and len(xs) == len(set(values))
    assert all(0 < f <= 1 for f in fs) and fs[-1] == 1.0
    assert all(a < b for a, b in zip(fs, fs[1:]))
