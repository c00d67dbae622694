"""Per-subflow statistical features and per-class CDF data."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .flows import KNOWN, UNKNOWN, Flow, FlowKey, Subflow
from .packet_io import ACK

CORE8 = "core8"
EXT14 = "ext14"

FEATURE_NAMES = {
    CORE8: (
        "iat_max", "iat_min", "iat_mean", "iat_std",
        "size_max", "size_min", "size_mean", "size_std",
    ),
    EXT14: (
        "total_bytes", "size_max", "size_min", "ack_count", "rwnd_min", "rwnd_max",
        "size_std", "size_mean", "iat_mean", "iat_std", "iat_max", "iat_min",
        "pkt_throughput", "byte_throughput",
    ),
}

_US = 1e6


def arity(schema: str) -> int:
    try:
        return len(FEATURE_NAMES[schema])
    except KeyError:
        raise ValueError(f"unknown feature schema {schema!r}") from None


@dataclass
class FeatureVector:
    values: np.ndarray
    schema: str
    subflow_ref: tuple[FlowKey, int] | None = None
    label: str = "unlabeled"

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (arity(self.schema),):
            raise ValueError(f"{self.schema} expects {arity(self.schema)} values, got {self.values.shape}")


@dataclass
class ExtractStats:
    degenerate: int = 0


def _matrix(ts: np.ndarray, sizes: np.ndarray, flags: np.ndarray, windows: np.ndarray,
            schema: str, stats: ExtractStats | None) -> np.ndarray:
    # rows are subflows; columns are packets within the subflow
    n = ts.shape[1]
    if n < 2:
        raise ValueError("subflows need at least 2 packets")
    gaps = np.diff(ts, axis=1)
    if np.any(gaps < 0):
        raise ValueError("timestamps within a subflow must be non-decreasing")
    iat_mean_us = gaps.sum(axis=1) / (n - 1)
    iat_std_us = np.sqrt(np.mean((gaps - iat_mean_us[:, None]) ** 2, axis=1))
    iat_max = gaps.max(axis=1) / _US
    iat_min = gaps.min(axis=1) / _US
    iat_mean = iat_mean_us / _US
    iat_std = iat_std_us / _US

    sz = sizes.astype(np.float64)
    total = sizes.sum(axis=1).astype(np.float64)
    size_mean = total / n
    size_std = np.sqrt(np.mean((sz - size_mean[:, None]) ** 2, axis=1))
    size_max = sz.max(axis=1)
    size_min = sz.min(axis=1)

    if schema == CORE8:
        cols = (iat_max, iat_min, iat_mean, iat_std, size_max, size_min, size_mean, size_std)
    elif schema == EXT14:
        span_us = (ts[:, -1] - ts[:, 0]).astype(np.float64)
        ok = span_us > 0
        if stats is not None:
            stats.degenerate += int(np.count_nonzero(~ok))
        span_s = np.where(ok, span_us, 1.0) / _US
        pkt_tput = np.where(ok, n / span_s, 0.0)
        byte_tput = np.where(ok, total / span_s, 0.0)
        acks = np.count_nonzero(flags & ACK, axis=1).astype(np.float64)
        win = windows.astype(np.float64)
        cols = (total, size_max, size_min, acks, win.min(axis=1), win.max(axis=1),
                size_std, size_mean, iat_mean, iat_std, iat_max, iat_min, pkt_tput, byte_tput)
    else:
        raise ValueError(f"unknown feature schema {schema!r}")
    return np.column_stack(cols)


def flow_feature_matrix(flow: Flow, n: int, schema: str = CORE8,
                        stats: ExtractStats | None = None) -> np.ndarray:
    """Feature rows for every complete ``n``-packet subflow of ``flow``, in order."""
    m = len(flow) // n
    if m == 0:
        return np.empty((0, arity(schema)))
    k = m * n
    return _matrix(flow.timestamps_us[:k].reshape(m, n), flow.sizes[:k].reshape(m, n),
                   flow.tcp_flags[:k].reshape(m, n), flow.windows[:k].reshape(m, n),
                   schema, stats)


def _extract(sub: Subflow, schema: str, stats: ExtractStats | None) -> FeatureVector:
    row = _matrix(sub.timestamps_us[None, :], sub.sizes[None, :], sub.tcp_flags[None, :],
                  sub.windows[None, :], schema, stats)[0]
    return FeatureVector(row, schema, (sub.flow_key, sub.index), sub.label)


def extract_core8(sub: Subflow) -> FeatureVector:
    return _extract(sub, CORE8, None)


def extract_ext14(sub: Subflow, stats: ExtractStats | None = None) -> FeatureVector:
    """14 statistics; throughputs are 0 for a zero-duration subflow."""
    return _extract(sub, EXT14, stats)


def extract(sub: Subflow, schema: str = CORE8, stats: ExtractStats | None = None) -> FeatureVector:
    return _extract(sub, schema, stats)


def emit_cdf(vectors: Iterable[FeatureVector], feature_index: int,
             classes: Sequence[str] = (KNOWN, UNKNOWN)) -> dict[str, list[tuple[float, float]]]:
    """Empirical CDF of one feature per class as (value, cumulative fraction) points."""
    by_class: dict[str, list[float]] = {c: [] for c in classes}
    for v in vectors:
        if not 0 <= feature_index < len(v.values):
            raise IndexError(f"feature index {feature_index} out of range for {v.schema}")
        by_class.setdefault(v.label, []).append(float(v.values[feature_index]))
    return {c: cdf_points(vals) for c, vals in by_class.items()}


def cdf_points(values: Sequence[float]) -> list[tuple[float, float]]:
    if len(values) == 0:
        return []
    uniq, counts = np.unique(np.asarray(values, dtype=np.float64), return_counts=True)
    cum = np.cumsum(counts)
    total = cum[-1]
    return [(float(u), float(c / total)) for u, c in zip(uniq, cum)]


def format_cdf(cdf: dict[str, list[tuple[float, float]]]) -> str:
    return "".join(f"{cls} {v!r} {f!r}\n" for cls, pts in cdf.items() for v, f in pts)


def format_feature_row(label: str, key: FlowKey, index: int, values: Iterable[float]) -> str:
    return ",".join([label, str(key), str(index)] + [repr(float(x)) for x in values])
