"""Flow assembly by 5-tuple with idle-timeout splitting, and N-packet subflow segmentation."""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .packet_io import TCP, PacketRecord

KNOWN = "known"
UNKNOWN = "unknown"
UNLABELED = "unlabeled"
LABELS = (KNOWN, UNKNOWN, UNLABELED)

DEFAULT_IDLE_TIMEOUT_US = 60_000_000


class FlowOrderError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class FlowKey:
    endpoint_a: tuple[str, int]
    endpoint_b: tuple[str, int]
    protocol: int = TCP

    def __str__(self) -> str:
        (ia, pa), (ib, pb) = self.endpoint_a, self.endpoint_b
        return f"{ia}:{pa}-{ib}:{pb}-{self.protocol}"

    @classmethod
    def parse(cls, text: str) -> "FlowKey":
        a, b, proto = text.rsplit("-", 2)
        ia, pa = a.rsplit(":", 1)
        ib, pb = b.rsplit(":", 1)
        return cls((str(ipaddress.IPv4Address(ia)), int(pa)),
                   (str(ipaddress.IPv4Address(ib)), int(pb)), int(proto))


@lru_cache(maxsize=65536)
def _ip_int(ip: str) -> int:
    return int(ipaddress.IPv4Address(ip))


def _endpoint_order(ep: tuple[str, int]) -> tuple[int, int]:
    return _ip_int(ep[0]), ep[1]


def flow_key_of(pkt: PacketRecord, bidirectional: bool = True) -> FlowKey:
    if pkt.protocol != TCP:
        raise ValueError(f"non-TCP packet (protocol {pkt.protocol})")
    src = (pkt.src_ip, pkt.src_port)
    dst = (pkt.dst_ip, pkt.dst_port)
    if bidirectional and _endpoint_order(dst) < _endpoint_order(src):
        src, dst = dst, src
    return FlowKey(src, dst, pkt.protocol)


@dataclass(eq=False)
class Flow:
    """Packets of one flow, stored column-wise.

    ``forward`` is True for packets travelling endpoint_a -> endpoint_b.
    """

    key: FlowKey
    timestamps_us: np.ndarray
    sizes: np.ndarray
    tcp_flags: np.ndarray
    windows: np.ndarray
    forward: np.ndarray
    label: str = UNLABELED

    def __post_init__(self) -> None:
        self.timestamps_us = np.asarray(self.timestamps_us, dtype=np.int64)
        self.sizes = np.asarray(self.sizes, dtype=np.int64)
        self.tcp_flags = np.asarray(self.tcp_flags, dtype=np.uint8)
        self.windows = np.asarray(self.windows, dtype=np.int64)
        self.forward = np.asarray(self.forward, dtype=bool)
        n = len(self.timestamps_us)
        if not all(len(a) == n for a in (self.sizes, self.tcp_flags, self.windows, self.forward)):
            raise ValueError("flow columns differ in length")
        if self.label not in LABELS:
            raise ValueError(f"bad label {self.label!r}")

    def __len__(self) -> int:
        return len(self.timestamps_us)

    @classmethod
    def from_records(cls, key: FlowKey, records: Sequence[PacketRecord], label: str = UNLABELED) -> "Flow":
        fwd = [(r.src_ip, r.src_port) == key.endpoint_a for r in records]
        return cls(key,
                   [r.timestamp_us for r in records],
                   [r.size_bytes for r in records],
                   [r.tcp_flags for r in records],
                   [r.recv_window_bytes for r in records],
                   fwd, label)

    @property
    def packets(self) -> list[PacketRecord]:
        (ia, pa), (ib, pb) = self.key.endpoint_a, self.key.endpoint_b
        out = []
        for ts, size, fl, win, fwd in zip(self.timestamps_us.tolist(), self.sizes.tolist(),
                                          self.tcp_flags.tolist(), self.windows.tolist(),
                                          self.forward.tolist()):
            if fwd:
                out.append(PacketRecord(ts, ia, ib, pa, pb, self.key.protocol, size, fl, win))
            else:
                out.append(PacketRecord(ts, ib, ia, pb, pa, self.key.protocol, size, fl, win))
        return out

    def slice(self, start: int, stop: int) -> "Flow":
        return Flow(self.key, self.timestamps_us[start:stop], self.sizes[start:stop],
                    self.tcp_flags[start:stop], self.windows[start:stop],
                    self.forward[start:stop], self.label)


@dataclass
class Subflow:
    flow_key: FlowKey
    index: int
    timestamps_us: np.ndarray
    sizes: np.ndarray
    tcp_flags: np.ndarray
    windows: np.ndarray
    label: str = UNLABELED

    def __len__(self) -> int:
        return len(self.timestamps_us)

    @classmethod
    def from_records(cls, records: Sequence[PacketRecord], index: int = 0,
                     key: FlowKey | None = None, label: str = UNLABELED) -> "Subflow":
        if key is None:
            key = flow_key_of(records[0])
        return cls(key, index,
                   np.array([r.timestamp_us for r in records], dtype=np.int64),
                   np.array([r.size_bytes for r in records], dtype=np.int64),
                   np.array([r.tcp_flags for r in records], dtype=np.uint8),
                   np.array([r.recv_window_bytes for r in records], dtype=np.int64),
                   label)


def assemble_flows(records: Iterable[PacketRecord], bidirectional: bool = True,
                   idle_timeout_us: int = DEFAULT_IDLE_TIMEOUT_US,
                   reorder_slack_us: int = 0) -> list[Flow]:
    """Group records into flows; a gap >= ``idle_timeout_us`` between
    consecutive same-key packets closes the flow and opens a new one.

    Input must be time-ordered up to ``reorder_slack_us``. Flows are returned
    in order of their first packet.
    """
    open_flows: dict[FlowKey, list[PacketRecord]] = {}
    finished: list[list[PacketRecord]] = []
    last_ts = None
    for r in records:
        if last_ts is not None and r.timestamp_us < last_ts - reorder_slack_us:
            raise FlowOrderError(f"out-of-order packet at timestamp {r.timestamp_us} "
                                 f"(previous {last_ts})")
        last_ts = r.timestamp_us if last_ts is None else max(last_ts, r.timestamp_us)
        key = flow_key_of(r, bidirectional)
        cur = open_flows.get(key)
        if cur is not None and r.timestamp_us - cur[-1].timestamp_us >= idle_timeout_us:
            finished.append(cur)
            cur = None
        if cur is None:
            cur = open_flows[key] = []
        cur.append(r)
    finished.extend(open_flows.values())
    finished.sort(key=lambda pk: pk[0].timestamp_us)
    out = []
    for pk in finished:
        if reorder_slack_us:
            pk = sorted(pk, key=lambda r: r.timestamp_us)
        out.append(Flow.from_records(flow_key_of(pk[0], bidirectional), pk))
    return out


@dataclass
class Segmentation:
    subflows: list[Subflow]
    dropped: int


def n_subflows(flow: Flow, n: int) -> int:
    return len(flow) // n


def segment_subflows(flow: Flow, n: int) -> Segmentation:
    if n < 2:
        raise ValueError("subflow size must be at least 2")
    m = len(flow) // n
    subs = []
    for i in range(m):
        s = slice(i * n, (i + 1) * n)
        subs.append(Subflow(flow.key, i, flow.timestamps_us[s], flow.sizes[s],
                            flow.tcp_flags[s], flow.windows[s], flow.label))
    return Segmentation(subs, len(flow) - m * n)
