"""Labelled synthetic TCP traces with controllable class separation."""

from __future__ import annotations

import ipaddress
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .flows import DEFAULT_IDLE_TIMEOUT_US, KNOWN, UNKNOWN, Flow, FlowKey
from .packet_io import ACK, RECORD_HEADER, TCP

MIN_SIZE = 40
MAX_SIZE = 65535
EPOCH_US = 1_600_000_000 * 1_000_000
START_SPREAD_US = 600 * 1_000_000

_SRC_BASE = int(ipaddress.IPv4Address("10.0.0.0"))
_DST_BASE = int(ipaddress.IPv4Address("172.16.0.0"))


@dataclass(frozen=True)
class ClassProfile:
    """Packet-level distribution for one group of flows.

    Inter-arrival parameters are the mean and standard deviation (seconds) of
    the log-normal gap distribution itself. ``flow_jitter`` is the log-scale
    standard deviation of a per-flow multiplier on ``size_mean`` and
    ``iat_mean``.
    """

    label: str
    size_mean: float
    size_std: float
    iat_mean: float
    iat_std: float
    ack_prob: float = 1.0
    rwnd_range: tuple[int, int] = (65535, 65535)
    flows: int = 10
    packets_per_flow: tuple[int, int] = (50, 100)
    flow_jitter: float = 0.0
    dst_port: int = 443

    def validate(self) -> None:
        if self.label not in (KNOWN, UNKNOWN):
            raise ValueError(f"profile label must be known/unknown, got {self.label!r}")
        if self.size_mean == 0 and self.size_std == 0 or self.iat_mean == 0 and self.iat_std == 0:
            raise ValueError("degenerate profile: zero mean and zero spread")
        if self.size_mean <= 0 or self.iat_mean <= 0 or self.size_std < 0 or self.iat_std < 0:
            raise ValueError("profile scales must be positive")
        lo, hi = self.packets_per_flow
        if lo < 2 or hi < lo:
            raise ValueError(f"bad packets_per_flow {self.packets_per_flow}")
        if self.flows < 0 or not 0 <= self.ack_prob <= 1 or self.flow_jitter < 0:
            raise ValueError("bad flow count, ack probability or jitter")
        wlo, whi = self.rwnd_range
        if not 0 <= wlo <= whi <= 0xFFFF:
            raise ValueError(f"bad rwnd_range {self.rwnd_range}")


def _lognormal_params(mean: float, std: float) -> tuple[float, float]:
    sigma2 = math.log1p((std / mean) ** 2)
    return math.log(mean) - sigma2 / 2, math.sqrt(sigma2)


def _one_flow(p: ClassProfile, rng: np.random.Generator, gid: int, max_gap_us: int) -> Flow:
    n = int(rng.integers(p.packets_per_flow[0], p.packets_per_flow[1] + 1))
    jit_s, jit_t = np.exp(rng.normal(0.0, p.flow_jitter, size=2)) if p.flow_jitter else (1.0, 1.0)
    sizes = np.clip(np.rint(rng.normal(p.size_mean * jit_s, p.size_std, size=n)), MIN_SIZE, MAX_SIZE)
    mu, sigma = _lognormal_params(p.iat_mean * jit_t, p.iat_std)
    gaps = np.clip(np.rint(rng.lognormal(mu, sigma, size=n - 1) * 1e6), 1, max_gap_us)
    start = EPOCH_US + int(rng.integers(0, START_SPREAD_US))
    ts = start + np.concatenate([[0], np.cumsum(gaps, dtype=np.int64)])
    flags = np.where(rng.random(n) < p.ack_prob, ACK, 0)
    windows = rng.integers(p.rwnd_range[0], p.rwnd_range[1] + 1, size=n)
    src = str(ipaddress.IPv4Address(_SRC_BASE + 1 + gid))
    dst = str(ipaddress.IPv4Address(_DST_BASE + 1 + gid % 250))
    key = FlowKey((src, 1024 + gid % 60000), (dst, p.dst_port), TCP)
    return Flow(key, ts, sizes, flags, windows, np.ones(n, dtype=bool), p.label)


def generate(profiles: Sequence[ClassProfile], seed: int = 0,
             max_gap_us: int = DEFAULT_IDLE_TIMEOUT_US - 1) -> list[Flow]:
    """Generate labelled flows. Each flow draws from its own RNG stream
    derived from (seed, profile index, flow index)."""
    if not profiles:
        raise ValueError("no profiles given")
    for p in profiles:
        p.validate()
    out = []
    gid = 0
    for pi, p in enumerate(profiles):
        for fi in range(p.flows):
            rng = np.random.default_rng(np.random.SeedSequence([seed, pi, fi]))
            out.append(_one_flow(p, rng, gid, max_gap_us))
            gid += 1
    return out


def _scidmz_like() -> list[ClassProfile]:
    known = ClassProfile(KNOWN, size_mean=1420, size_std=60, iat_mean=1.5e-4, iat_std=2e-4,
                         ack_prob=1.0, rwnd_range=(40000, 65535), flows=188,
                         packets_per_flow=(1500, 6000), dst_port=2811)
    unknown = ClassProfile(UNKNOWN, size_mean=760, size_std=60, iat_mean=2e-3, iat_std=4e-3,
                           ack_prob=0.9, rwnd_range=(8000, 30000), flows=188,
                           packets_per_flow=(1500, 6000), dst_port=443)
    return [known, replace(known, flows=12, packets_per_flow=(60000, 66000)),
            unknown, replace(unknown, flows=12, packets_per_flow=(60000, 66000))]


def _general_like() -> list[ClassProfile]:
    known = ClassProfile(KNOWN, size_mean=1100, size_std=420, iat_mean=1.2e-3, iat_std=2.5e-3,
                         ack_prob=0.95, rwnd_range=(20000, 65535), flows=190,
                         packets_per_flow=(1500, 6000), flow_jitter=0.15, dst_port=2811)
    unknown = ClassProfile(UNKNOWN, size_mean=950, size_std=450, iat_mean=1.6e-3, iat_std=3.5e-3,
                           ack_prob=0.9, rwnd_range=(8000, 65535), flows=190,
                           packets_per_flow=(1500, 6000), flow_jitter=0.3, dst_port=443)
    return [known, replace(known, flows=10, packets_per_flow=(60000, 66000)),
            unknown, replace(unknown, flows=10, packets_per_flow=(60000, 66000))]


PRESETS = {"scidmz-like": _scidmz_like, "general-like": _general_like}


def preset(name: str, scale: float = 1.0) -> list[ClassProfile]:
    """Built-in profile sets; ``scale`` multiplies every flow count."""
    try:
        profiles = PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    if scale != 1.0:
        profiles = [replace(p, flows=max(1, int(round(p.flows * scale)))) for p in profiles]
    return profiles


def merged_columns(flows: Sequence[Flow]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Time-ordered (flow index, packet index) for all packets, ties broken by flow order."""
    fid = np.concatenate([np.full(len(f), i, dtype=np.int64) for i, f in enumerate(flows)])
    pidx = np.concatenate([np.arange(len(f)) for f in flows])
    ts = np.concatenate([f.timestamps_us for f in flows])
    order = np.lexsort((pidx, fid, ts))
    return ts[order], fid[order], pidx[order]


def write_trace(flows: Sequence[Flow], packets_path: str | Path, labels_path: str | Path) -> None:
    """Packet-record text (all flows merged in time order) plus ``flow_key label`` sidecar."""
    ts, fid, pidx = merged_columns(flows)
    rows = []
    for f in flows:
        (ia, pa), (ib, pb) = f.key.endpoint_a, f.key.endpoint_b
        fwd = f"{ia} {ib} {pa} {pb} {f.key.protocol}"
        rev = f"{ib} {ia} {pb} {pa} {f.key.protocol}"
        rows.append((fwd, rev, f.sizes.tolist(), f.tcp_flags.tolist(), f.windows.tolist(),
                     f.forward.tolist()))
    with open(packets_path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(RECORD_HEADER + "\n")
        buf = []
        for t, i, j in zip(ts.tolist(), fid.tolist(), pidx.tolist()):
            fwd, rev, sz, fl, win, dirn = rows[i]
            buf.append(f"{t} {fwd if dirn[j] else rev} {sz[j]} {fl[j]} {win[j]}\n")
            if len(buf) >= 65536:
                fh.writelines(buf)
                buf.clear()
        fh.writelines(buf)
    write_labels(flows, labels_path)


def write_labels(flows: Sequence[Flow], path: str | Path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for f in flows:
            fh.write(f"{f.key} {f.label}\n")


def read_labels(path: str | Path) -> dict[FlowKey, str]:
    out = {}
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 2 or parts[1] not in (KNOWN, UNKNOWN):
                raise ValueError(f"{path}:{lineno}: expected 'flow_key known|unknown'")
            out[FlowKey.parse(parts[0])] = parts[1]
    return out
