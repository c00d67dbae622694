"""Packet ingestion: classic PCAP reader and the ``pktrec`` text format."""

from __future__ import annotations

import ipaddress
import logging
import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable

log = logging.getLogger(__name__)

TCP = 6
ACK = 0x10

LINKTYPE_ETHERNET = 1
ETH_IPV4 = 0x0800
ETH_VLAN = 0x8100

_MAGIC_US = 0xA1B2C3D4
_MAGIC_NS = 0xA1B23C4D

RECORD_HEADER = "# pktrec v1"


class PcapFormatError(ValueError):
    pass


class RecordFormatError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True, slots=True)
class PacketRecord:
    timestamp_us: int
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: int
    size_bytes: int
    tcp_flags: int
    recv_window_bytes: int

    def mirrored(self) -> "PacketRecord":
        return PacketRecord(self.timestamp_us, self.dst_ip, self.src_ip, self.dst_port,
                            self.src_port, self.protocol, self.size_bytes, self.tcp_flags,
                            self.recv_window_bytes)


@dataclass
class SkipStats:
    """Packets present in a capture but not emitted as records."""

    non_ipv4: int = 0
    non_tcp: int = 0
    fragment: int = 0
    truncated: int = 0
    partial_record: int = 0

    @property
    def total(self) -> int:
        return sum(getattr(self, f.name) for f in fields(self))


def _parse_frame(frame: bytes, ts_us: int, skip: SkipStats) -> PacketRecord | None:
    if len(frame) < 14:
        skip.truncated += 1
        return None
    off = 12
    ethertype = struct.unpack_from("!H", frame, off)[0]
    off += 2
    if ethertype == ETH_VLAN:
        if len(frame) < off + 4:
            skip.truncated += 1
            return None
        ethertype = struct.unpack_from("!H", frame, off + 2)[0]
        off += 4
    if ethertype != ETH_IPV4:
        skip.non_ipv4 += 1
        return None
    if len(frame) < off + 20:
        skip.truncated += 1
        return None
    ver_ihl = frame[off]
    if ver_ihl >> 4 != 4:
        skip.non_ipv4 += 1
        return None
    ihl = (ver_ihl & 0x0F) * 4
    total_len, frag = struct.unpack_from("!H2xH", frame, off + 2)
    proto = frame[off + 9]
    if proto != TCP:
        skip.non_tcp += 1
        return None
    if frag & 0x1FFF:
        # non-first fragment: no transport header
        skip.fragment += 1
        return None
    tcp = off + ihl
    if ihl < 20 or len(frame) < tcp + 16:
        skip.truncated += 1
        return None
    src = ipaddress.IPv4Address(frame[off + 12:off + 16])
    dst = ipaddress.IPv4Address(frame[off + 16:off + 20])
    sport, dport = struct.unpack_from("!HH", frame, tcp)
    flags = frame[tcp + 13]
    window = struct.unpack_from("!H", frame, tcp + 14)[0]
    return PacketRecord(ts_us, str(src), str(dst), sport, dport, proto, total_len, flags, window)


def read_pcap(path: str | Path) -> tuple[list[PacketRecord], SkipStats]:
    """Decode Ethernet/IPv4/TCP packets from a classic PCAP file.

    Both byte orders and the nanosecond-resolution magic are accepted;
    nanosecond timestamps are truncated to microseconds. A record cut off by
    end of file stops decoding with a warning and is counted in
    ``SkipStats.partial_record``.
    """
    data = Path(path).read_bytes()
    if len(data) < 24:
        raise PcapFormatError(f"{path}: file shorter than PCAP global header")
    magic_le = struct.unpack_from("<I", data)[0]
    magic_be = struct.unpack_from(">I", data)[0]
    if magic_le in (_MAGIC_US, _MAGIC_NS):
        endian, magic = "<", magic_le
    elif magic_be in (_MAGIC_US, _MAGIC_NS):
        endian, magic = ">", magic_be
    else:
        raise PcapFormatError(f"{path}: bad PCAP magic 0x{magic_le:08x}")
    nanos = magic == _MAGIC_NS
    linktype = struct.unpack_from(endian + "I", data, 20)[0]
    if linktype != LINKTYPE_ETHERNET:
        raise PcapFormatError(f"{path}: unsupported link type {linktype}")

    records: list[PacketRecord] = []
    skip = SkipStats()
    pos = 24
    rec_hdr = struct.Struct(endian + "IIII")
    while pos < len(data):
        if pos + 16 > len(data):
            log.warning("%s: partial record header at offset %d; stopping", path, pos)
            skip.partial_record += 1
            break
        sec, frac, incl_len, _orig = rec_hdr.unpack_from(data, pos)
        pos += 16
        if pos + incl_len > len(data):
            log.warning("%s: partial packet data at offset %d; stopping", path, pos)
            skip.partial_record += 1
            break
        ts_us = sec * 1_000_000 + (frac // 1000 if nanos else frac)
        rec = _parse_frame(data[pos:pos + incl_len], ts_us, skip)
        pos += incl_len
        if rec is not None:
            records.append(rec)
    return records, skip


def format_record(r: PacketRecord) -> str:
    return (f"{r.timestamp_us} {r.src_ip} {r.dst_ip} {r.src_port} {r.dst_port} "
            f"{r.protocol} {r.size_bytes} {r.tcp_flags} {r.recv_window_bytes}")


def parse_record(line: str, lineno: int = 0) -> PacketRecord:
    parts = line.split()
    if len(parts) != 9:
        raise RecordFormatError(lineno, f"expected 9 fields, got {len(parts)}")
    try:
        ts, sp, dp, proto, size, flags, win = (int(parts[i]) for i in (0, 3, 4, 5, 6, 7, 8))
        src = str(ipaddress.IPv4Address(parts[1]))
        dst = str(ipaddress.IPv4Address(parts[2]))
    except ValueError as exc:
        raise RecordFormatError(lineno, str(exc)) from None
    if ts < 0:
        raise RecordFormatError(lineno, "negative timestamp")
    if not (0 <= sp <= 0xFFFF and 0 <= dp <= 0xFFFF):
        raise RecordFormatError(lineno, "port out of range")
    if not 0 <= flags <= 0xFF:
        raise RecordFormatError(lineno, "tcp_flags is not an 8-bit mask")
    if size < 0 or win < 0 or not 0 <= proto <= 0xFF:
        raise RecordFormatError(lineno, "negative size/window or bad protocol")
    return PacketRecord(ts, src, dst, sp, dp, proto, size, flags, win)


def read_records(path: str | Path) -> list[PacketRecord]:
    out = []
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            out.append(parse_record(s, lineno))
    return out


def write_records(records: Iterable[PacketRecord], path: str | Path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(RECORD_HEADER + "\n")
        for r in records:
            fh.write(format_record(r) + "\n")


def is_pcap(path: str | Path) -> bool:
    with open(path, "rb") as fh:
        head = fh.read(4)
    if len(head) < 4:
        return False
    return {struct.unpack("<I", head)[0], struct.unpack(">I", head)[0]} & {_MAGIC_US, _MAGIC_NS} != set()


def load_packets(path: str | Path) -> list[PacketRecord]:
    """Read either a PCAP or a pktrec text file, TCP only."""
    if is_pcap(path):
        records, skip = read_pcap(path)
        if skip.total:
            log.info("%s: skipped %s", path, skip)
        return records
    return [r for r in read_records(path) if r.protocol == TCP]
