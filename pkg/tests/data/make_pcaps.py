"""Regenerate the golden PCAP fixtures in this directory.

Frames are assembled byte by byte with ``struct``. Running with ``--check``
decodes every fixture with dpkt (a reference decoder, not a package
dependency) and prints the fields that the tests freeze as literals.
"""

import struct
import sys
from pathlib import Path

HERE = Path(__file__).parent

MAGIC_US = 0xA1B2C3D4
MAGIC_NS = 0xA1B23C4D


def ipv4(src, dst, proto, payload, ident=1, frag=0):
    total = 20 + len(payload)
    hdr = struct.pack("!BBHHHBBH4s4s", 0x45, 0, total, ident, frag, 64, proto, 0,
                      bytes(map(int, src.split("."))), bytes(map(int, dst.split("."))))
    return hdr + payload


def tcp(sport, dport, flags, window, payload_len):
    hdr = struct.pack("!HHIIBBHHH", sport, dport, 1000, 2000, 5 << 4, flags, window, 0, 0)
    return hdr + bytes(payload_len)


def udp(sport, dport, payload_len):
    return struct.pack("!HHHH", sport, dport, 8 + payload_len, 0) + bytes(payload_len)


def eth(payload, ethertype=0x0800, vlan=None):
    macs = bytes.fromhex("020000000001") + bytes.fromhex("020000000002")
    if vlan is not None:
        return macs + struct.pack("!HHH", 0x8100, vlan, ethertype) + payload
    return macs + struct.pack("!H", ethertype) + payload


def pcap(frames, endian="<", magic=MAGIC_US):
    out = struct.pack(endian + "IHHiIII", magic, 2, 4, 0, 0, 65535, 1)
    for sec, frac, frame in frames:
        out += struct.pack(endian + "IIII", sec, frac, len(frame), len(frame)) + frame
    return out


def golden_frames(frac_scale=1):
    return [
        (1600000000, 123456 * frac_scale,
         eth(ipv4("10.0.0.1", "10.0.0.2", 6, tcp(4000, 443, 0x02, 65535, 0)))),
        (1600000000, 223456 * frac_scale,
         eth(ipv4("10.0.0.2", "10.0.0.1", 6, tcp(443, 4000, 0x12, 29200, 0)))),
        (1600000001, 5 * frac_scale,
         eth(ipv4("10.0.0.1", "10.0.0.2", 6, tcp(4000, 443, 0x18, 501, 1400)))),
    ]


def mixed_frames():
    return [
        (1700000000, 1, eth(ipv4("192.168.1.10", "192.168.1.20", 6, tcp(51000, 22, 0x10, 1024, 100)))),
        (1700000000, 2, eth(ipv4("192.168.1.10", "8.8.8.8", 17, udp(53000, 53, 30)))),
        (1700000000, 3, eth(ipv4("192.168.1.30", "192.168.1.40", 6, tcp(6000, 80, 0x11, 2048, 10)), vlan=100)),
        (1700000000, 4, eth(bytes(28), ethertype=0x0806)),
        (1700000000, 5, eth(ipv4("192.168.1.10", "192.168.1.20", 6, bytes(64), frag=(185)))),
    ]


def write_all():
    (HERE / "golden_le.pcap").write_bytes(pcap(golden_frames(), "<"))
    (HERE / "golden_be.pcap").write_bytes(pcap(golden_frames(), ">"))
    (HERE / "golden_ns.pcap").write_bytes(pcap(golden_frames(1000), "<", MAGIC_NS))
    (HERE / "mixed.pcap").write_bytes(pcap(mixed_frames()))
    (HERE / "two_packets.pcap").write_bytes(pcap(mixed_frames()[:2]))
    (HERE / "empty.pcap").write_bytes(pcap([]))
    full = pcap(golden_frames())
    (HERE / "truncated.pcap").write_bytes(full[:-10])


def check():
    import dpkt

    for name in ("golden_le", "golden_be", "golden_ns", "mixed"):
        with open(HERE / f"{name}.pcap", "rb") as fh:
            print(name)
            for ts, buf in dpkt.pcap.Reader(fh):
                e = dpkt.ethernet.Ethernet(buf)
                ip = e.data
                if not isinstance(ip, dpkt.ip.IP):
                    print("  skip non-ip", type(ip).__name__)
                    continue
                t = ip.data
                if not isinstance(t, dpkt.tcp.TCP):
                    print("  skip", type(t).__name__, "off", ip.off & 0x1FFF)
                    continue
                print(f"  {ts!r} {dpkt.utils.inet_to_str(ip.src)} {dpkt.utils.inet_to_str(ip.dst)} "
                      f"{t.sport} {t.dport} {ip.p} {ip.len} {t.flags} {t.win}")


if __name__ == "__main__":
    write_all()
    if "--check" in sys.argv:
        check()
