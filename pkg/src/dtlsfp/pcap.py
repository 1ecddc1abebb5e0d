"""Classic pcap reading/writing and UDP flow grouping."""

from __future__ import annotations

import ipaddress
import logging
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Sequence

from .errors import UnreadableCaptureError

logger = logging.getLogger(__name__)

MAGIC_USEC = 0xA1B2C3D4
MAGIC_NSEC = 0xA1B23C4D

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
# DLT values some platforms write for raw IP instead of LINKTYPE_RAW.
DLT_RAW_ALIASES = (12, 14)
LINKTYPE_LINUX_SLL = 113
LINKTYPE_IPV4 = 228
LINKTYPE_IPV6 = 229

ETH_IPV4 = 0x0800
ETH_IPV6 = 0x86DD
ETH_VLAN = (0x8100, 0x88A8, 0x9100)

IPPROTO_UDP = 17
# IPv6 extension headers we walk past (hop-by-hop, routing, destination options).
_IPV6_SKIPPABLE = {0, 43, 60}
_IPV6_FRAGMENT = 44

Address = ipaddress.IPv4Address | ipaddress.IPv6Address


@dataclass(frozen=True)
class CapturedPacket:
    ts_sec: int
    ts_usec: int
    src_addr: Address
    dst_addr: Address
    src_port: int
    dst_port: int
    udp_payload: bytes

    @property
    def timestamp(self) -> float:
        return self.ts_sec + self.ts_usec / 1e6

    @property
    def src(self) -> tuple[Address, int]:
        return (self.src_addr, self.src_port)

    @property
    def dst(self) -> tuple[Address, int]:
        return (self.dst_addr, self.dst_port)

    @property
    def flow_key(self) -> FlowKey:
        return FlowKey.of(self.src, self.dst)


def _endpoint_sort_key(ep: tuple[Address, int]) -> tuple[int, int, int]:
    return (ep[0].version, int(ep[0]), ep[1])


@dataclass(frozen=True)
class FlowKey:
    """Direction-insensitive pair of (address, port) endpoints."""

    a: tuple[Address, int]
    b: tuple[Address, int]

    @classmethod
    def of(cls, x: tuple[Address, int], y: tuple[Address, int]) -> FlowKey:
        lo, hi = sorted((x, y), key=_endpoint_sort_key)
        return cls(lo, hi)

    def __str__(self) -> str:
        return f"{self.a[0]}:{self.a[1]}<->{self.b[0]}:{self.b[1]}"


@dataclass
class CaptureReadResult:
    packets: list[CapturedPacket] = field(default_factory=list)
    skipped: int = 0
    truncated: bool = False
    warnings: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter(self.packets)

    def __len__(self) -> int:
        return len(self.packets)


class _Skip(Exception):
    """Packet is well-formed but not a UDP datagram we can use."""


def _decode_ip(data: bytes, version_hint: int | None = None) -> tuple[Address, Address, bytes]:
    if not data:
        raise _Skip("empty IP packet")
    version = data[0] >> 4 if version_hint is None else version_hint
    if version == 4:
        if len(data) < 20:
            raise _Skip("short IPv4 header")
        ihl = (data[0] & 0x0F) * 4
        if ihl < 20 or len(data) < ihl:
            raise _Skip("bad IPv4 header length")
        flags_frag = struct.unpack_from(">H", data, 6)[0]
        proto = data[9]
        src = ipaddress.IPv4Address(data[12:16])
        dst = ipaddress.IPv4Address(data[16:20])
        if proto != IPPROTO_UDP:
            raise _Skip(f"IP protocol {proto}")
        if flags_frag & 0x3FFF:
            raise _Skip("fragmented IPv4 packet rejected")
        total_len = struct.unpack_from(">H", data, 2)[0]
        return src, dst, data[ihl : max(ihl, min(total_len, len(data)))]
    if version == 6:
        if len(data) < 40:
            raise _Skip("short IPv6 header")
        nxt = data[6]
        src = ipaddress.IPv6Address(data[8:24])
        dst = ipaddress.IPv6Address(data[24:40])
        pos = 40
        while nxt in _IPV6_SKIPPABLE:
            if len(data) < pos + 2:
                raise _Skip("truncated IPv6 extension header")
            nxt, hlen = data[pos], (data[pos + 1] + 1) * 8
            pos += hlen
        if nxt == _IPV6_FRAGMENT:
            raise _Skip("fragmented IPv6 packet rejected")
        if nxt != IPPROTO_UDP:
            raise _Skip(f"IPv6 next header {nxt}")
        return src, dst, data[pos:]
    raise _Skip(f"IP version {version}")


def _decode_frame(linktype: int, frame: bytes, ts_sec: int, ts_usec: int) -> CapturedPacket:
    if linktype == LINKTYPE_ETHERNET:
        if len(frame) < 14:
            raise _Skip("short Ethernet frame")
        ethertype = struct.unpack_from(">H", frame, 12)[0]
        pos = 14
        while ethertype in ETH_VLAN:
            if len(frame) < pos + 4:
                raise _Skip("short VLAN tag")
            ethertype = struct.unpack_from(">H", frame, pos + 2)[0]
            pos += 4
        if ethertype not in (ETH_IPV4, ETH_IPV6):
            raise _Skip(f"ethertype 0x{ethertype:04x}")
        ip = frame[pos:]
    elif linktype == LINKTYPE_LINUX_SLL:
        if len(frame) < 16:
            raise _Skip("short SLL header")
        ethertype = struct.unpack_from(">H", frame, 14)[0]
        if ethertype not in (ETH_IPV4, ETH_IPV6):
            raise _Skip(f"ethertype 0x{ethertype:04x}")
        ip = frame[16:]
    elif linktype in (LINKTYPE_RAW, LINKTYPE_IPV4, LINKTYPE_IPV6, *DLT_RAW_ALIASES):
        ip = frame
    else:
        raise UnreadableCaptureError(f"unsupported link type {linktype}")
    src, dst, udp = _decode_ip(ip)
    if len(udp) < 8:
        raise _Skip("short UDP header")
    sport, dport, ulen = struct.unpack_from(">HHH", udp, 0)
    if ulen < 8 or ulen > len(udp):
        raise _Skip(f"UDP length {ulen} inconsistent with {len(udp)} captured bytes")
    if sport == 0 or dport == 0:
        raise _Skip("zero UDP port")
    return CapturedPacket(ts_sec, ts_usec, src, dst, sport, dport, bytes(udp[8:ulen]))


def _read_global_header(fh: BinaryIO) -> tuple[str, bool, int]:
    header = fh.read(24)
    if len(header) < 24:
        raise UnreadableCaptureError("file shorter than a pcap global header")
    for endian in ("<", ">"):
        (magic,) = struct.unpack(endian + "I", header[:4])
        if magic in (MAGIC_USEC, MAGIC_NSEC):
            _, _, _, _, _, linktype = struct.unpack(endian + "HHiIII", header[4:])
            return endian, magic == MAGIC_NSEC, linktype & 0x0FFFFFFF
    raise UnreadableCaptureError(f"bad pcap magic {header[:4].hex()} (pcapng is not supported)")


def read_capture(path: str | os.PathLike) -> CaptureReadResult:
    """Read every UDP packet of a classic pcap file, in file order.

    Non-UDP and fragmented packets are skipped and counted. A truncated
    trailing record stops reading; packets read so far are returned with
    ``truncated`` set.
    """
    result = CaptureReadResult()
    with open(path, "rb") as fh:
        endian, nsec, linktype = _read_global_header(fh)
        if linktype not in (LINKTYPE_ETHERNET, LINKTYPE_RAW, LINKTYPE_LINUX_SLL, LINKTYPE_IPV4, LINKTYPE_IPV6, *DLT_RAW_ALIASES):
            raise UnreadableCaptureError(f"unsupported link type {linktype}")
        rec_fmt = endian + "IIII"
        while True:
            rec = fh.read(16)
            if not rec:
                break
            if len(rec) < 16:
                result.truncated = True
                break
            ts_sec, ts_frac, incl_len, _orig_len = struct.unpack(rec_fmt, rec)
            frame = fh.read(incl_len)
            if len(frame) < incl_len:
                result.truncated = True
                break
            ts_usec = ts_frac // 1000 if nsec else ts_frac
            try:
                result.packets.append(_decode_frame(linktype, frame, ts_sec, ts_usec))
            except _Skip as exc:
                result.skipped += 1
                if "fragmented" in str(exc):
                    result.warnings.append(str(exc))
    if result.truncated:
        msg = f"{os.fspath(path)}: truncated packet record after {len(result.packets)} UDP packets"
        result.warnings.append(msg)
        logger.warning(msg)
    return result


def group_flows(packets: Iterable[CapturedPacket]) -> OrderedDict[FlowKey, list[CapturedPacket]]:
    """Partition packets by direction-insensitive 5-tuple, keeping capture order."""
    flows: OrderedDict[FlowKey, list[CapturedPacket]] = OrderedDict()
    for pkt in packets:
        flows.setdefault(pkt.flow_key, []).append(pkt)
    return flows


# --------------------------------------------------------------------------- writing


def _ip_checksum(header: bytes) -> int:
    total = sum(struct.unpack(f">{len(header) // 2}H", header))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def build_udp_frame(pkt: CapturedPacket, ip_id: int = 0) -> bytes:
    """Ethernet frame carrying ``pkt`` (IPv4 or IPv6, UDP checksum zero)."""
    udp = struct.pack(">HHHH", pkt.src_port, pkt.dst_port, 8 + len(pkt.udp_payload), 0) + pkt.udp_payload
    if pkt.src_addr.version == 4:
        hdr = struct.pack(">BBHHHBBH4s4s", 0x45, 0, 20 + len(udp), ip_id & 0xFFFF, 0x4000, 64, IPPROTO_UDP, 0,
                          pkt.src_addr.packed, pkt.dst_addr.packed)
        hdr = hdr[:10] + struct.pack(">H", _ip_checksum(hdr)) + hdr[12:]
        ethertype = ETH_IPV4
    else:
        hdr = struct.pack(">IHBB16s16s", 0x60000000, len(udp), IPPROTO_UDP, 64, pkt.src_addr.packed, pkt.dst_addr.packed)
        ethertype = ETH_IPV6
    eth = b"\x02\x00\x00\x00\x00\x02" + b"\x02\x00\x00\x00\x00\x01" + struct.pack(">H", ethertype)
    return eth + hdr + udp


def write_capture(path: str | os.PathLike, packets: Sequence[CapturedPacket], snaplen: int = 65535) -> None:
    """Write packets as a little-endian, microsecond, Ethernet pcap."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<IHHiIII", MAGIC_USEC, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET))
        for i, pkt in enumerate(packets):
            frame = build_udp_frame(pkt, ip_id=i)
            fh.write(struct.pack("<IIII", pkt.ts_sec, pkt.ts_usec, len(frame), len(frame)))
            fh.write(frame)
