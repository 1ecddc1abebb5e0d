from __future__ import annotations

import ipaddress
import socket
import struct

import dpkt
import pytest

from dtlsfp.errors import UnreadableCaptureError
from dtlsfp.pcap import CapturedPacket, FlowKey, group_flows, read_capture, write_capture

A = ipaddress.IPv4Address("192.0.2.1")
B = ipaddress.IPv4Address("192.0.2.2")


def _udp_ip(src, dst, sport, dport, payload, ident=1):
    udp = dpkt.udp.UDP(sport=sport, dport=dport, data=payload)
    udp.ulen = 8 + len(payload)
    ip = dpkt.ip.IP(src=socket.inet_aton(src), dst=socket.inet_aton(dst), p=dpkt.ip.IP_PROTO_UDP, data=udp, id=ident)
    ip.len = 20 + udp.ulen
    return ip


def _tcp_ip(src, dst):
    tcp = dpkt.tcp.TCP(sport=443, dport=5555, data=b"hello")
    ip = dpkt.ip.IP(src=socket.inet_aton(src), dst=socket.inet_aton(dst), p=dpkt.ip.IP_PROTO_TCP, data=tcp)
    ip.len = 20 + len(bytes(tcp))
    return ip


def _eth(ip, ethtype=dpkt.ethernet.ETH_TYPE_IP):
    return bytes(dpkt.ethernet.Ethernet(src=b"\x02" * 6, dst=b"\x04" * 6, type=ethtype, data=ip))


def _write(path, frames, linktype=dpkt.pcap.DLT_EN10MB, nano=False):
    with open(path, "wb") as fh:
        w = dpkt.pcap.Writer(fh, linktype=linktype, nano=nano)
        for ts, frame in frames:
            w.writepkt(frame, ts=ts)


@pytest.fixture
def mixed_capture(tmp_path):
    path = tmp_path / "mixed.pcap"
    frames = [
        (100.25, _eth(_udp_ip("192.0.2.1", "192.0.2.2", 5000, 6000, b"one"))),
        (100.5, _eth(_tcp_ip("192.0.2.1", "192.0.2.2"))),
        (101.0, _eth(_udp_ip("192.0.2.2", "192.0.2.1", 6000, 5000, b"two"))),
        (101.5, _eth(_tcp_ip("192.0.2.2", "192.0.2.1"))),
        (102.0, _eth(_udp_ip("192.0.2.1", "192.0.2.3", 5001, 6000, b"three"))),
    ]
    _write(path, frames)
    return path


def test_reads_udp_and_counts_skipped(mixed_capture):
    res = read_capture(mixed_capture)
    assert [p.udp_payload for p in res] == [b"one", b"two", b"three"]
    assert res.skipped == 2
    assert not res.truncated
    first = res.packets[0]
    assert (first.src_addr, first.dst_addr, first.src_port, first.dst_port) == (A, B, 5000, 6000)
    assert (first.ts_sec, first.ts_usec) == (100, 250000)


def test_group_flows_is_direction_insensitive(mixed_capture):
    flows = group_flows(read_capture(mixed_capture))
    assert len(flows) == 2
    first = list(flows.values())[0]
    assert [p.udp_payload for p in first] == [b"one", b"two"]
    assert FlowKey.of((A, 5000), (B, 6000)) == FlowKey.of((B, 6000), (A, 5000))


def test_nanosecond_capture(tmp_path):
    path = tmp_path / "nsec.pcap"
    _write(path, [(5.000123, _eth(_udp_ip("192.0.2.1", "192.0.2.2", 1, 2, b"x")))], nano=True)
    (pkt,) = read_capture(path).packets
    assert (pkt.ts_sec, pkt.ts_usec) == (5, 123)


def test_big_endian_header(tmp_path):
    path = tmp_path / "be.pcap"
    frame = _eth(_udp_ip("192.0.2.1", "192.0.2.2", 7, 9, b"big"))
    data = struct.pack(">IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1) + struct.pack(">IIII", 1, 2, len(frame), len(frame)) + frame
    path.write_bytes(data)
    (pkt,) = read_capture(path).packets
    assert pkt.udp_payload == b"big" and pkt.ts_usec == 2


def test_vlan_tagged(tmp_path):
    ip = bytes(_udp_ip("192.0.2.1", "192.0.2.2", 1000, 2000, b"vlan"))
    frame = b"\x04" * 6 + b"\x02" * 6 + b"\x81\x00" + b"\x00\x0a" + b"\x08\x00" + ip
    path = tmp_path / "vlan.pcap"
    _write(path, [(1.0, frame)])
    assert [p.udp_payload for p in read_capture(path)] == [b"vlan"]


@pytest.mark.parametrize("linktype", [101, dpkt.pcap.DLT_RAW, 228])
def test_raw_ip_linktype(tmp_path, linktype):
    path = tmp_path / "raw.pcap"
    _write(path, [(1.0, bytes(_udp_ip("192.0.2.1", "192.0.2.2", 1000, 2000, b"raw")))], linktype=linktype)
    assert [p.udp_payload for p in read_capture(path)] == [b"raw"]


def test_ipv6(tmp_path):
    src = ipaddress.IPv6Address("2001:db8::1")
    dst = ipaddress.IPv6Address("2001:db8::2")
    udp = dpkt.udp.UDP(sport=1111, dport=2222, data=b"six")
    udp.ulen = 11
    ip6 = dpkt.ip6.IP6(src=src.packed, dst=dst.packed, nxt=dpkt.ip.IP_PROTO_UDP, hlim=64, data=udp, plen=11)
    path = tmp_path / "v6.pcap"
    _write(path, [(1.0, _eth(ip6, dpkt.ethernet.ETH_TYPE_IP6))])
    (pkt,) = read_capture(path).packets
    assert (pkt.src_addr, pkt.dst_addr, pkt.udp_payload) == (src, dst, b"six")


def test_ip_fragment_skipped(tmp_path):
    ip = _udp_ip("192.0.2.1", "192.0.2.2", 1000, 2000, b"frag")
    ip.mf = 1
    path = tmp_path / "frag.pcap"
    _write(path, [(1.0, _eth(ip))])
    res = read_capture(path)
    assert res.packets == [] and res.skipped == 1


def test_truncated_final_record(mixed_capture, tmp_path, caplog):
    data = mixed_capture.read_bytes()
    cut = tmp_path / "cut.pcap"
    cut.write_bytes(data[:-10])
    res = read_capture(cut)
    assert res.truncated
    assert [p.udp_payload for p in res] == [b"one", b"two"]
    assert "truncated" in caplog.text


def test_empty_capture(tmp_path):
    path = tmp_path / "empty.pcap"
    _write(path, [])
    res = read_capture(path)
    assert len(res) == 0 and not res.truncated


@pytest.mark.parametrize("content", [b"", b"\x00" * 24, b"\x0a\x0d\x0d\x0a" + b"\x00" * 40])
def test_bad_header(tmp_path, content):
    path = tmp_path / "bad.pcap"
    path.write_bytes(content)
    with pytest.raises(UnreadableCaptureError):
        read_capture(path)


def test_writer_output_read_back_by_dpkt(tmp_path):
    pkts = [
        CapturedPacket(10, 5, A, B, 4000, 5000, b"\x16\xfe\xfd payload"),
        CapturedPacket(11, 999999, B, A, 5000, 4000, b""),
    ]
    path = tmp_path / "w.pcap"
    write_capture(path, pkts)
    with open(path, "rb") as fh:
        got = list(dpkt.pcap.Reader(fh))
    assert len(got) == 2
    for (ts, frame), pkt in zip(got, pkts):
        ip = dpkt.ethernet.Ethernet(frame).data
        dpkt_ip = dpkt.ip.IP(bytes(ip))
        dpkt_ip.sum = 0
        assert dpkt.ip.IP(bytes(dpkt_ip)).sum == ip.sum  # dpkt recomputes the checksum
        assert ip.data.data == pkt.udp_payload
        assert (ip.data.sport, ip.data.dport) == (pkt.src_port, pkt.dst_port)
        assert ts == pytest.approx(pkt.timestamp)
    assert list(read_capture(path)) == pkts
