from __future__ import annotations

import ipaddress
import random

import pytest
from hypothesis import strategies as st

from dtlsfp.codec import (
    DTLS_1_0,
    DTLS_1_2,
    ClientHelloBody,
    Extension,
    HandshakeType,
    HelloVerifyRequestBody,
    ServerHelloBody,
    handshake_message,
    make_record,
    serialize_datagram,
)
from dtlsfp.handshake import assemble
from dtlsfp.labels import App, Browser
from dtlsfp.pcap import CapturedPacket

CLIENT = ipaddress.IPv4Address("10.1.1.1")
SERVER = ipaddress.IPv4Address("203.0.113.5")
CPORT, SPORT = 50000, 3478


def rand32(tag: int = 0) -> bytes:
    return random.Random(tag).randbytes(32)


def client_hello(seq: int = 0, cookie: bytes = b"", exts=(Extension(10, b"\x00\x02\x00\x1d"),), sid: bytes = b""):
    body = ClientHelloBody(DTLS_1_2, rand32(seq), sid, cookie, (0xC02B, 0xC02F), b"\x00", exts)
    return handshake_message(HandshakeType.CLIENT_HELLO, body, seq)


def server_hello(seq: int = 0, exts=(Extension(23),), sid: bytes = b"", suite: int = 0xC02B):
    body = ServerHelloBody(DTLS_1_2, rand32(100 + seq), sid, suite, 0, exts)
    return handshake_message(HandshakeType.SERVER_HELLO, body, seq)


def hello_verify(seq: int = 0, cookie: bytes = b"\xaa" * 32):
    return handshake_message(HandshakeType.HELLO_VERIFY_REQUEST, HelloVerifyRequestBody(DTLS_1_0, cookie), seq)


def datagram(*messages, epoch: int = 0, seqnum: int = 0) -> bytes:
    return serialize_datagram([make_record(messages, epoch=epoch, sequence_number=seqnum)])


def opaque_datagram(content_type: int = 23, data: bytes = b"\x01\x02", epoch: int = 1) -> bytes:
    return serialize_datagram([make_record(None, content_type=content_type, epoch=epoch, opaque=data)])


def packets_from(payloads, t0: int = 1000) -> list[CapturedPacket]:
    """``payloads`` is a list of (direction, bytes); direction is "c2s" or "s2c"."""
    out = []
    for i, (direction, payload) in enumerate(payloads):
        if direction == "c2s":
            out.append(CapturedPacket(t0 + i, 0, CLIENT, SERVER, CPORT, SPORT, payload))
        else:
            out.append(CapturedPacket(t0 + i, 0, SERVER, CLIENT, SPORT, CPORT, payload))
    return out


def flow_from(payloads, app: App = App.FACEBOOK, browser: Browser = Browser.FIREFOX):
    return assemble(packets_from(payloads), (app, browser))


def five_packet_flow(app: App = App.FACEBOOK, sh_exts=(Extension(23), Extension(0xFF01, b"\x00"))):
    """CH / SH+server flight / client flight / CCS+Finished / app data, no cookie exchange."""
    return flow_from(
        [
            ("c2s", datagram(client_hello(0))),
            ("s2c", datagram(server_hello(0, sh_exts), handshake_message(HandshakeType.SERVER_HELLO_DONE, b"", 1))),
            ("c2s", datagram(handshake_message(HandshakeType.CLIENT_KEY_EXCHANGE, b"\x01" * 33, 1))),
            ("s2c", opaque_datagram(20, b"\x01", epoch=0) + opaque_datagram(22, b"\x00" * 40, epoch=1)),
            ("c2s", opaque_datagram(23, b"\x00" * 20, epoch=1)),
        ],
        app,
    )


def hvr_flow(app: App = App.SNOWFLAKE, sh_exts=(Extension(23), Extension(10, b"\x00\x02\x00\x1d"))):
    """CH0 / HVR / CH1+cookie / SH(seq 1) ... the cookie-exchange shape."""
    return flow_from(
        [
            ("c2s", datagram(client_hello(0))),
            ("s2c", datagram(hello_verify(0))),
            ("c2s", datagram(client_hello(1, b"\xaa" * 32))),
            ("s2c", datagram(server_hello(1, sh_exts))),
            ("c2s", datagram(handshake_message(HandshakeType.CLIENT_KEY_EXCHANGE, b"\x01" * 33, 2))),
            ("s2c", opaque_datagram(22, b"\x00" * 40, epoch=1)),
            ("c2s", opaque_datagram(23, b"\x00" * 20, epoch=1)),
        ],
        app,
    )


# ---------------------------------------------------------------------------- hypothesis strategies

u16 = st.integers(0, 0xFFFF)
extensions_st = st.one_of(
    st.none(),
    st.lists(st.builds(Extension, u16, st.binary(max_size=40)), max_size=8).map(tuple),
)
client_body_st = st.builds(
    ClientHelloBody,
    u16,
    st.binary(min_size=32, max_size=32),
    st.binary(max_size=32),
    st.binary(max_size=255),
    st.lists(u16, max_size=40).map(tuple),
    st.binary(max_size=4),
    extensions_st,
)
server_body_st = st.builds(
    ServerHelloBody,
    u16,
    st.binary(min_size=32, max_size=32),
    st.binary(max_size=32),
    u16,
    st.integers(0, 255),
    extensions_st,
)
hvr_body_st = st.builds(HelloVerifyRequestBody, u16, st.binary(max_size=255))


@st.composite
def message_st(draw):
    kind = draw(st.sampled_from(["ch", "sh", "hvr", "other"]))
    seq = draw(u16)
    if kind == "ch":
        return handshake_message(HandshakeType.CLIENT_HELLO, draw(client_body_st), seq)
    if kind == "sh":
        return handshake_message(HandshakeType.SERVER_HELLO, draw(server_body_st), seq)
    if kind == "hvr":
        return handshake_message(HandshakeType.HELLO_VERIFY_REQUEST, draw(hvr_body_st), seq)
    msg_type = draw(st.sampled_from([11, 12, 13, 14, 15, 16, 20]))
    return handshake_message(msg_type, draw(st.binary(max_size=64)), seq)


@pytest.fixture(scope="session")
def default_corpus(tmp_path_factory):
    from dtlsfp.synth import builtin_profiles, generate_corpus

    out = tmp_path_factory.mktemp("default_corpus")
    manifest, entries = generate_corpus(builtin_profiles("default"), 20, 7, out)
    return manifest, entries
