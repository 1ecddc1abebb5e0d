"""DTLS 1.0/1.2 record-layer and handshake codec.

Only the plaintext (epoch 0) handshake messages are decoded; everything else
is carried as opaque bytes so a datagram can always be re-serialized exactly.
"""

from __future__ import annotations

import enum
import logging
import struct
from dataclasses import dataclass, replace
from typing import Iterable, Union

from .errors import DtlsParseError, EncodingError, NotDtlsError, TruncatedRecordError

logger = logging.getLogger(__name__)

RECORD_HEADER_LEN = 13
HANDSHAKE_HEADER_LEN = 12
RANDOM_LEN = 32

CONTENT_CHANGE_CIPHER_SPEC = 20
CONTENT_ALERT = 21
CONTENT_HANDSHAKE = 22
CONTENT_APPLICATION_DATA = 23
CONTENT_TYPES = frozenset(
    {CONTENT_CHANGE_CIPHER_SPEC, CONTENT_ALERT, CONTENT_HANDSHAKE, CONTENT_APPLICATION_DATA}
)

DTLS_1_0 = 0xFEFF
DTLS_1_2 = 0xFEFD

EXT_SUPPORTED_GROUPS = 10
EXT_RENEGOTIATION_INFO = 0xFF01


class HandshakeType(enum.IntEnum):
    CLIENT_HELLO = 1
    SERVER_HELLO = 2
    HELLO_VERIFY_REQUEST = 3
    CERTIFICATE = 11
    SERVER_KEY_EXCHANGE = 12
    CERTIFICATE_REQUEST = 13
    SERVER_HELLO_DONE = 14
    CERTIFICATE_VERIFY = 15
    CLIENT_KEY_EXCHANGE = 16
    FINISHED = 20


# IANA "TLS ExtensionType Values" registry, the subset seen in WebRTC stacks.
EXTENSION_NAMES: dict[int, str] = {
    0: "server_name",
    1: "max_fragment_length",
    5: "status_request",
    10: "supported_groups",
    11: "ec_point_formats",
    13: "signature_algorithms",
    14: "use_srtp",
    15: "heartbeat",
    16: "application_layer_protocol_negotiation",
    18: "signed_certificate_timestamp",
    21: "padding",
    22: "encrypt_then_mac",
    23: "extended_master_secret",
    28: "record_size_limit",
    35: "session_ticket",
    41: "pre_shared_key",
    42: "early_data",
    43: "supported_versions",
    44: "cookie",
    45: "psk_key_exchange_modes",
    51: "key_share",
    0xFF01: "renegotiation_info",
}
EXTENSION_CODES: dict[str, int] = {name: code for code, name in EXTENSION_NAMES.items()}


def extension_name(type_code: int) -> str:
    """Canonical name for an extension code; unknown codes become ``ext_<decimal>``."""
    return EXTENSION_NAMES.get(type_code, f"ext_{type_code}")


def extension_code(name: str) -> int:
    """Inverse of :func:`extension_name`."""
    if name in EXTENSION_CODES:
        return EXTENSION_CODES[name]
    if name.startswith("ext_") and name[4:].isdigit():
        return int(name[4:])
    raise KeyError(f"unknown extension name {name!r}")


@dataclass(frozen=True)
class Extension:
    type: int
    data: bytes = b""

    @property
    def name(self) -> str:
        return extension_name(self.type)

    @property
    def wire_length(self) -> int:
        return 4 + len(self.data)


@dataclass(frozen=True)
class ClientHelloBody:
    client_version: int
    random: bytes
    session_id: bytes = b""
    cookie: bytes = b""
    cipher_suites: tuple[int, ...] = ()
    compression_methods: bytes = b"\x00"
    # None means the optional extensions block is absent from the wire.
    extensions: tuple[Extension, ...] | None = ()

    @property
    def cipher_suites_length(self) -> int:
        return 2 * len(self.cipher_suites)

    @property
    def extensions_total_length(self) -> int:
        return sum(e.wire_length for e in self.extensions or ())


@dataclass(frozen=True)
class ServerHelloBody:
    server_version: int
    random: bytes
    session_id: bytes = b""
    chosen_cipher_suite: int = 0
    compression_method: int = 0
    extensions: tuple[Extension, ...] | None = ()

    @property
    def extensions_total_length(self) -> int:
        return sum(e.wire_length for e in self.extensions or ())


@dataclass(frozen=True)
class HelloVerifyRequestBody:
    server_version: int
    cookie: bytes = b""


Body = Union[ClientHelloBody, ServerHelloBody, HelloVerifyRequestBody, bytes]


@dataclass(frozen=True)
class DtlsRecordHeader:
    content_type: int
    version: int
    epoch: int
    sequence_number: int
    length: int


@dataclass(frozen=True)
class HandshakeMessage:
    msg_type: int
    length: int
    message_seq: int
    fragment_offset: int
    fragment_length: int
    body: Body

    @property
    def is_fragment(self) -> bool:
        return not (self.fragment_offset == 0 and self.fragment_length == self.length)

    @property
    def type_name(self) -> str:
        try:
            return HandshakeType(self.msg_type).name
        except ValueError:
            return f"handshake_{self.msg_type}"


@dataclass(frozen=True)
class Record:
    """One DTLS record: decoded handshake messages, or opaque bytes for anything else."""

    header: DtlsRecordHeader
    messages: tuple[HandshakeMessage, ...] = ()
    opaque: bytes = b""

    @property
    def is_handshake(self) -> bool:
        return bool(self.messages)


def handshake_message(msg_type: int, body: Body, message_seq: int = 0) -> HandshakeMessage:
    """Build an unfragmented message with length fields derived from ``body``."""
    n = len(encode_body(body))
    return HandshakeMessage(int(msg_type), n, message_seq, 0, n, body)


def with_body(message: HandshakeMessage, body: Body) -> HandshakeMessage:
    """Swap the body of an unfragmented message, keeping length fields consistent."""
    n = len(encode_body(body))
    return replace(message, body=body, length=n, fragment_length=n)


def make_record(
    messages: Iterable[HandshakeMessage] | None = None,
    *,
    content_type: int = CONTENT_HANDSHAKE,
    version: int = DTLS_1_2,
    epoch: int = 0,
    sequence_number: int = 0,
    opaque: bytes = b"",
) -> Record:
    messages = tuple(messages or ())
    if messages:
        length = sum(HANDSHAKE_HEADER_LEN + len(encode_body(m.body)) for m in messages)
    else:
        length = len(opaque)
    header = DtlsRecordHeader(content_type, version, epoch, sequence_number, length)
    return Record(header, messages, b"" if messages else bytes(opaque))


# --------------------------------------------------------------------------- decode


class _Reader:
    def __init__(self, data: bytes, base: int = 0) -> None:
        self.data = data
        self.pos = 0
        self.base = base

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int, what: str) -> bytes:
        if n > self.remaining():
            raise TruncatedRecordError(self.base + self.pos, f"{what} needs {n} bytes, {self.remaining()} left")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return int.from_bytes(self.take(2, what), "big")

    def u24(self, what: str) -> int:
        return int.from_bytes(self.take(3, what), "big")

    def vec8(self, what: str) -> bytes:
        return self.take(self.u8(what + " length"), what)

    def vec16(self, what: str) -> bytes:
        return self.take(self.u16(what + " length"), what)


def _decode_extensions(r: _Reader) -> tuple[Extension, ...] | None:
    if r.remaining() == 0:
        return None
    block = _Reader(r.vec16("extensions"), r.base + r.pos)
    exts: list[Extension] = []
    seen: set[int] = set()
    while block.remaining():
        code = block.u16("extension type")
        data = block.vec16("extension data")
        if code in seen:
            logger.warning("duplicate extension %s in hello; kept", extension_name(code))
        seen.add(code)
        exts.append(Extension(code, data))
    if r.remaining():
        raise DtlsParseError(f"{r.remaining()} trailing bytes after hello extensions")
    return tuple(exts)


def _decode_client_hello(data: bytes, base: int) -> ClientHelloBody:
    r = _Reader(data, base)
    version = r.u16("client_version")
    random = r.take(RANDOM_LEN, "random")
    session_id = r.vec8("session_id")
    cookie = r.vec8("cookie")
    suites_raw = r.vec16("cipher_suites")
    if len(suites_raw) % 2:
        raise DtlsParseError("odd cipher_suites length")
    suites = tuple(s for (s,) in struct.iter_unpack(">H", suites_raw))
    compression = r.vec8("compression_methods")
    return ClientHelloBody(version, random, session_id, cookie, suites, compression, _decode_extensions(r))


def _decode_server_hello(data: bytes, base: int) -> ServerHelloBody:
    r = _Reader(data, base)
    version = r.u16("server_version")
    random = r.take(RANDOM_LEN, "random")
    session_id = r.vec8("session_id")
    suite = r.u16("cipher_suite")
    compression = r.u8("compression_method")
    return ServerHelloBody(version, random, session_id, suite, compression, _decode_extensions(r))


def _decode_hello_verify(data: bytes, base: int) -> HelloVerifyRequestBody:
    r = _Reader(data, base)
    body = HelloVerifyRequestBody(r.u16("server_version"), r.vec8("cookie"))
    if r.remaining():
        raise DtlsParseError("trailing bytes after HelloVerifyRequest")
    return body


_BODY_DECODERS = {
    HandshakeType.CLIENT_HELLO: _decode_client_hello,
    HandshakeType.SERVER_HELLO: _decode_server_hello,
    HandshakeType.HELLO_VERIFY_REQUEST: _decode_hello_verify,
}


def decode_body(msg_type: int, data: bytes, base: int = 0) -> Body:
    decoder = _BODY_DECODERS.get(msg_type)
    return decoder(data, base) if decoder else bytes(data)


def _decode_handshake_record(body: bytes, base: int) -> tuple[HandshakeMessage, ...]:
    r = _Reader(body, base)
    messages = []
    while r.remaining():
        msg_type = r.u8("msg_type")
        length = r.u24("length")
        seq = r.u16("message_seq")
        frag_off = r.u24("fragment_offset")
        frag_len = r.u24("fragment_length")
        if frag_off + frag_len > length:
            raise DtlsParseError(f"fragment {frag_off}+{frag_len} exceeds message length {length}")
        start = r.base + r.pos
        fragment = r.take(frag_len, "handshake fragment")
        if frag_off == 0 and frag_len == length:
            payload = decode_body(msg_type, fragment, start)
        else:
            payload = bytes(fragment)
        messages.append(HandshakeMessage(msg_type, length, seq, frag_off, frag_len, payload))
    return tuple(messages)


def parse_datagram(payload: bytes) -> list[Record]:
    """Decode every DTLS record in one UDP payload.

    Handshake records in epoch 0 are decoded into messages; other records
    keep their body as opaque bytes.

    Raises:
        ValueError: ``payload`` is empty.
        NotDtlsError: a record starts with an unknown content type.
        TruncatedRecordError: a record claims more bytes than remain.
    """
    if not payload:
        raise ValueError("empty payload")
    payload = bytes(payload)
    records: list[Record] = []
    pos = 0
    while pos < len(payload):
        if payload[pos] not in CONTENT_TYPES:
            raise NotDtlsError(f"content type {payload[pos]} at offset {pos} is not DTLS")
        if len(payload) - pos < RECORD_HEADER_LEN:
            raise TruncatedRecordError(pos, "record header truncated")
        ctype, version, epoch = struct.unpack_from(">BHH", payload, pos)
        seq = int.from_bytes(payload[pos + 5 : pos + 11], "big")
        (length,) = struct.unpack_from(">H", payload, pos + 11)
        start = pos + RECORD_HEADER_LEN
        if start + length > len(payload):
            raise TruncatedRecordError(pos, f"record length {length} exceeds {len(payload) - start} remaining bytes")
        body = payload[start : start + length]
        header = DtlsRecordHeader(ctype, version, epoch, seq, length)
        if ctype == CONTENT_HANDSHAKE and epoch == 0:
            records.append(Record(header, _decode_handshake_record(body, start)))
        else:
            records.append(Record(header, (), body))
        pos = start + length
    return records


# --------------------------------------------------------------------------- encode


def _check(value: int, bits: int, what: str) -> int:
    if not 0 <= value < (1 << bits):
        raise EncodingError(f"{what}={value} does not fit in {bits} bits")
    return value


def _vec(data: bytes, len_bytes: int, what: str, max_len: int | None = None) -> bytes:
    limit = (1 << (8 * len_bytes)) - 1 if max_len is None else max_len
    if len(data) > limit:
        raise EncodingError(f"{what} of {len(data)} bytes exceeds {limit}")
    return len(data).to_bytes(len_bytes, "big") + bytes(data)


def _encode_extensions(exts: tuple[Extension, ...] | None) -> bytes:
    if exts is None:
        return b""
    block = b"".join(
        _check(e.type, 16, "extension type").to_bytes(2, "big") + _vec(e.data, 2, f"extension {e.name}")
        for e in exts
    )
    return _vec(block, 2, "extensions")


def _random(value: bytes) -> bytes:
    if len(value) != RANDOM_LEN:
        raise EncodingError(f"random must be {RANDOM_LEN} bytes, got {len(value)}")
    return bytes(value)


def encode_body(body: Body) -> bytes:
    if isinstance(body, ClientHelloBody):
        suites = b"".join(_check(s, 16, "cipher suite").to_bytes(2, "big") for s in body.cipher_suites)
        return (
            _check(body.client_version, 16, "client_version").to_bytes(2, "big")
            + _random(body.random)
            + _vec(body.session_id, 1, "session_id", 32)
            + _vec(body.cookie, 1, "cookie")
            + _vec(suites, 2, "cipher_suites", 0xFFFE)
            + _vec(body.compression_methods, 1, "compression_methods")
            + _encode_extensions(body.extensions)
        )
    if isinstance(body, ServerHelloBody):
        return (
            _check(body.server_version, 16, "server_version").to_bytes(2, "big")
            + _random(body.random)
            + _vec(body.session_id, 1, "session_id", 32)
            + _check(body.chosen_cipher_suite, 16, "cipher_suite").to_bytes(2, "big")
            + bytes([_check(body.compression_method, 8, "compression_method")])
            + _encode_extensions(body.extensions)
        )
    if isinstance(body, HelloVerifyRequestBody):
        return _check(body.server_version, 16, "server_version").to_bytes(2, "big") + _vec(body.cookie, 1, "cookie")
    return bytes(body)


def encode_message(message: HandshakeMessage) -> bytes:
    body = encode_body(message.body)
    if not message.is_fragment and len(body) != message.length:
        raise EncodingError(f"{message.type_name} length field {message.length} != body size {len(body)}")
    if message.is_fragment and len(body) != message.fragment_length:
        raise EncodingError(f"fragment_length {message.fragment_length} != fragment size {len(body)}")
    if message.fragment_offset + message.fragment_length > message.length:
        raise EncodingError("fragment extends past message length")
    return (
        bytes([_check(message.msg_type, 8, "msg_type")])
        + _check(message.length, 24, "length").to_bytes(3, "big")
        + _check(message.message_seq, 16, "message_seq").to_bytes(2, "big")
        + _check(message.fragment_offset, 24, "fragment_offset").to_bytes(3, "big")
        + _check(message.fragment_length, 24, "fragment_length").to_bytes(3, "big")
        + body
    )


def _record_bytes(content_type: int, version: int, epoch: int, seq: int, body: bytes) -> bytes:
    if len(body) > 0xFFFF:
        raise EncodingError(f"record body of {len(body)} bytes exceeds 65535")
    return (
        struct.pack(">BHH", _check(content_type, 8, "content_type"), _check(version, 16, "version"), _check(epoch, 16, "epoch"))
        + _check(seq, 48, "sequence_number").to_bytes(6, "big")
        + struct.pack(">H", len(body))
        + body
    )


def serialize(message: HandshakeMessage, record_version: int = DTLS_1_2, epoch: int = 0, seq: int = 0) -> bytes:
    """Encode ``message`` as a single handshake record."""
    return _record_bytes(CONTENT_HANDSHAKE, record_version, epoch, seq, encode_message(message))


def serialize_record(record: Record) -> bytes:
    h = record.header
    body = b"".join(encode_message(m) for m in record.messages) if record.messages else record.opaque
    if len(body) != h.length:
        raise EncodingError(f"record length field {h.length} != body size {len(body)}")
    return _record_bytes(h.content_type, h.version, h.epoch, h.sequence_number, body)


def serialize_datagram(records: Iterable[Record]) -> bytes:
    return b"".join(serialize_record(r) for r in records)
