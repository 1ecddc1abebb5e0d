"""Deterministic synthetic DTLS handshake captures driven by per-class profiles.

Randomness comes from SplitMix64 (Steele, Lea & Flood, 2014) so captures are
bit-identical on every platform and Python version:

    state += 0x9E3779B97F4A7C15
    z = (state ^ (state >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)                      # all arithmetic mod 2**64

Bounded integers use rejection sampling on the 64-bit output.
"""

from __future__ import annotations

import ipaddress
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

from .codec import (
    CONTENT_CHANGE_CIPHER_SPEC,
    CONTENT_HANDSHAKE,
    DTLS_1_2,
    ClientHelloBody,
    Extension,
    HandshakeType,
    HelloVerifyRequestBody,
    Record,
    ServerHelloBody,
    extension_code,
    handshake_message,
    make_record,
    serialize_datagram,
)
from .errors import EncodingError, ProfileError
from .ingest import LabeledCapture, write_manifest
from .labels import App, Browser
from .pcap import CapturedPacket, write_capture

MASK64 = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in ``[lo, hi]``."""
        span = hi - lo + 1
        if span <= 0:
            raise ValueError(f"empty range [{lo}, {hi}]")
        limit = ((1 << 64) // span) * span
        while True:
            v = self.next_u64()
            if v < limit:
                return lo + v % span

    def randbytes(self, n: int) -> bytes:
        out = bytearray()
        while len(out) < n:
            out += self.next_u64().to_bytes(8, "little")
        return bytes(out[:n])

    def choice(self, items: Sequence):
        return items[self.randint(0, len(items) - 1)]


def derive_seed(seed: int, index: int) -> int:
    return SplitMix64(seed + index * 0x9E3779B97F4A7C15).next_u64()


# ---------------------------------------------------------------------------- profiles

FLIGHTS = (
    "client_hello",
    "hello_verify_request",
    "verified_client_hello",
    "server_hello",
    "server_flight",
    "client_flight",
    "server_finished",
)

# Typical extension bodies; profiles may override per side via extension_data.
CLIENT_EXTENSION_DATA = {
    "supported_groups": "0006001d00170018",
    "ec_point_formats": "0100",
    "signature_algorithms": "000c040308040401050308050501",
    "use_srtp": "00040001000700",
    "renegotiation_info": "00",
    "application_layer_protocol_negotiation": "0007067765627274",
    "record_size_limit": "4000",
}
SERVER_EXTENSION_DATA = {
    "supported_groups": "0002001d",
    "ec_point_formats": "0100",
    "use_srtp": "0002000100",
    "renegotiation_info": "00",
}


def _hex_or_int(v) -> int:
    return int(v, 16) if isinstance(v, str) else int(v)


def _range(v, what: str) -> tuple[int, int]:
    if isinstance(v, int):
        v = [v, v]
    lo, hi = int(v[0]), int(v[1])
    if lo < 0 or hi < lo:
        raise ProfileError(f"{what}: invalid range {v}")
    return lo, hi


@dataclass(frozen=True)
class ClassProfile:
    name: str
    app: App
    browser: Browser
    includes_hvr_exchange: bool
    client_extensions: tuple[str, ...]
    server_extensions: tuple[str, ...]
    client_cipher_suites: tuple[tuple[int, ...], ...]
    chosen_cipher_suite: tuple[int, ...]
    dtls_version: int = DTLS_1_2
    hello_version: int = DTLS_1_2
    merge_server_flight: bool = False
    client_certificate: bool = True
    cookie_length: tuple[int, int] = (32, 32)
    client_session_id_length: tuple[int, int] = (0, 0)
    server_session_id_length: tuple[int, int] = (0, 0)
    retransmissions: dict = field(default_factory=dict)
    noise_packets: tuple[int, int] = (0, 0)
    client_extension_data: dict = field(default_factory=dict)
    server_extension_data: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, d: dict) -> ClassProfile:
        try:
            suites = d["client_cipher_suites"]
            if suites and not isinstance(suites[0], list):
                suites = [suites]
            chosen = d.get("chosen_cipher_suite", [suites[0][0]])
            if not isinstance(chosen, list):
                chosen = [chosen]
            profile = cls(
                name=d.get("name", f"{d['app']}-{d.get('browser', 'Firefox')}"),
                app=App.parse(d["app"]),
                browser=Browser.parse(d.get("browser", "Firefox")),
                includes_hvr_exchange=bool(d.get("includes_hvr_exchange", False)),
                client_extensions=tuple(d.get("client_extensions", ())),
                server_extensions=tuple(d.get("server_extensions", ())),
                client_cipher_suites=tuple(tuple(_hex_or_int(s) for s in lst) for lst in suites),
                chosen_cipher_suite=tuple(_hex_or_int(s) for s in chosen),
                dtls_version=_hex_or_int(d.get("dtls_version", DTLS_1_2)),
                hello_version=_hex_or_int(d.get("hello_version", DTLS_1_2)),
                merge_server_flight=bool(d.get("merge_server_flight", False)),
                client_certificate=bool(d.get("client_certificate", True)),
                cookie_length=_range(d.get("cookie_length", [32, 32]), "cookie_length"),
                client_session_id_length=_range(d.get("client_session_id_length", [0, 0]), "client_session_id_length"),
                server_session_id_length=_range(d.get("server_session_id_length", [0, 0]), "server_session_id_length"),
                retransmissions={k: _range(v, f"retransmissions.{k}") for k, v in d.get("retransmissions", {}).items()},
                noise_packets=_range(d.get("noise_packets", [0, 0]), "noise_packets"),
                client_extension_data=dict(d.get("client_extension_data", {})),
                server_extension_data=dict(d.get("server_extension_data", {})),
            )
        except (KeyError, ValueError, TypeError, IndexError) as exc:
            raise ProfileError(f"bad profile {d.get('name', '?')}: {exc}") from exc
        profile.validate()
        return profile

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "app": self.app.value,
            "browser": self.browser.value,
            "includes_hvr_exchange": self.includes_hvr_exchange,
            "client_extensions": list(self.client_extensions),
            "server_extensions": list(self.server_extensions),
            "client_cipher_suites": [[f"0x{s:04x}" for s in lst] for lst in self.client_cipher_suites],
            "chosen_cipher_suite": [f"0x{s:04x}" for s in self.chosen_cipher_suite],
            "dtls_version": f"0x{self.dtls_version:04x}",
            "hello_version": f"0x{self.hello_version:04x}",
            "merge_server_flight": self.merge_server_flight,
            "client_certificate": self.client_certificate,
            "cookie_length": list(self.cookie_length),
            "client_session_id_length": list(self.client_session_id_length),
            "server_session_id_length": list(self.server_session_id_length),
            "retransmissions": {k: list(v) for k, v in self.retransmissions.items()},
            "noise_packets": list(self.noise_packets),
            "client_extension_data": self.client_extension_data,
            "server_extension_data": self.server_extension_data,
        }

    def validate(self) -> None:
        if self.cookie_length[1] > 255:
            raise ProfileError(f"{self.name}: cookie_length above 255 does not fit the wire format")
        for side, rng in (("client", self.client_session_id_length), ("server", self.server_session_id_length)):
            if rng[1] > 32:
                raise ProfileError(f"{self.name}: {side} session id longer than 32 bytes")
        if not self.client_cipher_suites or not all(self.client_cipher_suites):
            raise ProfileError(f"{self.name}: needs at least one non-empty cipher suite list")
        if not self.chosen_cipher_suite:
            raise ProfileError(f"{self.name}: chosen_cipher_suite is empty")
        for name in self.client_extensions + self.server_extensions:
            try:
                extension_code(name)
            except KeyError as exc:
                raise ProfileError(f"{self.name}: {exc}") from None
        for k in self.retransmissions:
            if k not in FLIGHTS:
                raise ProfileError(f"{self.name}: unknown flight {k!r} in retransmissions")
        if self.includes_hvr_exchange is False and any(
            k in self.retransmissions for k in ("hello_verify_request", "verified_client_hello")
        ):
            raise ProfileError(f"{self.name}: retransmissions reference the HVR exchange, which is disabled")


def load_profiles(path: str | os.PathLike) -> list[ClassProfile]:
    with open(path) as fh:
        doc = json.load(fh)
    items = doc["profiles"] if isinstance(doc, dict) else doc
    return [ClassProfile.from_json(p) for p in items]


def builtin_profiles(name: str = "default") -> list[ClassProfile]:
    """Bundled profile sets: ``default`` (realistic per-app) or ``planted`` (identifier-only differences)."""
    text = resources.files("dtlsfp.profiles").joinpath(f"{name}.json").read_text()
    doc = json.loads(text)
    return [ClassProfile.from_json(p) for p in doc["profiles"]]


# ---------------------------------------------------------------------------- generation


def _extensions(names: Sequence[str], overrides: dict, defaults: dict) -> tuple[Extension, ...]:
    return tuple(
        Extension(extension_code(n), bytes.fromhex(overrides.get(n, defaults.get(n, "")))) for n in names
    )


STUN_MAGIC = bytes.fromhex("2112a442")


def _stun_binding(rng: SplitMix64) -> bytes:
    # Binding request, zero-length attributes; first byte 0x00 is not a DTLS content type.
    return b"\x00\x01\x00\x00" + STUN_MAGIC + rng.randbytes(12)


class _Sequencer:
    def __init__(self) -> None:
        self.next = 0

    def take(self) -> int:
        n = self.next
        self.next += 1
        return n


def generate_flow_payloads(profile: ClassProfile, rng: SplitMix64) -> list[tuple[str, bytes]]:
    """One handshake as ordered (direction, UDP payload) pairs; direction is 'c2s' or 's2c'.

    Raises:
        ProfileError: the profile asks for a field that does not fit the wire format.
    """
    try:
        return _flow_payloads(profile, rng)
    except EncodingError as exc:
        raise ProfileError(f"{profile.name}: {exc}") from exc


def _flow_payloads(profile: ClassProfile, rng: SplitMix64) -> list[tuple[str, bytes]]:
    rv = profile.dtls_version
    cseq, sseq = _Sequencer(), _Sequencer()  # record sequence numbers per sender

    def hs_record(msgs, seqr, epoch=0):
        return make_record(msgs, version=rv, epoch=epoch, sequence_number=seqr.take())

    def opaque_record(content_type, data, seqr, epoch):
        return make_record(None, content_type=content_type, version=rv, epoch=epoch, sequence_number=seqr.take(), opaque=data)

    suites = rng.choice(profile.client_cipher_suites)
    chosen = rng.choice(profile.chosen_cipher_suite)
    c_sid = rng.randbytes(rng.randint(*profile.client_session_id_length))
    s_sid = rng.randbytes(rng.randint(*profile.server_session_id_length))
    c_random, s_random = rng.randbytes(32), rng.randbytes(32)
    c_ext = _extensions(profile.client_extensions, profile.client_extension_data, CLIENT_EXTENSION_DATA)
    s_ext = _extensions(profile.server_extensions, profile.server_extension_data, SERVER_EXTENSION_DATA)

    def client_hello(seq: int, cookie: bytes):
        body = ClientHelloBody(profile.hello_version, c_random, c_sid, cookie, suites, b"\x00", c_ext)
        return handshake_message(HandshakeType.CLIENT_HELLO, body, seq)

    # Each flight: (name, direction, list of record factories). Factories run per
    # transmission so retransmissions get fresh record sequence numbers.
    flights: list[tuple[str, str, list]] = []
    c_msg = 0
    s_msg = 0
    if profile.includes_hvr_exchange:
        cookie = rng.randbytes(rng.randint(*profile.cookie_length))
        ch0 = client_hello(0, b"")
        hvr = handshake_message(HandshakeType.HELLO_VERIFY_REQUEST, HelloVerifyRequestBody(profile.hello_version, cookie), 0)
        ch1 = client_hello(1, cookie)
        flights.append(("client_hello", "c2s", [lambda: hs_record([ch0], cseq)]))
        flights.append(("hello_verify_request", "s2c", [lambda: hs_record([hvr], sseq)]))
        flights.append(("verified_client_hello", "c2s", [lambda: hs_record([ch1], cseq)]))
        c_msg, s_msg = 2, 1
    else:
        ch = client_hello(0, b"")
        flights.append(("client_hello", "c2s", [lambda: hs_record([ch], cseq)]))
        c_msg, s_msg = 1, 0

    sh = handshake_message(
        HandshakeType.SERVER_HELLO, ServerHelloBody(profile.hello_version, s_random, s_sid, chosen, 0, s_ext), s_msg
    )
    server_msgs = [
        handshake_message(HandshakeType.CERTIFICATE, rng.randbytes(rng.randint(280, 320)), s_msg + 1),
        handshake_message(HandshakeType.SERVER_KEY_EXCHANGE, rng.randbytes(rng.randint(100, 110)), s_msg + 2),
        handshake_message(HandshakeType.CERTIFICATE_REQUEST, bytes.fromhex("0140000c040308040401050308050501" "0000"), s_msg + 3),
        handshake_message(HandshakeType.SERVER_HELLO_DONE, b"", s_msg + 4),
    ]
    sh_factory = lambda: hs_record([sh], sseq)  # noqa: E731
    server_factories = [(lambda m=m: hs_record([m], sseq)) for m in server_msgs]
    if profile.merge_server_flight:
        flights.append(("server_flight", "s2c", [sh_factory] + server_factories))
    else:
        flights.append(("server_hello", "s2c", [sh_factory]))
        flights.append(("server_flight", "s2c", server_factories))

    client_msgs = []
    seq = c_msg
    if profile.client_certificate:
        client_msgs.append(handshake_message(HandshakeType.CERTIFICATE, rng.randbytes(rng.randint(280, 320)), seq))
        seq += 1
    client_msgs.append(handshake_message(HandshakeType.CLIENT_KEY_EXCHANGE, rng.randbytes(33), seq))
    seq += 1
    if profile.client_certificate:
        client_msgs.append(handshake_message(HandshakeType.CERTIFICATE_VERIFY, rng.randbytes(rng.randint(70, 74)), seq))
    c_finished = rng.randbytes(40)
    s_finished = rng.randbytes(40)
    client_factories = [(lambda m=m: hs_record([m], cseq)) for m in client_msgs]
    client_factories.append(lambda: opaque_record(CONTENT_CHANGE_CIPHER_SPEC, b"\x01", cseq, 0))
    client_factories.append(lambda: make_record(None, content_type=CONTENT_HANDSHAKE, version=rv, epoch=1, sequence_number=0, opaque=c_finished))
    flights.append(("client_flight", "c2s", client_factories))
    flights.append((
        "server_finished",
        "s2c",
        [
            lambda: opaque_record(CONTENT_CHANGE_CIPHER_SPEC, b"\x01", sseq, 0),
            lambda: make_record(None, content_type=CONTENT_HANDSHAKE, version=rv, epoch=1, sequence_number=0, opaque=s_finished),
        ],
    ))

    payloads: list[tuple[str, bytes]] = [("c2s", _stun_binding(rng)) for _ in range(rng.randint(*profile.noise_packets))]
    for name, direction, factories in flights:
        repeats = 1 + rng.randint(*profile.retransmissions.get(name, (0, 0)))
        for _ in range(repeats):
            records: list[Record] = [f() for f in factories]
            payloads.append((direction, serialize_datagram(records)))
    return payloads


BASE_TIME = 1_600_000_000


def generate_packets(profile: ClassProfile, count: int, seed: int) -> list[CapturedPacket]:
    """Packets of ``count`` handshakes, one UDP 5-tuple per handshake."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = SplitMix64(seed)
    server = ipaddress.IPv4Address("198.51.100.10")
    packets = []
    for i in range(count):
        client = ipaddress.IPv4Address(int(ipaddress.IPv4Address("10.0.0.0")) + 1 + i)
        cport = rng.randint(49152, 65535)
        sport = rng.randint(1024, 65535)
        t_us = 0
        for direction, payload in generate_flow_payloads(profile, rng):
            t_us += rng.randint(200, 20_000)
            sec, usec = divmod(i * 2_000_000 + t_us, 1_000_000)
            if direction == "c2s":
                packets.append(CapturedPacket(BASE_TIME + sec, usec, client, server, cport, sport, payload))
            else:
                packets.append(CapturedPacket(BASE_TIME + sec, usec, server, client, sport, cport, payload))
    return packets


def generate(profile: ClassProfile, count: int, seed: int, out_path: str | os.PathLike) -> LabeledCapture:
    """Write ``count`` synthetic handshakes to a pcap and return its manifest entry."""
    write_capture(out_path, generate_packets(profile, count, seed))
    return LabeledCapture(Path(out_path), profile.app, profile.browser)


def generate_corpus(
    profiles: Sequence[ClassProfile], count: int, seed: int, out_dir: str | os.PathLike
) -> tuple[Path, list[LabeledCapture]]:
    """One pcap per profile plus ``manifest.csv`` in ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = [
        generate(p, count, derive_seed(seed, i), out_dir / f"{i:02d}_{p.name}.pcap") for i, p in enumerate(profiles)
    ]
    manifest = out_dir / "manifest.csv"
    write_manifest(manifest, entries)
    return manifest, entries
