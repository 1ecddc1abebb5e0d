"""Handshake flows: per-flow DTLS parsing, canonical hello selection, packet statistics."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from .codec import (
    ClientHelloBody,
    HandshakeMessage,
    HandshakeType,
    Record,
    ServerHelloBody,
    parse_datagram,
)
from .errors import DtlsParseError, IncompleteHandshakeError
from .labels import App, Browser
from .pcap import Address, CapturedPacket, FlowKey

CLIENT_TO_SERVER = "c2s"
SERVER_TO_CLIENT = "s2c"


@dataclass(frozen=True)
class FlowPacket:
    """One UDP datagram of a flow. ``records`` is empty when the payload is not DTLS."""

    direction: str
    ts_sec: int
    ts_usec: int
    payload: bytes
    records: tuple[Record, ...]

    @property
    def is_dtls(self) -> bool:
        return bool(self.records)


@dataclass(frozen=True)
class FlowMessage:
    packet_index: int
    direction: str
    record: Record
    message: HandshakeMessage


@dataclass(frozen=True)
class HandshakeFlow:
    key: FlowKey
    client: tuple[Address, int]
    packets: tuple[FlowPacket, ...]
    label: tuple[App, Browser] | None = None
    unparsed_packets: int = 0

    @property
    def packet_count(self) -> int:
        return len(self.packets)

    @property
    def app(self) -> App | None:
        return self.label[0] if self.label else None

    @property
    def messages(self) -> list[FlowMessage]:
        out = []
        for i, pkt in enumerate(self.packets):
            for rec in pkt.records:
                for msg in rec.messages:
                    out.append(FlowMessage(i, pkt.direction, rec, msg))
        return out

    def iter_messages(self, msg_type: int, direction: str | None = None) -> Iterator[FlowMessage]:
        for fm in self.messages:
            if fm.message.msg_type == msg_type and (direction is None or fm.direction == direction):
                yield fm

    def with_label(self, app: App, browser: Browser) -> HandshakeFlow:
        return HandshakeFlow(self.key, self.client, self.packets, (app, browser), self.unparsed_packets)


def _parse_packet(pkt: CapturedPacket) -> tuple[Record, ...] | None:
    try:
        return tuple(parse_datagram(pkt.udp_payload))
    except (DtlsParseError, ValueError):
        return None


def _has_client_hello(records: Iterable[Record]) -> bool:
    return any(
        m.msg_type == HandshakeType.CLIENT_HELLO and isinstance(m.body, ClientHelloBody)
        for r in records
        for m in r.messages
    )


def assemble(packets: Sequence[CapturedPacket], label: tuple[App, Browser] | None = None) -> HandshakeFlow | None:
    """Parse one flow's packets; ``None`` when no well-formed ClientHello is present.

    The client is whoever sent the first ClientHello. Packets that fail to
    parse stay in the flow (they count toward ``packet_count``) with no
    records, and are tallied in ``unparsed_packets``.
    """
    if not packets:
        return None
    parsed = [_parse_packet(p) for p in packets]
    client = None
    for pkt, recs in zip(packets, parsed):
        if recs and _has_client_hello(recs):
            client = pkt.src
            break
    if client is None:
        return None
    flow_packets = tuple(
        FlowPacket(
            CLIENT_TO_SERVER if pkt.src == client else SERVER_TO_CLIENT,
            pkt.ts_sec,
            pkt.ts_usec,
            pkt.udp_payload,
            recs or (),
        )
        for pkt, recs in zip(packets, parsed)
    )
    unparsed = sum(1 for r in parsed if r is None)
    return HandshakeFlow(packets[0].flow_key, client, flow_packets, label, unparsed)


def canonical_hello_messages(flow: HandshakeFlow) -> tuple[FlowMessage, FlowMessage]:
    """Pick the ClientHello/ServerHello pair that features are drawn from.

    Each side contributes the hello with the highest ``message_seq``; among
    retransmissions of that hello the earliest captured one wins. After a
    HelloVerifyRequest this selects the cookie-bearing ClientHello.
    """
    client = _highest_seq_first(flow, HandshakeType.CLIENT_HELLO, CLIENT_TO_SERVER, ClientHelloBody)
    server = _highest_seq_first(flow, HandshakeType.SERVER_HELLO, SERVER_TO_CLIENT, ServerHelloBody)
    if client is None:
        raise IncompleteHandshakeError(f"flow {flow.key} has no ClientHello")
    if server is None:
        raise IncompleteHandshakeError(f"flow {flow.key} has no ServerHello")
    return client, server


def canonical_hellos(flow: HandshakeFlow) -> tuple[HandshakeMessage, HandshakeMessage]:
    client, server = canonical_hello_messages(flow)
    return client.message, server.message


def _highest_seq_first(flow: HandshakeFlow, msg_type: int, direction: str, body_type: type) -> FlowMessage | None:
    best = None
    for fm in flow.iter_messages(msg_type, direction):
        if isinstance(fm.message.body, body_type) and (best is None or fm.message.message_seq > best.message.message_seq):
            best = fm
    return best


def packet_stats(flows: Iterable[HandshakeFlow]) -> dict[str, dict]:
    """Mean packets per handshake for each app label present.

    Classes with no flows are absent from the result, never zero.
    """
    totals: dict[App, list[int]] = {}
    for flow in flows:
        if flow.label is None:
            raise ValueError(f"flow {flow.key} is unlabeled")
        totals.setdefault(flow.app, []).append(flow.packet_count)
    report = {}
    for app in App:
        if app not in totals:
            continue
        counts = totals[app]
        report[app.value] = {
            "flows": len(counts),
            "packets": sum(counts),
            "mean": round(sum(counts) / len(counts), 2),
        }
    return report


def flow_summary(flow: HandshakeFlow) -> dict:
    return {
        "flow": str(flow.key),
        "client": f"{flow.client[0]}:{flow.client[1]}",
        "app": flow.label[0].value if flow.label else None,
        "browser": flow.label[1].value if flow.label else None,
        "packet_count": flow.packet_count,
        "unparsed_packets": flow.unparsed_packets,
        "messages": [
            {"packet": fm.packet_index, "dir": fm.direction, "type": fm.message.type_name, "seq": fm.message.message_seq}
            for fm in flow.messages
        ],
    }


def export_flows_jsonl(flows: Iterable[HandshakeFlow], path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        for flow in flows:
            fh.write(json.dumps(flow_summary(flow), sort_keys=True) + "\n")
