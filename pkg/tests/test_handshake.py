from __future__ import annotations

import json

import pytest
from conftest import (
    CLIENT,
    CPORT,
    client_hello,
    datagram,
    five_packet_flow,
    flow_from,
    hello_verify,
    hvr_flow,
    packets_from,
    server_hello,
)

from dtlsfp.errors import IncompleteHandshakeError
from dtlsfp.handshake import (
    CLIENT_TO_SERVER,
    SERVER_TO_CLIENT,
    assemble,
    canonical_hello_messages,
    canonical_hellos,
    export_flows_jsonl,
    packet_stats,
)
from dtlsfp.labels import App, Browser

STUN = bytes.fromhex("000100002112a442") + bytes(12)


def test_five_packet_flow():
    flow = five_packet_flow()
    assert flow.packet_count == 5
    assert flow.client == (CLIENT, CPORT)
    assert [p.direction for p in flow.packets] == ["c2s", "s2c", "c2s", "s2c", "c2s"]
    assert flow.label == (App.FACEBOOK, Browser.FIREFOX)
    ch, sh = canonical_hellos(flow)
    assert (ch.message_seq, sh.message_seq) == (0, 0)


def test_cookie_exchange_selects_second_client_hello():
    flow = hvr_flow()
    c, s = canonical_hello_messages(flow)
    assert c.message.message_seq == 1 and c.message.body.cookie == b"\xaa" * 32
    assert s.message.message_seq == 1
    assert c.packet_index == 2 and s.packet_index == 3


def test_retransmission_earliest_instance_wins():
    flow = flow_from(
        [
            ("c2s", datagram(client_hello(0, sid=b"\x01"))),
            ("c2s", datagram(client_hello(0, sid=b"\x02"))),
            ("s2c", datagram(server_hello(0, sid=b"\x03"))),
            ("s2c", datagram(server_hello(0, sid=b"\x04"))),
        ]
    )
    ch, sh = canonical_hellos(flow)
    assert ch.body.session_id == b"\x01" and sh.body.session_id == b"\x03"
    assert flow.packet_count == 4


def test_highest_sequence_beats_earlier_capture():
    flow = flow_from(
        [
            ("c2s", datagram(client_hello(1, b"\x01" * 8))),
            ("c2s", datagram(client_hello(0))),
            ("s2c", datagram(server_hello(0))),
        ]
    )
    ch, _ = canonical_hellos(flow)
    assert ch.message_seq == 1


def test_client_is_client_hello_sender_even_if_server_speaks_first():
    flow = flow_from([("s2c", STUN), ("c2s", datagram(client_hello(0))), ("s2c", datagram(server_hello(0)))])
    assert flow.client == (CLIENT, CPORT)
    assert flow.packets[0].direction == SERVER_TO_CLIENT
    assert not flow.packets[0].is_dtls
    assert flow.unparsed_packets == 1
    assert flow.packet_count == 3


def test_missing_server_hello_is_incomplete():
    flow = flow_from([("c2s", datagram(client_hello(0))), ("s2c", datagram(hello_verify(0)))])
    with pytest.raises(IncompleteHandshakeError):
        canonical_hellos(flow)


def test_no_client_hello_is_not_a_handshake():
    assert assemble(packets_from([("c2s", STUN), ("s2c", datagram(server_hello(0)))])) is None
    assert assemble([]) is None


def test_iter_messages_filters_direction():
    flow = hvr_flow()
    assert [fm.message.message_seq for fm in flow.iter_messages(1, CLIENT_TO_SERVER)] == [0, 1]
    assert list(flow.iter_messages(1, SERVER_TO_CLIENT)) == []


def test_packet_stats_matches_hand_computation():
    flows = [five_packet_flow(App.FACEBOOK), five_packet_flow(App.FACEBOOK), hvr_flow(App.SNOWFLAKE)]
    flows.append(flow_from([("c2s", datagram(client_hello(0))), ("s2c", datagram(server_hello(0)))], App.FACEBOOK))
    stats = packet_stats(flows)
    assert stats == {
        "Snowflake": {"flows": 1, "packets": 7, "mean": 7.0},
        "Facebook": {"flows": 3, "packets": 12, "mean": 4.0},
    }
    assert "Google" not in stats


def test_packet_stats_rejects_unlabeled():
    flow = assemble(packets_from([("c2s", datagram(client_hello(0)))]))
    with pytest.raises(ValueError):
        packet_stats([flow])


def test_export_jsonl(tmp_path):
    path = tmp_path / "flows.jsonl"
    export_flows_jsonl([hvr_flow()], path)
    (doc,) = [json.loads(line) for line in path.read_text().splitlines()]
    assert doc["app"] == "Snowflake" and doc["packet_count"] == 7
    assert [m["type"] for m in doc["messages"][:4]] == ["CLIENT_HELLO", "HELLO_VERIFY_REQUEST", "CLIENT_HELLO", "SERVER_HELLO"]
