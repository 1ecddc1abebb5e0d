"""Countermeasure rewrites for Snowflake handshakes and their before/after evaluation."""

from __future__ import annotations

import enum
from dataclasses import replace
from typing import Callable, Iterable, Sequence

from .codec import (
    EXT_RENEGOTIATION_INFO,
    EXT_SUPPORTED_GROUPS,
    ClientHelloBody,
    Extension,
    HandshakeMessage,
    HandshakeType,
    Record,
    ServerHelloBody,
    make_record,
    serialize_datagram,
    with_body,
)
from .evaluation import cross_validate, identifier_search
from .features import FeatureMatrix, FeatureRecord, records_from_flows
from .forest import ForestParams
from .handshake import CLIENT_TO_SERVER, SERVER_TO_CLIENT, FlowPacket, HandshakeFlow
from .labels import App

# Empty renegotiated_connection: a single zero length octet.
RENEGOTIATION_INFO_INITIAL = b"\x00"


class Transform(str, enum.Enum):
    DROP_OPTIONAL_CLIENT_HELLO = "DropOptionalClientHello"
    ADD_RENEGOTIATION_INFO = "AddRenegotiationInfo"
    REMOVE_SUPPORTED_GROUPS = "RemoveSupportedGroups"

    @classmethod
    def parse(cls, value: str | Transform) -> Transform:
        if isinstance(value, Transform):
            return value
        key = value.strip().replace("-", "").replace("_", "").lower()
        for t in cls:
            if t.value.lower() == key or t.name.replace("_", "").lower() == key:
                return t
        raise ValueError(f"unknown transform {value!r}; choose from {[t.value for t in cls]}")


ALL_TRANSFORMS = tuple(Transform)


# ---------------------------------------------------------------------------- flow level


def _rewrite(flow: HandshakeFlow, fn: Callable[[str, HandshakeMessage], HandshakeMessage | None]) -> HandshakeFlow:
    """Apply ``fn`` to every decoded handshake message; ``None`` drops it.

    Records left without messages and packets left without records are
    removed. Untouched packets keep their original bytes.
    """
    packets = []
    for pkt in flow.packets:
        if not pkt.records:
            packets.append(pkt)
            continue
        changed = False
        records: list[Record] = []
        for rec in pkt.records:
            if not rec.messages:
                records.append(rec)
                continue
            msgs = []
            for m in rec.messages:
                new = fn(pkt.direction, m)
                changed |= new is not m
                if new is not None:
                    msgs.append(new)
            if not msgs:
                continue
            if msgs == list(rec.messages):
                records.append(rec)
            else:
                h = rec.header
                records.append(make_record(msgs, content_type=h.content_type, version=h.version, epoch=h.epoch,
                                           sequence_number=h.sequence_number))
        if not changed:
            packets.append(pkt)
        elif records:
            packets.append(FlowPacket(pkt.direction, pkt.ts_sec, pkt.ts_usec, serialize_datagram(records), tuple(records)))
    return HandshakeFlow(flow.key, flow.client, tuple(packets), flow.label, flow.unparsed_packets)


def drop_optional_client_hello(flow: HandshakeFlow) -> HandshakeFlow:
    """Remove the cookie exchange so the handshake starts at message_seq 0.

    Pre-cookie ClientHellos (and their retransmissions) and every
    HelloVerifyRequest are removed, the surviving ClientHello loses its
    cookie, and all remaining plaintext handshake messages are renumbered.
    """
    hvr = list(flow.iter_messages(HandshakeType.HELLO_VERIFY_REQUEST, SERVER_TO_CLIENT))
    if not hvr:
        return flow
    hellos = [fm.message.message_seq for fm in flow.iter_messages(HandshakeType.CLIENT_HELLO, CLIENT_TO_SERVER)]
    shift = max(hellos) if hellos else 0

    def fn(direction: str, m: HandshakeMessage) -> HandshakeMessage | None:
        if m.msg_type == HandshakeType.HELLO_VERIFY_REQUEST:
            return None
        if m.msg_type == HandshakeType.CLIENT_HELLO and direction == CLIENT_TO_SERVER and m.message_seq < shift:
            return None
        new = m
        if m.message_seq >= shift and shift:
            new = replace(new, message_seq=m.message_seq - shift)
        if isinstance(new.body, ClientHelloBody) and new.body.cookie:
            new = with_body(new, replace(new.body, cookie=b""))
        return new

    return _rewrite(flow, fn)


def _edit_server_extensions(flow: HandshakeFlow, edit: Callable[[tuple[Extension, ...]], tuple[Extension, ...]]) -> HandshakeFlow:
    def fn(direction: str, m: HandshakeMessage) -> HandshakeMessage:
        if direction != SERVER_TO_CLIENT or not isinstance(m.body, ServerHelloBody):
            return m
        old = m.body.extensions or ()
        new = edit(old)
        if new == old:
            return m
        return with_body(m, replace(m.body, extensions=new))

    return _rewrite(flow, fn)


def add_renegotiation_info(flow: HandshakeFlow) -> HandshakeFlow:
    def edit(exts):
        if any(e.type == EXT_RENEGOTIATION_INFO for e in exts):
            return exts
        return tuple(exts) + (Extension(EXT_RENEGOTIATION_INFO, RENEGOTIATION_INFO_INITIAL),)

    return _edit_server_extensions(flow, edit)


def remove_supported_groups(flow: HandshakeFlow) -> HandshakeFlow:
    return _edit_server_extensions(flow, lambda exts: tuple(e for e in exts if e.type != EXT_SUPPORTED_GROUPS))


# ---------------------------------------------------------------------------- record level


def _record_drop_optional(r: FeatureRecord) -> FeatureRecord:
    if r.client_cookie_length == 0 and r.server_message_seq == 0:
        return r
    shift = r.client_message_seq
    return replace(
        r,
        client_length=r.client_length - r.client_cookie_length,
        client_cookie_length=0,
        client_message_seq=r.client_message_seq - shift,
        server_message_seq=max(r.server_message_seq - shift, 0),
    )


def _record_add_reneg(r: FeatureRecord) -> FeatureRecord:
    if "renegotiation_info" in r.server_extensions:
        return r
    grow = 4 + len(RENEGOTIATION_INFO_INITIAL)
    return replace(
        r,
        server_extensions=r.server_extensions + ("renegotiation_info",),
        server_extension_sizes=r.server_extension_sizes + (len(RENEGOTIATION_INFO_INITIAL),),
        server_extensions_length=r.server_extensions_length + grow,
        server_length=r.server_length + grow,
    )


def _record_remove_groups(r: FeatureRecord) -> FeatureRecord:
    if "supported_groups" not in r.server_extensions:
        return r
    sizes = r.server_extension_sizes or (0,) * len(r.server_extensions)
    keep = [(n, s) for n, s in zip(r.server_extensions, sizes) if n != "supported_groups"]
    shrink = sum(4 + s for n, s in zip(r.server_extensions, sizes) if n == "supported_groups")
    return replace(
        r,
        server_extensions=tuple(n for n, _ in keep),
        server_extension_sizes=tuple(s for _, s in keep),
        server_extensions_length=r.server_extensions_length - shrink,
        server_length=r.server_length - shrink,
    )


_FLOW_FNS = {
    Transform.DROP_OPTIONAL_CLIENT_HELLO: drop_optional_client_hello,
    Transform.ADD_RENEGOTIATION_INFO: add_renegotiation_info,
    Transform.REMOVE_SUPPORTED_GROUPS: remove_supported_groups,
}
_RECORD_FNS = {
    Transform.DROP_OPTIONAL_CLIENT_HELLO: _record_drop_optional,
    Transform.ADD_RENEGOTIATION_INFO: _record_add_reneg,
    Transform.REMOVE_SUPPORTED_GROUPS: _record_remove_groups,
}


def apply_transform(value: HandshakeFlow | FeatureRecord, transform: Transform | str):
    """Apply one countermeasure to a flow or a feature record. Every transform is idempotent."""
    t = Transform.parse(transform)
    if isinstance(value, HandshakeFlow):
        return _FLOW_FNS[t](value)
    if isinstance(value, FeatureRecord):
        return _RECORD_FNS[t](value)
    raise TypeError(f"cannot transform {type(value).__name__}")


def apply_transforms(value, transforms: Iterable[Transform | str]):
    for t in transforms:
        value = apply_transform(value, t)
    return value


# ---------------------------------------------------------------------------- evaluation


def transform_dataset(flows: Sequence[HandshakeFlow], transforms: Sequence[Transform | str], target: App = App.SNOWFLAKE) -> list[HandshakeFlow]:
    """Rewrite ``target``-labeled flows; every other flow is passed through untouched."""
    transforms = [Transform.parse(t) for t in transforms]
    return [apply_transforms(f, transforms) if f.app == target else f for f in flows]


def evaluate_countermeasures(
    flows: Sequence[HandshakeFlow],
    transforms: Sequence[Transform | str],
    k: int = 5,
    params: ForestParams | None = None,
    seed: int = 42,
    jobs: int = 1,
    tolerance: float = 0.0,
) -> dict:
    transforms = [Transform.parse(t) for t in transforms]

    def run(dataset):
        records, excluded = records_from_flows(dataset)
        matrix = FeatureMatrix.from_records(records)
        report = cross_validate(matrix, k=k, params=params, seed=seed, jobs=jobs)
        ids = identifier_search(matrix, tolerance=tolerance)
        return report, ids, excluded

    before, ids_before, excl_before = run(flows)
    after, ids_after, excl_after = run(transform_dataset(flows, transforms))
    flagged_before = ids_before.flagged
    flagged_after = ids_after.flagged
    sf = App.SNOWFLAKE.value
    return {
        "transforms": [t.value for t in transforms],
        "before": before.to_json(),
        "after": after.to_json(),
        "identifiers_before": ids_before.to_json(),
        "identifiers_after": ids_after.to_json(),
        "removed_identifiers": [f for f in flagged_before if f not in flagged_after],
        "remaining_identifiers": flagged_after,
        "accuracy_delta": after.accuracy - before.accuracy,
        "snowflake_recall_before": before.per_class[sf]["recall"],
        "snowflake_recall_after": after.per_class[sf]["recall"],
        "snowflake_recall_delta": after.per_class[sf]["recall"] - before.per_class[sf]["recall"],
        "excluded_flows": {"before": excl_before, "after": excl_after},
    }
