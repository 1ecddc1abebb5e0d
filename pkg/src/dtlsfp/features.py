"""Hello-derived feature records, the one-hot schema, and the encoded design matrix."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from .codec import ClientHelloBody, ServerHelloBody
from .errors import IncompleteHandshakeError, SchemaError
from .handshake import FlowMessage, HandshakeFlow, canonical_hello_messages
from .labels import App

NUMERIC = "numeric"
ONE_HOT = "one-hot"
PRESENCE = "presence"

# (field, kind) in the order the columns are laid out: client before server per feature.
FIELD_ORDER: tuple[tuple[str, str], ...] = (
    ("client.length", NUMERIC),
    ("server.length", NUMERIC),
    ("client.message_seq", NUMERIC),
    ("server.message_seq", NUMERIC),
    ("client.fragment_offset", NUMERIC),
    ("server.fragment_offset", NUMERIC),
    ("client.dtls_version", ONE_HOT),
    ("server.dtls_version", ONE_HOT),
    ("client.sid_length", NUMERIC),
    ("server.sid_length", NUMERIC),
    ("client.cookie_length", NUMERIC),
    ("client.cipher_suites_length", NUMERIC),
    ("client.cipher_suites", ONE_HOT),
    ("client.extensions_length", NUMERIC),
    ("server.extensions_length", NUMERIC),
    ("client.extensions", PRESENCE),
    ("server.extensions", PRESENCE),
    ("server.chosen_cipher", ONE_HOT),
)
FIELD_KINDS = dict(FIELD_ORDER)


def _attr(field_name: str) -> str:
    return field_name.replace(".", "_")


@dataclass(frozen=True)
class FeatureRecord:
    client_length: int
    client_message_seq: int
    client_fragment_offset: int
    client_dtls_version: int
    client_sid_length: int
    client_cookie_length: int
    client_cipher_suites_length: int
    client_cipher_suites: tuple[int, ...]
    client_extensions_length: int
    client_extensions: tuple[str, ...]
    server_length: int
    server_message_seq: int
    server_fragment_offset: int
    server_dtls_version: int
    server_sid_length: int
    server_extensions_length: int
    server_extensions: tuple[str, ...]
    server_chosen_cipher: int
    label: App | None = None
    # Per-extension data sizes, parallel to the name lists. Not encoded; they
    # keep record-level rewrites length-consistent.
    client_extension_sizes: tuple[int, ...] = field(default=(), compare=False)
    server_extension_sizes: tuple[int, ...] = field(default=(), compare=False)

    def value(self, field_name: str):
        return getattr(self, _attr(field_name))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["label"] = self.label.value if self.label else None
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> FeatureRecord:
        kwargs = {}
        for f in fields(cls):
            v = d.get(f.name, f.default)
            if isinstance(v, list):
                v = tuple(v)
            kwargs[f.name] = v
        kwargs["label"] = App.parse(d["label"]) if d.get("label") else None
        return cls(**kwargs)


def extract(client: FlowMessage, server: FlowMessage, label: App | None = None) -> FeatureRecord:
    """Copy the hello fields verbatim from the wire.

    DTLS version is taken from the record header that carried each hello.
    """
    ch, sh = client.message, server.message
    cb, sb = ch.body, sh.body
    if not isinstance(cb, ClientHelloBody) or not isinstance(sb, ServerHelloBody):
        raise TypeError("extract needs a parsed ClientHello and ServerHello")
    return FeatureRecord(
        client_length=ch.length,
        client_message_seq=ch.message_seq,
        client_fragment_offset=ch.fragment_offset,
        client_dtls_version=client.record.header.version,
        client_sid_length=len(cb.session_id),
        client_cookie_length=len(cb.cookie),
        client_cipher_suites_length=cb.cipher_suites_length,
        client_cipher_suites=tuple(cb.cipher_suites),
        client_extensions_length=cb.extensions_total_length,
        client_extensions=tuple(e.name for e in cb.extensions or ()),
        server_length=sh.length,
        server_message_seq=sh.message_seq,
        server_fragment_offset=sh.fragment_offset,
        server_dtls_version=server.record.header.version,
        server_sid_length=len(sb.session_id),
        server_extensions_length=sb.extensions_total_length,
        server_extensions=tuple(e.name for e in sb.extensions or ()),
        server_chosen_cipher=sb.chosen_cipher_suite,
        label=label,
        client_extension_sizes=tuple(len(e.data) for e in cb.extensions or ()),
        server_extension_sizes=tuple(len(e.data) for e in sb.extensions or ()),
    )


def extract_flow(flow: HandshakeFlow) -> FeatureRecord:
    client, server = canonical_hello_messages(flow)
    return extract(client, server, flow.app)


def records_from_flows(flows: Iterable[HandshakeFlow]) -> tuple[list[FeatureRecord], int]:
    """Feature records for every complete handshake, and how many flows were excluded."""
    records, excluded = [], 0
    for flow in flows:
        try:
            records.append(extract_flow(flow))
        except IncompleteHandshakeError:
            excluded += 1
    return records, excluded


# --------------------------------------------------------------------------- schema


def format_category(field_name: str, value) -> str:
    if field_name == "client.cipher_suites":
        return ",".join(f"{s:04x}" for s in value)
    return f"0x{value:04x}"


@dataclass(frozen=True)
class Column:
    field: str
    kind: str
    value: str | None = None

    @property
    def name(self) -> str:
        return self.field if self.value is None else f"{self.field}={self.value}"


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple[Column, ...]

    def __len__(self) -> int:
        return len(self.columns)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def binary_mask(self) -> np.ndarray:
        return np.array([c.kind != NUMERIC for c in self.columns], dtype=bool)

    def encode(self, record: FeatureRecord) -> np.ndarray:
        """Encode one record. Categories unseen at build time contribute all zeros."""
        row = np.zeros(len(self.columns), dtype=np.float64)
        cache: dict[str, object] = {}
        for i, col in enumerate(self.columns):
            if col.field not in cache:
                raw = record.value(col.field)
                cache[col.field] = format_category(col.field, raw) if col.kind == ONE_HOT else raw
            v = cache[col.field]
            if col.kind == NUMERIC:
                row[i] = float(v)
            elif col.kind == ONE_HOT:
                row[i] = 1.0 if v == col.value else 0.0
            else:
                row[i] = 1.0 if col.value in v else 0.0
        return row

    def subset(self, keep: Sequence[bool] | np.ndarray) -> FeatureSchema:
        return FeatureSchema(tuple(c for c, k in zip(self.columns, keep) if k))

    def observed_subset(self, rows: np.ndarray) -> tuple[FeatureSchema, np.ndarray]:
        """Schema that :func:`build_schema` would give for the records behind ``rows``.

        Returns the reduced schema and the boolean mask of kept columns.
        """
        rows = np.asarray(rows)
        keep = ~self.binary_mask() | (rows.max(axis=0) > 0 if len(rows) else np.zeros(len(self), bool))
        return self.subset(keep), keep

    def to_json(self) -> dict:
        return {"columns": [{"name": c.name, "field": c.field, "kind": c.kind, "value": c.value} for c in self.columns]}

    @classmethod
    def from_json(cls, doc: dict) -> FeatureSchema:
        return cls(tuple(Column(c["field"], c["kind"], c.get("value")) for c in doc["columns"]))

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @classmethod
    def load(cls, path: str | os.PathLike) -> FeatureSchema:
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def build_schema(records: Iterable[FeatureRecord]) -> FeatureSchema:
    """Derive the column dictionary from observed records.

    Numeric fields get one column each; categorical fields one column per
    distinct value; extension lists one presence column per distinct name
    (client and server tracked separately). Labels are never consulted.
    """
    records = list(records)
    if not records:
        raise SchemaError("cannot build a schema from zero records")
    vocab: dict[str, set[str]] = {f: set() for f, k in FIELD_ORDER if k != NUMERIC}
    for rec in records:
        for f, kind in FIELD_ORDER:
            if kind == ONE_HOT:
                vocab[f].add(format_category(f, rec.value(f)))
            elif kind == PRESENCE:
                vocab[f].update(rec.value(f))
    columns = []
    for f, kind in FIELD_ORDER:
        if kind == NUMERIC:
            columns.append(Column(f, kind))
        else:
            columns.extend(Column(f, kind, v) for v in sorted(vocab[f]))
    return FeatureSchema(tuple(columns))


def encode(record: FeatureRecord, schema: FeatureSchema) -> np.ndarray:
    return schema.encode(record)


# --------------------------------------------------------------------------- matrix


@dataclass
class FeatureMatrix:
    X: np.ndarray
    labels: list[App]
    schema: FeatureSchema

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=np.float64).reshape(len(self.labels), len(self.schema))

    @classmethod
    def from_records(cls, records: Sequence[FeatureRecord], schema: FeatureSchema | None = None) -> FeatureMatrix:
        schema = schema or build_schema(records)
        if any(r.label is None for r in records):
            raise ValueError("every record needs a label to enter a FeatureMatrix")
        X = np.array([schema.encode(r) for r in records]) if records else np.zeros((0, len(schema)))
        return cls(X, [r.label for r in records], schema)

    @property
    def y(self) -> np.ndarray:
        return np.array([a.index for a in self.labels], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.labels)

    def to_csv(self, path: str | os.PathLike) -> None:
        """Header is the schema column names followed by ``label``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.schema.names + ["label"])
            for row, label in zip(self.X, self.labels):
                w.writerow([_fmt_num(v) for v in row] + [label.value])

    @classmethod
    def from_csv(cls, path: str | os.PathLike, schema: FeatureSchema) -> FeatureMatrix:
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            if header[:-1] != schema.names or header[-1] != "label":
                raise SchemaError("CSV header does not match schema columns")
            rows, labels = [], []
            for line in r:
                rows.append([float(v) for v in line[:-1]])
                labels.append(App.parse(line[-1]))
        return cls(np.array(rows, dtype=np.float64), labels, schema)


def _fmt_num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def save_records(records: Iterable[FeatureRecord], path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def load_records(path: str | os.PathLike) -> list[FeatureRecord]:
    with open(path) as fh:
        return [FeatureRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def schema_audit(schema: FeatureSchema, expected: int = 61) -> str:
    """Column listing grouped by field, for checking the count against ``expected``."""
    lines = [f"{len(schema)} columns (expected {expected}, diff {len(schema) - expected:+d})"]
    for f, kind in FIELD_ORDER:
        cols = [c for c in schema.columns if c.field == f]
        vals = ", ".join(c.value for c in cols if c.value is not None)
        lines.append(f"  {f:<30} {kind:<9} {len(cols):>3}" + (f"  [{vals}]" if vals else ""))
    return "\n".join(lines)
