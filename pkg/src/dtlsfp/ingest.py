"""Manifest-driven dataset ingestion and per-class handshake accounting."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import DtlsfpError
from .handshake import HandshakeFlow, assemble
from .labels import App, Browser
from .pcap import group_flows, read_capture

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("path", "app", "browser")


@dataclass(frozen=True)
class LabeledCapture:
    path: Path
    app: App
    browser: Browser


def read_manifest(path: str | os.PathLike) -> list[LabeledCapture]:
    """Load a ``path,app,browser`` CSV. Relative paths resolve against the manifest's directory."""
    path = Path(path)
    base = path.parent
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DtlsfpError(f"manifest {path} lacks columns {sorted(missing)}")
        for row in reader:
            p = Path(row["path"].strip())
            entries.append(LabeledCapture(p if p.is_absolute() else base / p, App.parse(row["app"]), Browser.parse(row["browser"])))
    return entries


def write_manifest(path: str | os.PathLike, entries: Sequence[LabeledCapture]) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for e in entries:
            p = e.path
            try:
                p = p.relative_to(path.parent)
            except ValueError:
                pass
            writer.writerow([p.as_posix(), e.app.value, e.browser.value])


@dataclass
class FileResult:
    path: str
    flows: list[HandshakeFlow] = field(default_factory=list)
    udp_packets: int = 0
    skipped_packets: int = 0
    non_handshake_flows: int = 0
    truncated: bool = False
    error: str | None = None


def load_capture(entry: LabeledCapture) -> FileResult:
    result = FileResult(str(entry.path))
    try:
        capture = read_capture(entry.path)
    except (OSError, DtlsfpError) as exc:
        result.error = f"{type(exc).__name__}: {exc}"
        return result
    result.udp_packets = len(capture.packets)
    result.skipped_packets = capture.skipped
    result.truncated = capture.truncated
    for packets in group_flows(capture.packets).values():
        flow = assemble(packets, (entry.app, entry.browser))
        if flow is None:
            result.non_handshake_flows += 1
        else:
            result.flows.append(flow)
    return result


def load_files(manifest: Sequence[LabeledCapture], jobs: int = 1) -> list[FileResult]:
    if jobs > 1 and len(manifest) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(load_capture, manifest))
    return [load_capture(e) for e in manifest]


def cell_key(app: App, browser: Browser) -> str:
    return f"{app.value}/{browser.value}"


def accounting_report(manifest: Sequence[LabeledCapture], results: Sequence[FileResult]) -> dict:
    cells = {cell_key(a, b): 0 for a in App for b in Browser}
    errors = []
    for entry, res in zip(manifest, results):
        if res.error:
            errors.append({"path": res.path, "error": res.error})
            continue
        cells[cell_key(entry.app, entry.browser)] += len(res.flows)
    totals = {a.value: sum(cells[cell_key(a, b)] for b in Browser) for a in App}
    return {
        "cells": cells,
        "totals": totals,
        "files": len(manifest),
        "errors": errors,
        "udp_packets": sum(r.udp_packets for r in results),
        "skipped_packets": sum(r.skipped_packets for r in results),
        "non_handshake_flows": sum(r.non_handshake_flows for r in results),
        "truncated_files": [r.path for r in results if r.truncated],
    }


def ingest_dataset(manifest: Sequence[LabeledCapture], jobs: int = 1) -> dict:
    """Count handshake flows per (app, browser) cell; unreadable files are reported, not fatal."""
    return accounting_report(manifest, load_files(manifest, jobs))


def load_dataset(manifest: Sequence[LabeledCapture], jobs: int = 1) -> tuple[list[HandshakeFlow], dict]:
    """All labeled handshake flows of a manifest, plus its accounting report."""
    results = load_files(manifest, jobs)
    flows = [f for r in results for f in r.flows]
    return flows, accounting_report(manifest, results)


def render_accounting(report: dict) -> str:
    apps = [a.value for a in App]
    width = max(len(a) for a in apps) + 2
    lines = ["".ljust(10) + "".join(a.rjust(width) for a in apps)]
    for b in Browser:
        lines.append(b.value.ljust(10) + "".join(str(report["cells"][f"{a}/{b.value}"]).rjust(width) for a in apps))
    lines.append("Total".ljust(10) + "".join(str(report["totals"][a]).rjust(width) for a in apps))
    if report["errors"]:
        lines.append(f"{len(report['errors'])} unreadable file(s)")
    return "\n".join(lines)
