"""Command-line front end: ``dtlsfp <subcommand> [options]``.

Every option can also come from an environment variable named ``DTLSFP_``
plus the upper-cased flag (``--max-features`` -> ``DTLSFP_MAX_FEATURES``), or
from a JSON ``--config`` file. Precedence: flag, environment, config, default.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import __version__
from .errors import DtlsfpError
from .evaluation import cross_validate, identifier_search, importance_ranking
from .features import FeatureMatrix, FeatureSchema, build_schema, records_from_flows, save_records, schema_audit
from .forest import ForestParams, fit
from .handshake import export_flows_jsonl, packet_stats
from .ingest import ingest_dataset, load_dataset, read_manifest, render_accounting
from .mimicry import ALL_TRANSFORMS, Transform, evaluate_countermeasures
from .synth import builtin_profiles, generate_corpus, load_profiles

ENV_PREFIX = "DTLSFP_"
EXPECTED_COLUMNS = 61
REFERENCE_IDENTIFIERS = ("Server Message Sequence: 1", "server.extensions=renegotiation_info", "server.extensions=supported_groups")


@dataclass
class RunConfig:
    manifest: str | None = None
    features: str | None = None
    out: str | None = None
    seed: int = 42
    folds: int = 5
    trees: int = 100
    max_features: int | None = None
    min_samples_split: int = 2
    max_depth: int | None = None
    transforms: list[str] = field(default_factory=lambda: [t.value for t in ALL_TRANSFORMS])
    tolerance: float = 0.0
    jobs: int = 1

    @property
    def forest(self) -> ForestParams:
        return ForestParams(self.trees, self.max_features, self.min_samples_split, self.max_depth)


class _JsonErrorParser(argparse.ArgumentParser):
    def error(self, message: str):
        _emit_error("UsageError", message)
        sys.exit(2)


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def _int_or_none(v: str) -> int | None:
    return None if v in ("", "none", "None") else int(v)


_CASTS = {
    "seed": int, "folds": int, "trees": int, "jobs": int, "min_samples_split": int,
    "max_features": _int_or_none, "max_depth": _int_or_none, "tolerance": float,
    "transforms": lambda v: [t for t in (v.split(",") if isinstance(v, str) else v) if t],
}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        with open(args.config) as fh:
            doc = json.load(fh)
        for f in fields(RunConfig):
            if f.name in doc:
                setattr(cfg, f.name, doc[f.name])
    for f in fields(RunConfig):
        env = os.environ.get(ENV_PREFIX + f.name.upper())
        if env is not None:
            setattr(cfg, f.name, _CASTS.get(f.name, str)(env))
        flag = getattr(args, f.name, None)
        if flag is not None:
            setattr(cfg, f.name, _CASTS[f.name](flag) if f.name == "transforms" else flag)
    cfg.transforms = [Transform.parse(t).value for t in cfg.transforms]
    return cfg


# ---------------------------------------------------------------------------- helpers


def _load_flows(cfg: RunConfig):
    if not cfg.manifest:
        raise DtlsfpError("a manifest is required (--manifest or DTLSFP_MANIFEST)")
    return load_dataset(read_manifest(cfg.manifest), jobs=cfg.jobs)


def _load_matrix(cfg: RunConfig) -> tuple[FeatureMatrix, dict]:
    if cfg.features:
        d = Path(cfg.features)
        schema = FeatureSchema.load(d / "schema.json")
        return FeatureMatrix.from_csv(d / "features.csv", schema), {"source": str(d)}
    flows, report = _load_flows(cfg)
    records, excluded = records_from_flows(flows)
    return FeatureMatrix.from_records(records), {"source": cfg.manifest, "excluded_incomplete": excluded}


def _dump(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _finish(command: str, doc: dict, table: str, cfg: RunConfig, args: argparse.Namespace) -> None:
    doc = dict(doc)
    doc["command"] = command
    if not args.no_timestamps:
        doc["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    text = _dump(doc)
    if cfg.out:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        (Path(cfg.out) / f"{command}.json").write_text(text)
    sys.stdout.write(text if args.json else table + "\n")


# ---------------------------------------------------------------------------- commands


def cmd_ingest(cfg: RunConfig, args) -> None:
    if not cfg.manifest:
        raise DtlsfpError("a manifest is required (--manifest or DTLSFP_MANIFEST)")
    report = ingest_dataset(read_manifest(cfg.manifest), jobs=cfg.jobs)
    _finish("ingest", report, render_accounting(report), cfg, args)


def cmd_stats(cfg: RunConfig, args) -> None:
    flows, _ = _load_flows(cfg)
    stats = packet_stats(flows)
    table = "\n".join(f"{app:<10} {s['mean']:>7.2f}  ({s['flows']} handshakes)" for app, s in stats.items())
    _finish("stats", {"mean_packets": stats}, table, cfg, args)


def cmd_extract(cfg: RunConfig, args) -> None:
    if not cfg.out:
        raise DtlsfpError("extract needs --out")
    flows, report = _load_flows(cfg)
    records, excluded = records_from_flows(flows)
    schema = build_schema(records)
    matrix = FeatureMatrix.from_records(records, schema)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    matrix.to_csv(out / "features.csv")
    schema.save(out / "schema.json")
    save_records(records, out / "records.jsonl")
    export_flows_jsonl(flows, out / "flows.jsonl")
    audit = schema_audit(schema, EXPECTED_COLUMNS)
    doc = {
        "rows": len(matrix),
        "columns": len(schema),
        "expected_columns": EXPECTED_COLUMNS,
        "column_names": schema.names,
        "excluded_incomplete": excluded,
    }
    table = f"{len(matrix)} handshakes x {len(schema)} columns ({excluded} incomplete excluded)"
    if len(schema) != EXPECTED_COLUMNS:
        table += "\n" + audit
    _finish("extract", doc, table, cfg, args)


def cmd_evaluate(cfg: RunConfig, args) -> None:
    matrix, source = _load_matrix(cfg)
    report = cross_validate(matrix, k=cfg.folds, params=cfg.forest, seed=cfg.seed, jobs=cfg.jobs)
    if cfg.out:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        report.confusion_csv(Path(cfg.out) / "confusion.csv")
    if args.save_model:
        model = fit(matrix.X, matrix.y, cfg.forest, cfg.seed, n_classes=len(report.classes), jobs=cfg.jobs)
        model.classes = report.classes
        model.schema = matrix.schema.to_json()
        model.save(args.save_model)
    _finish("evaluate", {"report": report.to_json(), "input": source}, report.render(), cfg, args)


def cmd_identifiers(cfg: RunConfig, args) -> None:
    matrix, source = _load_matrix(cfg)
    ids = identifier_search(matrix, tolerance=cfg.tolerance)
    report = cross_validate(matrix, k=cfg.folds, params=cfg.forest, seed=cfg.seed, jobs=cfg.jobs)
    ranking = importance_ranking(report, args.top)
    shown = [f for f in REFERENCE_IDENTIFIERS if f in ids.presence] + [f for f in ids.flagged if f not in REFERENCE_IDENTIFIERS]
    table = ids.render(shown) + "\ntop importances:\n" + "\n".join(f"  {n:<45} {v:.4f}" for n, v in ranking)
    doc = {"identifiers": ids.to_json(), "importance_ranking": [{"column": n, "importance": v} for n, v in ranking], "input": source}
    _finish("identifiers", doc, table, cfg, args)


def cmd_transform(cfg: RunConfig, args) -> None:
    flows, _ = _load_flows(cfg)
    result = evaluate_countermeasures(flows, cfg.transforms, k=cfg.folds, params=cfg.forest, seed=cfg.seed,
                                      jobs=cfg.jobs, tolerance=cfg.tolerance)
    table = (
        f"transforms: {', '.join(result['transforms']) or 'none'}\n"
        f"accuracy {result['before']['accuracy']:.4f} -> {result['after']['accuracy']:.4f}\n"
        f"Snowflake recall {result['snowflake_recall_before']:.4f} -> {result['snowflake_recall_after']:.4f}\n"
        f"removed identifiers: {', '.join(result['removed_identifiers']) or 'none'}\n"
        f"remaining identifiers: {', '.join(result['remaining_identifiers']) or 'none'}"
    )
    _finish("transform", result, table, cfg, args)


def cmd_synth(cfg: RunConfig, args) -> None:
    if not cfg.out:
        raise DtlsfpError("synth needs --out")
    src = args.profiles
    profiles = load_profiles(src) if os.path.exists(src) else builtin_profiles(src)
    manifest, entries = generate_corpus(profiles, args.count, cfg.seed, cfg.out)
    doc = {"manifest": str(manifest), "captures": [str(e.path) for e in entries], "count": args.count, "seed": cfg.seed}
    _finish("synth", doc, f"wrote {len(entries)} captures x {args.count} handshakes; manifest {manifest}", cfg, args)


COMMANDS = {
    "ingest": cmd_ingest,
    "stats": cmd_stats,
    "extract": cmd_extract,
    "evaluate": cmd_evaluate,
    "identifiers": cmd_identifiers,
    "transform": cmd_transform,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="worker processes (results do not depend on it)")
    common.add_argument("--no-timestamps", action="store_true", help="omit generated_at for byte-reproducible JSON")
    common.add_argument("--json", action="store_true", help="print JSON instead of a table")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--manifest", help="CSV with columns path,app,browser")

    matrix = argparse.ArgumentParser(add_help=False)
    matrix.add_argument("--features", help="directory written by `extract` (features.csv + schema.json)")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--folds", type=int)
    model.add_argument("--trees", type=int)
    model.add_argument("--max-features", dest="max_features", type=int)
    model.add_argument("--max-depth", dest="max_depth", type=int)
    model.add_argument("--min-samples-split", dest="min_samples_split", type=int)

    tol = argparse.ArgumentParser(add_help=False)
    tol.add_argument("--tolerance", type=float, help="identifier tolerance in percentage points")

    parser = _JsonErrorParser(prog="dtlsfp", description="DTLS handshake fingerprinting toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_JsonErrorParser)
    sub.add_parser("ingest", parents=[common, data], help="count handshakes per app/browser")
    sub.add_parser("stats", parents=[common, data], help="mean packets per handshake")
    sub.add_parser("extract", parents=[common, data], help="feature CSV + schema")
    ev = sub.add_parser("evaluate", parents=[common, data, matrix, model], help="k-fold cross-validation")
    ev.add_argument("--save-model", help="also fit on all rows and save the model JSON here")
    ids = sub.add_parser("identifiers", parents=[common, data, matrix, model, tol], help="class-unique features")
    ids.add_argument("--top", type=int, default=10)
    tr = sub.add_parser("transform", parents=[common, data, model, tol], help="countermeasure before/after")
    tr.add_argument("--transforms", help="comma-separated: " + ",".join(t.value for t in Transform))
    sy = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    sy.add_argument("--profiles", default="default", help="profile JSON path, or builtin 'default'/'planted'")
    sy.add_argument("--count", type=int, default=100)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg, args)
    except (DtlsfpError, OSError, ValueError, KeyError) as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
