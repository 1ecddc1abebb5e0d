from __future__ import annotations

import json
import subprocess
import sys

import pytest

from dtlsfp.cli import main
from dtlsfp.forest import RandomForestModel


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--profiles", "default", "--count", "10", "--seed", "3", "--out", str(out / "corpus")]) == 0
    return out


def _run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_ingest_json(corpus, capsys):
    code, out, _ = _run(capsys, ["ingest", "--manifest", str(corpus / "corpus/manifest.csv"), "--json", "--no-timestamps"])
    assert code == 0
    doc = json.loads(out)
    assert doc["totals"] == {"Snowflake": 10, "Facebook": 20, "Google": 20, "Discord": 20}
    assert doc["command"] == "ingest" and "generated_at" not in doc


def test_timestamps_present_by_default(corpus, capsys):
    _, out, _ = _run(capsys, ["stats", "--manifest", str(corpus / "corpus/manifest.csv"), "--json"])
    assert "generated_at" in json.loads(out)


def test_extract_then_evaluate_reproducible(corpus, capsys, monkeypatch):
    feat = corpus / "feat"
    code, out, _ = _run(capsys, ["extract", "--manifest", str(corpus / "corpus/manifest.csv"), "--out", str(feat)])
    assert code == 0
    assert "expected 61" in out  # synthetic schema is narrower, so the audit is printed
    for name in ("features.csv", "schema.json", "records.jsonl", "flows.jsonl", "extract.json"):
        assert (feat / name).exists()

    monkeypatch.setenv("DTLSFP_TREES", "7")
    reports = []
    for jobs in ("1", "3"):
        out_dir = corpus / f"eval{jobs}"
        code, _, _ = _run(capsys, ["evaluate", "--features", str(feat), "--jobs", jobs, "--no-timestamps", "--out", str(out_dir)])
        assert code == 0
        reports.append((out_dir / "evaluate.json").read_bytes())
    assert reports[0] == reports[1]
    doc = json.loads(reports[0])
    assert doc["report"]["params"]["n_trees"] == 7
    assert doc["report"]["micro_f1"] == doc["report"]["accuracy"]


def test_flag_beats_env_beats_config(corpus, capsys, monkeypatch, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"trees": 3, "folds": 2, "seed": 9}))
    monkeypatch.setenv("DTLSFP_TREES", "4")
    args = ["evaluate", "--manifest", str(corpus / "corpus/manifest.csv"), "--config", str(cfg), "--json", "--no-timestamps"]
    _, out, _ = _run(capsys, args)
    rep = json.loads(out)["report"]
    assert (rep["params"]["n_trees"], rep["k"], rep["seed"]) == (4, 2, 9)
    _, out, _ = _run(capsys, args + ["--trees", "5"])
    assert json.loads(out)["report"]["params"]["n_trees"] == 5


def test_save_model(corpus, capsys, tmp_path):
    path = tmp_path / "model.json"
    code, _, _ = _run(capsys, ["evaluate", "--manifest", str(corpus / "corpus/manifest.csv"), "--trees", "3",
                               "--save-model", str(path)])
    assert code == 0
    model = RandomForestModel.load(path)
    assert model.classes == ["Snowflake", "Facebook", "Google", "Discord"]
    assert len(model.trees) == 3 and model.n_features == len(model.schema["columns"])


def test_identifiers_and_transform(corpus, capsys):
    manifest = str(corpus / "corpus/manifest.csv")
    code, out, _ = _run(capsys, ["identifiers", "--manifest", manifest, "--trees", "3", "--top", "4"])
    assert code == 0
    assert out.splitlines()[1].startswith("Server Message Sequence: 1")
    code, out, _ = _run(capsys, ["transform", "--manifest", manifest, "--trees", "3", "--json", "--no-timestamps",
                                 "--transforms", "AddRenegotiationInfo,RemoveSupportedGroups"])
    doc = json.loads(out)
    assert doc["transforms"] == ["AddRenegotiationInfo", "RemoveSupportedGroups"]
    assert "server.extensions=supported_groups" in doc["removed_identifiers"]


def test_errors_are_json_on_stderr(tmp_path, capsys):
    code, _, err = _run(capsys, ["ingest", "--manifest", str(tmp_path / "missing.csv")])
    assert code == 1
    assert json.loads(err)["error"] == "FileNotFoundError"
    code, _, err = _run(capsys, ["evaluate"])
    assert code == 1 and "manifest" in json.loads(err)["message"]
    code, _, err = _run(capsys, ["transform", "--manifest", "x.csv", "--transforms", "Teleport"])
    assert code == 1 and "Teleport" in json.loads(err)["message"]


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["ingest", "--bogus"])
    assert exc.value.code == 2
    assert json.loads(capsys.readouterr().err)["error"] == "UsageError"


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dtlsfp", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("dtlsfp ")
