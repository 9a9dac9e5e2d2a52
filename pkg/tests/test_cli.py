"""Tests for the command line."""
import json

import pytest

from granutest.cli import build_parser, main


@pytest.fixture
def demo_target(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    target = tmp_path / "demo"
    assert main(["demo", str(target)]) == 0
    return target


@pytest.fixture
def hybrid_run(demo_target):
    assert main(["--config", str(demo_target / "granutest.toml"), "generate"]) == 0
    return demo_target / "out"


def read_run(run_dir):
    return json.loads((run_dir / "run.json").read_text(encoding="utf-8"))


def test_demo_writes_project(demo_target):
    assert (demo_target / "granutest.toml").is_file()
    assert (demo_target / "transcript.jsonl").is_file()
    assert (demo_target / "project/src/main/java/com/example/Calculator.java").is_file()


def test_generate_hybrid(capsys, hybrid_run):
    document = read_run(hybrid_run)
    assert document["run"]["mode"] == "hybrid"
    assert document["run"]["ledger"]["total_requests"] == 8
    assert document["run"]["phase_requests"] == {"class_level": 3, "method_level": 5}
    assert document["metrics"]["total_requests"] == 8
    assert document["config"]["backend"]["kind"] == "replay"
    assert (hybrid_run / "transcript.jsonl").is_file()
    assert (hybrid_run / "units.json").is_file()
    assert (hybrid_run / "tests/com/example/CalculatorTest.java").is_file()
    assert capsys.readouterr().out.strip().endswith("run.json")


def test_generate_combined(demo_target):
    out = demo_target / "out-combined"
    args = ["--config", str(demo_target / "granutest.toml"), "generate", "--mode", "combined", "--out", str(out)]
    assert main(args) == 0
    assert read_run(out)["run"]["ledger"]["total_requests"] == 11


def test_replay_verify(hybrid_run):
    assert main(["replay-verify", str(hybrid_run)]) == 0


def test_replay_verify_detects_transcript_tampering(hybrid_run, capsys):
    transcript = hybrid_run / "transcript.jsonl"
    data = bytearray(transcript.read_bytes())
    index = data.index(b"assertEquals")
    data[index] = ord("A")
    transcript.write_bytes(bytes(data))
    assert main(["replay-verify", str(hybrid_run)]) == 1
    assert "digest" in capsys.readouterr().err


def test_replay_verify_detects_artifact_changes(hybrid_run, capsys):
    test_file = hybrid_run / "tests/com/example/CalculatorTest.java"
    test_file.write_text(test_file.read_text(encoding="utf-8") + "// edited\n", encoding="utf-8")
    assert main(["replay-verify", str(hybrid_run)]) == 1
    assert "CalculatorTest.java" in capsys.readouterr().err


def test_report(hybrid_run, demo_target, capsys):
    out = demo_target / "report"
    assert main(["report", str(hybrid_run), "--out", str(out)]) == 0
    assert {p.name for p in out.iterdir()} == {"report.json", "report.md", "report.csv"}
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["modes"] == ["hybrid"]


def test_report_of_missing_run(tmp_path):
    assert main(["report", str(tmp_path / "nothing"), "--out", str(tmp_path / "r")]) == 1


def test_units(demo_target, capsys):
    assert main(["units", "--project", str(demo_target / "project")]) == 0
    inventory = json.loads(capsys.readouterr().out)
    assert [c["id"] for c in inventory["containers"]] == ["com.example.Calculator", "com.example.Greeter"]


def test_missing_project_is_a_usage_error(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["generate", "--project", str(tmp_path / "missing")]) == 2


def test_invalid_flag_value_is_a_usage_error(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(["generate", "--workers", "0"]) == 2
    assert "limits.workers" in capsys.readouterr().err


def test_unknown_command():
    with pytest.raises(SystemExit) as err:
        build_parser().parse_args(["bogus"])
    assert err.value.code == 2
