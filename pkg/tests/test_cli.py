import json
import subprocess
import sys

import pytest

from conftest import TINY
from vidfuse.cli import main


def test_validate_fixture(capsys):
    assert main(["validate", "--corpus", str(TINY / "corpus" / "manifest.json")]) == 0
    assert "0 violation(s)" in capsys.readouterr().out
    assert main(["validate", "--config", str(TINY / "config.json")]) == 0


def test_validate_reports_dangling_judgment(tiny, capsys):
    path = tiny / "corpus" / "judgments.jsonl"
    with open(path, "a") as fh:
        fh.write(json.dumps({"query_id": "q_fire", "relevant": ["v_missing"]}) + "\n")
    assert main(["validate", "--corpus", str(tiny / "corpus" / "manifest.json")]) == 1
    assert "v_missing" in capsys.readouterr().out


def test_missing_config_fails_cleanly(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 1
    assert "error" in capsys.readouterr().err


def test_stage_subcommands_write_outputs(tiny, tmp_path):
    out = tmp_path / "stages"
    base = ["--config", str(tiny / "config.json"), "--output-dir", str(out)]
    for cmd in ("decompose", "transcribe", "describe", "score"):
        assert main([cmd, *base]) == 0
    assert main(["fuse", *base, "--fusion", "rrf", "--drop=-video"]) == 0
    for name in ("decompositions.jsonl", "transcripts.jsonl", "descriptions.jsonl", "rankings.jsonl"):
        assert (out / name).exists(), name
    assert len(list((out / "matrices").glob("*.tsv"))) == 2
    first = json.loads((out / "rankings.jsonl").read_text().splitlines()[0])
    assert set(first) == {"query_id", "ranking", "scores"}


def test_evaluate_subcommand(tiny, tmp_path, capsys):
    rankings = tmp_path / "r.jsonl"
    rankings.write_text(
        json.dumps({"query_id": "q_fire", "ranking": ["v_cook", "v_fire", "v_parade"]}) + "\n"
        + json.dumps({"query_id": "q_parade", "ranking": ["v_parade", "v_fire", "v_cook"]}) + "\n"
    )
    report = tmp_path / "report.json"
    corpus = tiny / "corpus"
    assert main(["evaluate", "--rankings", str(rankings), "--judgments", str(corpus / "judgments.jsonl"),
                 "--queries", str(corpus / "queries.jsonl"), "--group-by", "category",
                 "--metric-ks", "1,5", "--output", str(report)]) == 0
    data = json.loads(report.read_text())
    assert data["metrics"]["R@1"] == 0.5 and data["metrics"]["MRR"] == 0.75
    assert data["clamped_ks"] == {"@5": 3}
    assert set(data["groups"]) == {"disaster", "sports"}
    assert "R@1" in capsys.readouterr().out


def test_replay_miss_exit_code(tiny, tmp_path, capsys):
    code = main(["run", "--config", str(tiny / "config.json"), "--output-dir", str(tmp_path / "o"),
                 "--frame_count", "4"])
    assert code == 3
    assert "replay miss" in capsys.readouterr().err


def test_bad_override_is_rejected(tiny):
    with pytest.raises(SystemExit):
        main(["run", "--config", str(tiny / "config.json"), "--use_asr", "maybe"])


def test_module_entry_point(tiny, tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "vidfuse", "run", "--config", str(tiny / "config.json"),
         "--output-dir", str(tmp_path / "m"), "--use-asr", "false"],
        capture_output=True, text=True, timeout=60,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.splitlines()[0].startswith("group")
    assert (tmp_path / "m" / "report.json").read_bytes() == (TINY / "golden" / "noasr" / "report.json").read_bytes()
