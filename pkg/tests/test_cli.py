import json
import subprocess
import sys

import pytest

from fpsnippets import pipeline as pl
from fpsnippets.cli import build_config, build_parser, main
from fpsnippets.errors import InvariantError


def _args(fixture_dir, out, *extra):
    return ["--input", str(fixture_dir / "calls.jsonl"), "--labels", f"file:{fixture_dir / 'seeds.txt'}",
            "--reference", f"file:{fixture_dir / 'planted.txt'}", "--distance-thresholds", "0.02,0.1,0.3,0.5",
            "--out", str(out), *extra]


def test_run_all_then_status(tmp_path, fixture_dir, capsys):
    assert main(["-v", "run", "all", *_args(fixture_dir, tmp_path / "o")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "ingest\tran" and len(lines) == len(pl.STAGES)
    assert main(["run", "score", *_args(fixture_dir, tmp_path / "o")]) == 0
    assert capsys.readouterr().out == "score\tup-to-date\n"
    assert main(["status", *_args(fixture_dir, tmp_path / "o", "--prune-threshold", "0.3")]) == 0
    status = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    assert status["ingest"] == "current" and status["prune"] == "stale"


def test_exit_codes(tmp_path, fixture_dir, monkeypatch):
    assert main(["run", "score", *_args(fixture_dir, tmp_path / "o")]) == 1
    assert main(["run", "ingest", "--input", str(tmp_path / "absent.jsonl"), "--out", str(tmp_path / "o")]) == 1
    assert main(["run", "ingest", "--labels", "guess", "--out", str(tmp_path / "o")]) == 1

    def invariant(pipe, out):
        raise InvariantError("row without calls")

    monkeypatch.setitem(pl._RUNNERS, "ingest", invariant)
    assert main(["run", "ingest", *_args(fixture_dir, tmp_path / "o")]) == 3

    def crash(pipe, out):
        raise ZeroDivisionError

    monkeypatch.setitem(pl._RUNNERS, "ingest", crash)
    assert main(["run", "ingest", "--force", *_args(fixture_dir, tmp_path / "o")]) == 3
    with pytest.raises(SystemExit):
        main(["run", "everything"])


def test_flags_override_config_file(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"prune_threshold": 0.4, "metric": "euclidean", "workers": 2}))
    args = build_parser().parse_args(["run", "all", "--config", str(tmp_path / "c.json"), "--metric", "cityblock",
                                      "--keep-www", "--score-thresholds", "9,3"])
    c = build_config(args)
    assert (c.prune_threshold, c.metric, c.workers, c.strip_www, c.score_thresholds) == (0.4, "cityblock", 2, False,
                                                                                        [3, 9])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["run", "all", "--distance-thresholds", "0.1,x"])


def test_fixture_command_and_console_script(tmp_path):
    assert main(["fixture", str(tmp_path / "fx"), "--seed", "3"]) == 0
    assert (tmp_path / "fx" / "calls.jsonl").stat().st_size > 0
    done = subprocess.run([sys.executable, "-m", "fpsnippets.cli", "--help"], capture_output=True, text=True)
    assert done.returncode == 0 and "fixture" in done.stdout
