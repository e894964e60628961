import csv
import json

import numpy as np
import pytest

from graphau.cli import parse_range, run, warn_off_grid, DEFAULTS
from graphau.synthetic import two_community


@pytest.fixture
def data_file(tmp_path):
    pairs = two_community(n_users=60, n_items=60, n_interactions=400, topics_per_community=2, seed=1)
    p = tmp_path / "interactions.tsv"
    p.write_text("".join(f"user{u}\titem{i}\t1\n" for u, i in pairs))
    return p


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_help_exits_zero(capsys):
    assert run(["train", "--help"]) == 0
    assert "--alpha" in capsys.readouterr().out


def test_missing_dataset_is_config_error(tmp_path, capsys):
    code = run(["train", "--data", str(tmp_path / "missing.tsv"), "--out-dir", str(tmp_path / "o")])
    assert code == 2
    assert _err(capsys)["error"] == "config"


def test_no_dataset_is_config_error(tmp_path, capsys):
    assert run(["train", "--out-dir", str(tmp_path)]) == 2
    assert _err(capsys)["error"] == "config"


def test_unknown_flag_and_bad_enum(tmp_path, capsys):
    assert run(["train", "--bogus"]) == 2
    assert _err(capsys)["error"] == "config"
    assert run(["train", "--objective", "nope"]) == 2
    assert _err(capsys)["error"] == "config"


def test_malformed_data_is_data_error(tmp_path, capsys):
    p = tmp_path / "bad.tsv"
    p.write_text("a\tb\nonlyone\n")
    assert run(["preprocess", "--data", str(p), "--out-dir", str(tmp_path / "o")]) == 3
    err = _err(capsys)
    assert err["error"] == "data" and "line 2" in err["message"]


def test_preprocess_writes_manifest(tmp_path, data_file):
    out = tmp_path / "o"
    assert run(["preprocess", "--data", str(data_file), "--out-dir", str(out), "--seed", "3"]) == 0
    for name in ("users.tsv", "items.tsv", "train.tsv", "valid.tsv", "test.tsv"):
        assert (out / "splits" / name).is_file()
    assert json.loads((out / "config.json").read_text())["seed"] == 3


def test_train_and_eval_roundtrip(tmp_path, data_file, capsys):
    out = tmp_path / "run"
    args = ["train", "--data", str(data_file), "--out-dir", str(out), "--epochs-max", "3",
            "--d", "8", "--layers", "1", "--gamma", "0.3"]
    assert run(args) == 0
    for name in ("config.json", "trainlog.jsonl", "metrics.json", "checkpoint.bin", "splits"):
        assert (out / name).exists()
    lines = (out / "trainlog.jsonl").read_text().splitlines()
    assert len(lines) == 3 and json.loads(lines[0])["epoch"] == 1
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["masking"]["test"] == ["train", "valid"]
    assert "R@20" in capsys.readouterr().out

    ev = tmp_path / "ev"
    assert run(["eval", "--checkpoint", str(out / "checkpoint.bin"), "--splits", str(out / "splits"),
                "--out-dir", str(ev)]) == 0
    again = json.loads((ev / "metrics.json").read_text())["test"]
    assert again == metrics["test"]


def test_config_precedence(tmp_path, data_file):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"gamma": 0.7, "alpha": 0.3, "epochs_max": 1, "d": 4}))
    out = tmp_path / "o"
    assert run(["train", "--config", str(cfg), "--data", str(data_file), "--alpha", "0.9",
                "--out-dir", str(out)]) == 0
    snap = json.loads((out / "config.json").read_text())
    assert snap["gamma"] == 0.7 and snap["alpha"] == 0.9 and snap["lr"] == DEFAULTS["lr"]


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"no_such_key": 1}))
    assert run(["train", "--config", str(cfg)]) == 2
    assert _err(capsys)["error"] == "config"


def test_parse_range():
    assert parse_range("0:2:0.5") == [0.0, 0.5, 1.0, 1.5, 2.0]
    assert parse_range("0.1,0.3") == [0.1, 0.3]
    assert parse_range(0.2) == [0.2]
    assert parse_range("0:1:0.1")[-1] == 1.0 and len(parse_range("0:1:0.1")) == 11


def test_off_grid_warns_not_fails(caplog):
    cfg = dict(DEFAULTS, lr=0.02, gamma=0.25, alpha="0:3:1", layers=6)
    msgs = warn_off_grid(cfg)
    assert any("lr" in m for m in msgs) and any("gamma" in m for m in msgs)
    assert any("alpha=3.0" in m for m in msgs) and any("layers" in m for m in msgs)
    assert warn_off_grid(dict(DEFAULTS)) == []


def test_grid_one_row_per_alpha(tmp_path, data_file):
    out = tmp_path / "g"
    assert run(["grid", "--data", str(data_file), "--alpha", "0:2:0.5", "--gamma", "0.2",
                "--layers", "1", "--epochs-max", "2", "--d", "4", "--out-dir", str(out)]) == 0
    with open(out / "grid.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["alpha"]) for r in rows] == [0.0, 0.5, 1.0, 1.5, 2.0]
    assert all(float(r["gamma"]) == 0.2 for r in rows)
    for r in rows:
        run_dir = out / "runs" / r["name"]
        assert (run_dir / "trainlog.jsonl").is_file() and (run_dir / "metrics.json").is_file()


def test_bench_synthetic(tmp_path):
    out = tmp_path / "b"
    assert run(["bench", "--synthetic-users", "60", "--synthetic-items", "60", "--synthetic-edges", "150",
                "--L-max", "2", "--trials", "1", "--out-dir", str(out)]) == 0
    with open(out / "bench.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["L"]) for r in rows] == [1, 2]
    assert int(rows[0]["cumulative_pairs"]) == 150


def test_thread_env(tmp_path, data_file, monkeypatch):
    monkeypatch.setenv("GRAPHAU_THREADS", "1")
    assert run(["train", "--data", str(data_file), "--epochs-max", "1", "--d", "4",
                "--out-dir", str(tmp_path / "t")]) == 0
