import json
import subprocess
import sys

import pandas as pd
import pytest

from aocids.cli import EXIT_CONFIG, EXIT_DATA, EXIT_IO, EXIT_USAGE, main
from aocids.data import Preprocessor
from helpers import unsw_frame

FAST = ["--set", "stream.epoch0=3", "--set", "stream.epoch1=1", "--set", "stream.stream_batch_size=150",
        "--set", "arch.hidden_dims=[12,6]"]


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(d), "--dim", "6", "--n-normal", "200", "--n-attack", "300",
                 "--test-normal", "60", "--test-attack", "90", "--seed", "3"]) == 0
    return d


def test_synth_files(synth):
    train = pd.read_csv(synth / "train.csv")
    assert len(train) == 500 and list(train.columns) == [f"f{i}" for i in range(6)] + ["label"]
    assert len(pd.read_csv(synth / "test.csv")) == 150


def test_stream_outputs(synth, tmp_path, capsys):
    data = ["--data", str(synth / "train.csv"), str(synth / "test.csv")]
    assert main(["stream", *data, "--out", str(tmp_path), "--seed", "1", *FAST]) == 0
    final = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    hist = [json.loads(line) for line in (tmp_path / "history.jsonl").read_text().splitlines()]
    assert len(hist) == 3 and hist[-1]["accuracy"] == final["accuracy"]
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["n_initial"] == 100 and metrics["n_batches"] == 3
    assert Preprocessor.load(tmp_path / "preprocessor.json").output_dim == 6
    assert (tmp_path / "checkpoint.npz").exists() and "seed: 1" in (tmp_path / "config.yaml").read_text()


def test_train_with_config_file_and_saved_preprocessor(synth, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("preset: filter+lite\nstream:\n  epoch0: 2\n")
    data = ["--data", str(synth / "train.csv"), str(synth / "test.csv")]
    assert main(["train", *data, "--out", str(tmp_path / "a"), "--config", str(cfg)]) == 0
    prep = str(tmp_path / "a" / "preprocessor.json")
    assert main(["train", *data, "--out", str(tmp_path / "b"), "--config", str(cfg), "--preprocessor", prep]) == 0
    m = json.loads((tmp_path / "b" / "metrics.json").read_text())
    assert m["n_params"] > 0 and "initial" in m


def test_ablate_then_report(synth, tmp_path):
    data = ["--data", str(synth / "train.csv"), str(synth / "test.csv")]
    out = tmp_path / "abl"
    assert main(["ablate", *data, "--out", str(out), "--runs", "base", "filter", "--seeds", "0", "1", *FAST]) == 0
    assert main(["report", "--results", str(out), "--out", str(tmp_path / "rep")]) == 0
    for name in ("table.txt", "table.json", "plotdata.csv"):
        assert (out / name).read_bytes() == (tmp_path / "rep" / name).read_bytes()


def test_export_boost_unsw(tmp_path):
    unsw_frame(400, seed=2).to_csv(tmp_path / "train.csv", index=False)
    unsw_frame(100, seed=3).to_csv(tmp_path / "test.csv", index=False)
    out = tmp_path / "boost"
    assert main(["export-boost", "--data", str(tmp_path / "train.csv"), str(tmp_path / "test.csv"),
                 "--out", str(out), "--seed", "0"]) == 0
    tr, va, te = (pd.read_csv(out / f"boost_{k}.csv") for k in ("train", "val", "test"))
    assert len(tr) + len(va) == 400 and len(te) == 100
    assert {"total_load", "rate_ratio", "pkt_diff", "weight", "label"} <= set(tr.columns)
    assert "weight" not in va.columns
    w = tr.groupby("label")["weight"].sum()
    assert w[0] == pytest.approx(w[1])
    assert abs(len(tr) / 400 - 0.8) < 0.02


def test_error_categories(synth, tmp_path, capsys):
    train, test = str(synth / "train.csv"), str(synth / "test.csv")
    assert main(["stream", "--data", train, str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == EXIT_IO
    assert "error[io]" in capsys.readouterr().err
    assert main(["stream", "--data", train, test, "--set", "stream.gate_mode=zzz"]) == EXIT_CONFIG
    assert "error[config]" in capsys.readouterr().err
    assert main(["stream", "--data", train]) == EXIT_USAGE
    bad = tmp_path / "bad.csv"
    bad.write_text("f0,f1,label\n1,x,0\n")
    assert main(["stream", "--data", str(bad), str(bad), "--out", str(tmp_path)]) == EXIT_DATA
    assert "row 0" in capsys.readouterr().err
    assert main(["report", "--results", str(tmp_path / "missing")]) == EXIT_IO
    assert main(["ablate", "--data", train, test, "--runs", "nonexistent"]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code != 0


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "aocids", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("train", "stream", "ablate", "report", "synth", "export-boost"):
        assert cmd in r.stdout
