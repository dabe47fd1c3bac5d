import csv
import json

import numpy as np
import pytest

from flamemodes import cli, formats
from flamemodes.cli import run

TINY_TRAIN = ["--window", "10", "--stride", "5", "--h1", "3", "--h2", "2", "--batch-size", "8",
              "--max-epochs", "3", "--patience", "2"]


@pytest.fixture
def grid_file(tmp_path):
    path = tmp_path / "grid.csv"
    path.write_text("Q,phi\n1600,0.65\n1600,0.80\n2880,0.95  # switching\n")
    return path


@pytest.fixture
def dataset(tmp_path, grid_file):
    out = tmp_path / "data"
    assert run(["synth", "--grid", str(grid_file), "--duration", "0.02", "--seed", "3", "--out", str(out)]) == 0
    return out


def test_no_command_and_bad_flag_are_usage_errors(capsys):
    assert run([]) == 2
    assert run(["train", "--bogus"]) == 2
    assert run(["synth"]) == 2  # --out missing
    err = capsys.readouterr().err
    assert "configuration error" in err


def test_help_lists_defaults(capsys):
    assert run(["train", "--help"]) == 0
    out = capsys.readouterr().out
    assert "(default: 200)" in out and "(default: 0.001)" in out and "(default: 5000)" in out
    assert "default: None" not in out
    assert run(["--version"]) == 0


def test_synth_writes_manifest_and_is_byte_deterministic(tmp_path, grid_file, dataset):
    again = tmp_path / "again"
    run(["synth", "--grid", str(grid_file), "--duration", "0.02", "--seed", "3", "--out", str(again)])
    names = sorted(p.name for p in dataset.iterdir())
    assert names == sorted(p.name for p in again.iterdir())
    for name in names:
        assert (dataset / name).read_bytes() == (again / name).read_bytes()
    man = json.loads((dataset / "manifest.json").read_text())
    assert man["n_cases"] == 3
    assert man["manifest"]["config"]["seed"] == 3
    assert "package_version" in man["manifest"]


def test_seed_from_environment(tmp_path, grid_file, monkeypatch):
    monkeypatch.setenv(cli.SEED_ENV, "3")
    run(["synth", "--grid", str(grid_file), "--duration", "0.02", "--out", str(tmp_path / "env")])
    monkeypatch.delenv(cli.SEED_ENV)
    run(["synth", "--grid", str(grid_file), "--duration", "0.02", "--seed", "3", "--out", str(tmp_path / "flag")])
    run(["synth", "--grid", str(grid_file), "--duration", "0.02", "--out", str(tmp_path / "zero")])
    case = next(p.name for p in (tmp_path / "flag").iterdir() if p.suffix == ".pmts")
    assert (tmp_path / "env" / case).read_bytes() == (tmp_path / "flag" / case).read_bytes()
    assert (tmp_path / "zero" / case).read_bytes() != (tmp_path / "flag" / case).read_bytes()
    monkeypatch.setenv(cli.SEED_ENV, "x")
    assert run(["synth", "--grid", str(grid_file), "--out", str(tmp_path / "bad")]) == 2


def test_config_precedence(tmp_path, monkeypatch):
    conf = tmp_path / "train.conf"
    conf.write_text("# comment\nwindow_len = 20\nstride = 4\nseed = 5\nlearning-rate = 0.01\n")
    parser = cli.build_parser()
    args = parser.parse_args(["train", "--data", "d", "--out", "o", "--config", str(conf), "--stride", "6"])
    cfg = cli.resolve_train_config(args)
    assert (cfg.window_len, cfg.stride, cfg.seed, cfg.learning_rate) == (20, 6, 5, 0.01)
    monkeypatch.setenv(cli.SEED_ENV, "9")
    assert cli.resolve_train_config(args).seed == 9
    args = parser.parse_args(["train", "--data", "d", "--out", "o", "--config", str(conf), "--seed", "11"])
    assert cli.resolve_train_config(args).seed == 11


def test_bad_config_values(tmp_path, dataset):
    conf = tmp_path / "bad.conf"
    conf.write_text("window_len = 20\nnot a pair\n")
    assert run(["train", "--data", str(dataset), "--out", str(tmp_path / "o"), "--config", str(conf)]) == 2
    conf.write_text("window_len = twenty\n")
    assert run(["train", "--data", str(dataset), "--out", str(tmp_path / "o"), "--config", str(conf)]) == 2
    assert run(["train", "--data", str(dataset), "--out", str(tmp_path / "o"), "--window", "4"]) == 2


def test_missing_and_malformed_inputs(tmp_path, capsys):
    assert run(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 3
    bad = tmp_path / "bad.pmts"
    bad.write_bytes(b"NOPE" + bytes(60))
    assert run(["train", "--data", str(bad), "--out", str(tmp_path / "o")]) == 3
    assert run(["classify", "--clouds", str(tmp_path), "--out", str(tmp_path / "c")]) == 3
    assert run(["encode", "--checkpoint", str(tmp_path / "x.blvc"), "--data", str(bad), "--out", "o"]) == 3
    err = capsys.readouterr().err
    assert "error [format error]" in err and "error [dataset not found]" in err


def test_end_to_end_tiny_pipeline(tmp_path, dataset, capsys):
    train_dir, clouds, classified, report = (tmp_path / n for n in ("train", "clouds", "cls", "rep"))
    assert run(["train", "--data", str(dataset), "--out", str(train_dir), *TINY_TRAIN]) == 0
    ckpt = formats.load_checkpoint(train_dir / "checkpoint.blvc")
    assert ckpt.window_len == 10 and ckpt.hidden1 == 3
    hist = list(csv.reader((train_dir / "history.csv").read_text().splitlines()))
    assert hist[0] == ["epoch", "train_loss", "val_loss"] and len(hist) == 4
    man = json.loads((train_dir / "manifest.json").read_text())
    assert man["config"]["window_len"] == 10 and man["epochs"] == 3

    assert run(["encode", "--checkpoint", str(train_dir / "checkpoint.blvc"), "--data", str(dataset),
                "--out", str(clouds), "--svg"]) == 0
    index = json.loads((clouds / "clouds.json").read_text())
    assert len(index["cases"]) == 3 and all(c["n_points"] == 19 for c in index["cases"])
    rows = list(csv.reader((clouds / index["cases"][0]["file"]).read_text().splitlines()))
    assert rows[0] == ["window_index", "z1", "z2"] and len(rows) == 20
    assert (clouds / f"{index['cases'][0]['case_id']}.svg").exists()

    assert run(["classify", "--clouds", str(clouds), "--out", str(classified)]) == 0
    text = (classified / "mode_map.csv").read_text()
    assert text.startswith("case_id,") and "# accuracy" in text
    assert (classified / "mode_map.svg").read_text().startswith("<svg")

    assert run(["report", "--classify", str(classified), "--train", str(train_dir), "--out", str(report)]) == 0
    summary = json.loads((report / "report.json").read_text())
    assert summary["n_cases"] == 3 and summary["accuracy"]["total"] == 3
    assert summary["training"]["epochs"] == 3
    assert "| case |" in (report / "report.md").read_text()


def test_training_via_cli_is_byte_deterministic(tmp_path, dataset):
    for name in ("a", "b"):
        assert run(["train", "--data", str(dataset), "--out", str(tmp_path / name), *TINY_TRAIN]) == 0
    a = (tmp_path / "a" / "checkpoint.blvc").read_bytes()
    assert a == (tmp_path / "b" / "checkpoint.blvc").read_bytes()
    assert (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()


def test_gradcheck_passes_and_reports(capsys):
    assert run(["gradcheck", "--n-seeds", "2"]) == 0
    out = capsys.readouterr().out
    assert out.count("seed ") == 2 and "tolerance 0.0001" in out


def test_gradcheck_failure_is_numeric_error(monkeypatch, capsys):
    monkeypatch.setattr(cli, "run_gradcheck", lambda *a, **k: 0.5)
    assert run(["gradcheck", "--n-seeds", "1"]) == 4
    assert "numeric error" in capsys.readouterr().err


def test_run_gradcheck_is_small_for_several_shapes():
    for T, h1, h2 in ((5, 3, 2), (3, 1, 1), (6, 2, 3)):
        assert cli.run_gradcheck(0, T, h1, h2) < 1e-4
    assert np.isfinite(cli.run_gradcheck(4, beta=0.0))
