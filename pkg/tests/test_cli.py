import json

import numpy as np
import pytest

from splitseg.cli import cli
from splitseg.reports import parse_report_csv

TINY = {
    "seed": 11,
    "n_train": 2,
    "n_val": 1,
    "n_test": 2,
    "dims": [20, 20, 14],
    "iterations": 8,
    "learning_rate": 0.3,
}


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY), encoding="utf-8")
    return path


@pytest.fixture()
def tiny_data(tmp_path):
    out = tmp_path / "data"
    code = cli(["gen-data", "--seed", "11", "--train", "2", "--val", "1", "--test", "2",
                "--out", str(out)])
    assert code == 0
    return out


def test_unknown_subcommand_is_usage_error(capsys):
    assert cli(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_missing_required_argument_is_usage_error():
    assert cli(["gen-data", "--train", "2"]) == 1


def test_gradcheck_boundary_passes(capsys):
    assert cli(["gradcheck", "--loss", "boundary", "--seed", "7"]) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out
    assert "PASS" in out


@pytest.mark.parametrize("loss", ["ce", "dice", "combined"])
def test_gradcheck_other_losses(loss):
    assert cli(["gradcheck", "--loss", loss, "--seed", "3"]) == 0


def test_gen_data_writes_index_and_volumes(tiny_data):
    index = json.loads((tiny_data / "dataset.json").read_text())
    assert [len(v) for v in index["splits"].values()] == [2, 1, 2]
    assert (tiny_data / "train_000_image.bdlv").exists()
    assert (tiny_data / "train_000_labels.bdlv").exists()


def test_train_evaluate_report_flow(tmp_path, tiny_config, tiny_data, capsys):
    model_dir = tmp_path / "model"
    assert cli(["train", "--config", str(tiny_config), "--data", str(tiny_data),
                "--out", str(model_dir)]) == 0
    assert (model_dir / "model.json").exists()
    curve = (model_dir / "loss_curve.csv").read_text().strip().split("\n")
    assert curve[0] == "iteration,loss"
    assert len(curve) == 1 + TINY["iterations"]

    report_path = tmp_path / "report.csv"
    assert cli(["evaluate", "--model", str(model_dir / "model.json"),
                "--data", str(tiny_data), "--out", str(report_path)]) == 0
    reports = parse_report_csv(report_path.read_text())
    assert len(reports) == 2  # test split size

    assert cli(["report", "--in", str(report_path), "--format", "markdown"]) == 0
    out = capsys.readouterr().out
    assert "ASSD-median" in out


def test_provenance_printed(tiny_config, tiny_data, tmp_path, capsys):
    cli(["train", "--config", str(tiny_config), "--data", str(tiny_data),
         "--out", str(tmp_path / "m")])
    out = capsys.readouterr().out
    assert '"seed": 11' in out


def test_sweep_writes_one_report_per_gamma(tmp_path, tiny_config, tiny_data):
    out = tmp_path / "sweep"
    assert cli(["sweep", "--config", str(tiny_config), "--data", str(tiny_data),
                "--gammas", "0,0.5", "--out", str(out)]) == 0
    files = {p.name for p in out.glob("report_gamma_*.csv")}
    assert files == {"report_gamma_0.csv", "report_gamma_0.5.csv"}


def test_sweep_default_gammas_yield_five_reports(tmp_path):
    cfg = dict(TINY, dims=[14, 14, 10], n_train=1, n_val=1, n_test=1, iterations=2)
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps(cfg), encoding="utf-8")
    out = tmp_path / "sweep"
    assert cli(["sweep", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert len(list(out.glob("report_gamma_*.csv"))) == 5


def test_sweep_bad_gammas_is_usage_error():
    assert cli(["sweep", "--gammas", "0,abc", "--out", "/tmp/x"]) == 1


def test_malformed_volume_is_exit_2(tmp_path, tiny_config, tiny_data):
    (tiny_data / "train_000_image.bdlv").write_bytes(b"garbage without newline")
    code = cli(["train", "--config", str(tiny_config), "--data", str(tiny_data),
                "--out", str(tmp_path / "m")])
    assert code == 2


def test_truncated_volume_is_exit_2(tmp_path, tiny_config, tiny_data):
    target = tiny_data / "train_001_image.bdlv"
    blob = target.read_bytes()
    target.write_bytes(blob[: len(blob) - 7])
    code = cli(["train", "--config", str(tiny_config), "--data", str(tiny_data),
                "--out", str(tmp_path / "m")])
    assert code == 2


def test_missing_data_dir_is_exit_2(tmp_path, tiny_config):
    assert cli(["train", "--config", str(tiny_config), "--data", str(tmp_path / "nope"),
                "--out", str(tmp_path / "m")]) == 2


def test_bad_config_key_is_exit_2(tmp_path, tiny_data):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"seeed": 1}), encoding="utf-8")
    assert cli(["train", "--config", str(cfg), "--data", str(tiny_data),
                "--out", str(tmp_path / "m")]) == 2


def test_gen_data_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for out in (a, b):
        assert cli(["gen-data", "--seed", "5", "--train", "1", "--val", "1", "--test", "1",
                    "--out", str(out)]) == 0
    for name in ("train_000_image.bdlv", "test_000_labels.bdlv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
