import json
import subprocess
import sys

import pytest

from tmvi.cli import build_parser, parse_and_dispatch
from tmvi.experiments import RunRecord
from tmvi.oracles import DensityGrid

FAST = ["--steps", "40", "--samples", "10"]


def test_happy_path(tmp_path, capsys):
    code = parse_and_dispatch(["--experiment", "bernoulli", "--degree", "30", "--seed", "1", "--out", str(tmp_path), *FAST])
    assert code == 0
    record = RunRecord.from_json((tmp_path / "bernoulli_tm_M30_record.json").read_text())
    assert record.ok and record.seed == 1
    for name in record.artifact_paths:
        assert (tmp_path / name).exists()
    assert "status=ok" in capsys.readouterr().out


def test_density_csv_integrates(tmp_path):
    parse_and_dispatch(["--experiment", "bernoulli", "--degree", "5", "--out", str(tmp_path), "--steps", "300"])
    record = RunRecord.from_json((tmp_path / "bernoulli_tm_M5_record.json").read_text())
    grid = DensityGrid.from_csv((tmp_path / "bernoulli_tm_M5_density.csv").read_text())
    assert abs(grid.mass() - 1) < 1e-2
    assert record.metrics["tail_mass"] == pytest.approx(1 - grid.mass(), abs=1e-12)


def test_degree_sweep_writes_each_run(tmp_path):
    assert parse_and_dispatch(["--experiment", "bernoulli", "--degree", "1", "3", "--out", str(tmp_path), *FAST]) == 0
    assert (tmp_path / "bernoulli_tm_M1_record.json").exists()
    assert (tmp_path / "bernoulli_tm_M3_record.json").exists()


@pytest.mark.parametrize(
    "argv",
    [
        ["--experiment", "bernoulli", "--degree", "0"],
        [],
        ["--experiment", "bernoulli", "--bogus"],
        ["--experiment", "poisson"],
        ["--experiment", "bernoulli", "--lr", "-1"],
    ],
)
def test_invalid_flags_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as info:
        parse_and_dispatch(argv)
    assert info.value.code == 2
    assert "usage:" in capsys.readouterr().err


def test_numeric_failure_exits_1(tmp_path, capsys):
    code = parse_and_dispatch(["--experiment", "bernoulli", "--degree", "5", "--lr", "1e6", "--steps", "30", "--out", str(tmp_path)])
    assert code == 1
    record = RunRecord.from_json((tmp_path / "bernoulli_tm_M5_record.json").read_text())
    assert record.status == "failed"
    assert record.metrics["offending_parameter"] == 0
    assert "non-finite" in capsys.readouterr().err


def test_env_var_used_without_flag(tmp_path, monkeypatch):
    monkeypatch.setenv("TMVI_OUT", str(tmp_path / "env"))
    parse_and_dispatch(["--experiment", "bernoulli", "--degree", "2", *FAST])
    assert (tmp_path / "env" / "bernoulli_tm_M2_record.json").exists()


def test_flag_beats_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("TMVI_OUT", str(tmp_path / "env"))
    parse_and_dispatch(["--experiment", "bernoulli", "--degree", "2", "--out", str(tmp_path / "flag"), *FAST])
    assert (tmp_path / "flag" / "bernoulli_tm_M2_record.json").exists()
    assert not (tmp_path / "env").exists()


def test_record_round_trip(tmp_path):
    parse_and_dispatch(["--experiment", "bernoulli", "--family", "gaussian", "--out", str(tmp_path), *FAST])
    text = (tmp_path / "bernoulli_gaussian_record.json").read_text()
    record = RunRecord.from_json(text)
    assert record.to_json() == text
    assert record.config["train"]["steps"] == 40
    assert json.loads(text)["config"] == record.config


def test_parser_defaults():
    args = build_parser().parse_args(["--experiment", "nn"])
    assert args.arch == "small" and args.family == "tm" and args.degree is None


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "tmvi.cli", "--experiment", "bernoulli", "--degree", "2", "--out", str(tmp_path), *FAST],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "tmvi.cli"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage:" in proc.stderr
