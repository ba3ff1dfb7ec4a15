import json
import os
import pandas as pd
import pytest
from click.testing import CliRunner
from app.cli import main
from app.config import settings


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def system_csv(tmp_path):
    path = tmp_path / "toy.csv"
    path.write_text("phi_0,v,d\n2,1,1\n1,2,1\n")
    return str(path)


def test_solve_command(runner, tmp_path, system_csv):
    result = runner.invoke(main, ["--out", str(tmp_path / "out"), "--seed", "3", "solve", system_csv,
                                  "--beta", "0", "--iters", "5000"])
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output.splitlines()[0])
    assert payload["scale_invariant_solution"][0] == pytest.approx(1.25)
    assert payload["least_squares_solution"][0] == pytest.approx(0.8)
    assert abs(payload["w"][0] - 1.25) < 0.05
    assert (tmp_path / "out" / "toy_trace.csv").exists()


def test_solve_command_rejects_invalid_settings(runner, tmp_path, system_csv):
    result = runner.invoke(main, ["--out", str(tmp_path), "solve", system_csv, "--p", "0.2"])
    assert result.exit_code == 1
    assert "Error" in result.output


def test_solve_command_rejects_bad_file(runner, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    result = runner.invoke(main, ["--out", str(tmp_path), "solve", str(bad)])
    assert result.exit_code == 1


def test_outlier_command_writes_report(runner, tmp_path):
    out = tmp_path / "results"
    result = runner.invoke(main, ["--out", str(out), "experiment", "outlier", "--reps", "20", "--seed", "4"])
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out / "outlier_errors.csv")
    assert len(frame) == 20
    meta = json.loads((out / "outlier.json").read_text())
    assert meta["config"]["repetitions"] == 20
    assert meta["config"]["seed"] == 4


def test_experiment_config_file(runner, tmp_path):
    config = tmp_path / "steps.json"
    config.write_text(json.dumps({"name": "steps", "m": 40, "n": 3, "iterations": 300, "seed": 2}))
    result = runner.invoke(main, ["--out", str(tmp_path), "--seed", "9", "experiment", "steps", "--config", str(config)])
    meta = json.loads((tmp_path / "steps.json").read_text())
    assert meta["config"]["m"] == 40
    assert meta["config"]["seed"] == 9
    assert result.exit_code in (0, 2)


def test_failed_checks_exit_with_two(runner, tmp_path):
    result = runner.invoke(main, ["--out", str(tmp_path), "experiment", "steps", "--iters", "3"])
    assert result.exit_code == 2
    assert "FAILED" in result.output


def test_invalid_experiment_config_exits_with_one(runner, tmp_path):
    result = runner.invoke(main, ["--out", str(tmp_path), "experiment", "outlier", "--gamma", "1.5"])
    assert result.exit_code == 1


def test_momentum_betas_option(runner, tmp_path):
    result = runner.invoke(main, ["--out", str(tmp_path), "experiment", "momentum", "--reps", "1",
                                  "--beta", "0", "--beta", "0.5"])
    assert result.exit_code == 0, result.output
    summary = pd.read_csv(tmp_path / "momentum_summary.csv")
    assert list(summary["beta"]) == [0.0, 0.5]


def test_solve_reads_relative_path_from_working_directory(runner):
    with runner.isolated_filesystem():
        with open("toy.csv", "w") as f:
            f.write("phi_0,v\n2,1\n1,2\n")
        result = runner.invoke(main, ["--out", "out", "solve", "toy.csv", "--iters", "10"])
        assert result.exit_code == 0, result.output
        assert os.path.exists(os.path.join("out", "toy_trace.csv"))
        assert not os.path.exists(os.path.join("out", "toy.csv"))


def test_solve_writes_trace_to_default_output_directory(runner):
    with runner.isolated_filesystem():
        os.makedirs("data")
        with open(os.path.join("data", "toy.csv"), "w") as f:
            f.write("phi_0,v\n2,1\n1,2\n")
        result = runner.invoke(main, ["solve", os.path.join("data", "toy.csv"), "--iters", "10"])
        assert result.exit_code == 0, result.output
        trace = pd.read_csv(os.path.join(settings.OUTPUT_DIR, "toy_trace.csv"))
        assert list(trace["k"]) == list(range(1, 11))


def test_solve_rejects_negative_seed(runner, tmp_path, system_csv):
    result = runner.invoke(main, ["--out", str(tmp_path), "--seed", "-1", "solve", system_csv])
    assert result.exit_code == 1
    assert "Error" in result.output


def test_format_option_names_report_tables(runner, tmp_path):
    result = runner.invoke(main, ["--out", str(tmp_path), "--format", "csv", "experiment", "outlier", "--reps", "2"])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "outlier_errors.csv").exists()


def test_unknown_format_is_a_usage_error(runner, tmp_path, system_csv):
    result = runner.invoke(main, ["--out", str(tmp_path), "--format", "parquet", "solve", system_csv])
    assert result.exit_code == 2
    assert "FAILED" not in result.output
