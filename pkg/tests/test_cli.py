import pytest
from typer.testing import CliRunner

from edgeworth.cli import app
from edgeworth.snapshots import read_manifest

runner = CliRunner()

SMALL = '[population]\nn = 100\n[time]\nhorizon = 1.0\n'


@pytest.fixture
def config_file(tmp_path):
    def write(text: str = SMALL, name: str = "run.toml"):
        path = tmp_path / name
        path.write_text(text)
        return path
    return write


def test_validate_config(config_file):
    result = runner.invoke(app, ["validate-config", str(config_file('experiment = "linear"\n'))])
    assert result.exit_code == 0
    assert "linear" in result.output


def test_invalid_config_exits_with_two(config_file):
    result = runner.invoke(app, ["validate-config", str(config_file("[trade]\nlambda = 1.5\n"))])
    assert result.exit_code == 2
    assert "lambda" in result.output


def test_syntax_error_exits_with_two(config_file):
    result = runner.invoke(app, ["simulate", str(config_file("seed = = 1\n"))])
    assert result.exit_code == 2


def test_missing_config_exits_with_four(tmp_path):
    result = runner.invoke(app, ["simulate", str(tmp_path / "missing.toml")])
    assert result.exit_code == 4


def test_simulate_writes_the_output_directory(config_file, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(app, ["simulate", str(config_file()), "--seed", "3", "-o", str(out)])
    assert result.exit_code == 0, result.output
    assert read_manifest(out / "manifest.json")["seed"] == 3
    assert (out / "snapshots" / "snapshot_0001.csv").exists()


def test_seed_from_the_environment(config_file, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(app, ["simulate", str(config_file()), "-o", str(out)], env={"EDGEWORTH_SEED": "9"})
    assert result.exit_code == 0, result.output
    assert read_manifest(out / "manifest.json")["seed"] == 9


def test_sweep_without_noise_exits_with_two(config_file, tmp_path):
    result = runner.invoke(app, ["sweep", str(config_file()), "-o", str(tmp_path / "out")])
    assert result.exit_code == 2
    assert not (tmp_path / "out").exists()


def test_analyze(config_file, tmp_path):
    out = tmp_path / "out"
    runner.invoke(app, ["simulate", str(config_file()), "-o", str(out)])
    first, last = out / "snapshots" / "snapshot_0000.csv", out / "snapshots" / "snapshot_0001.csv"
    result = runner.invoke(app, ["analyze", str(last), str(first)])
    assert result.exit_code == 0, result.output
    assert "concentration" in result.output
    assert runner.invoke(app, ["analyze", str(tmp_path / "nowhere.csv")]).exit_code == 4
