"""Tests for the ``jcas`` operator commands."""

import csv
import json
from pathlib import Path
from typing import Any, Dict, List, Tuple

import click
import pytest
from click.testing import CliRunner

from tap_jcas.cli import ConfigError, cli, parse_grid, validate_config, write_csv

TINY_CONFIG: Dict[str, Any] = {
    "seed": 1,
    "scenario": {"K": 4, "M": 4, "n_win_max": 2},
    "plan": {
        "pretrain_symbols": 20,
        "finetune_symbols": 20,
        "limit_windows": 20,
        "budget_divisor": 1,
        "batch_size": 10,
        "log_every": 0,
    },
}


def read_table(path: Path) -> Tuple[List[str], List[Dict[str, str]]]:
    """Return the ``#`` metadata lines and the data rows of a written CSV."""
    lines = path.read_text().splitlines()
    meta = [line for line in lines if line.startswith("#")]
    rows = list(csv.DictReader(line for line in lines if not line.startswith("#")))
    return meta, rows


@pytest.fixture
def runner() -> CliRunner:
    """Return a click test runner."""
    return CliRunner()


@pytest.fixture
def config_file(tmp_path: Path) -> Path:
    """Write the tiny config with its own output directory."""
    path = tmp_path / "config.json"
    path.write_text(json.dumps({**TINY_CONFIG, "output_dir": str(tmp_path / "out")}))
    return path


class TestParseGrid:
    """Grid option parsing."""

    @pytest.mark.parametrize(
        "text, expected",
        [
            (None, None),
            ("", []),
            ("1,2.5", [1.0, 2.5]),
            ("0:10:5", [0.0, 5.0, 10.0]),
            ("0:0.3:0.1", [0.0, 0.1, 0.2, 0.3]),
        ],
    )
    def test_formats(self, text: str, expected: list) -> None:
        """Test lists, inclusive ranges and the empty grid."""
        assert parse_grid(text) == expected

    @pytest.mark.parametrize("text", ["a,b", "0:1", "0:1:0"])
    def test_invalid(self, text: str) -> None:
        """Test malformed grids."""
        with pytest.raises(click.BadParameter):
            parse_grid(text)


class TestConfigValidation:
    """Schema checks of config files."""

    def test_dotted_paths(self) -> None:
        """Test that each problem names the offending field."""
        with pytest.raises(ConfigError) as info:
            validate_config({"scenario": {"K": "four"}, "plan": {"typo": 1}})
        problems = "\n".join(info.value.problems)
        assert "seed:" in problems
        assert "scenario.K:" in problems
        assert "plan:" in problems

    def test_valid(self) -> None:
        """Test that the tiny config passes."""
        validate_config(TINY_CONFIG)

    def test_missing_seed_fails_command(self, runner: CliRunner, tmp_path: Path) -> None:
        """Test that a command reports the missing field and exits nonzero."""
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"scenario": {"K": 4}}))
        result = runner.invoke(cli, ["baseline", "np", str(path)])
        assert result.exit_code != 0
        assert "seed" in result.output

    def test_invalid_value_fails_command(self, runner: CliRunner, tmp_path: Path) -> None:
        """Test that a semantically invalid value is reported."""
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"seed": 0, "scenario": {"M": 12}}))
        result = runner.invoke(cli, ["baseline", "np", str(path)])
        assert result.exit_code != 0
        assert "power of two" in result.output


class TestWriteCsv:
    """CSV output."""

    def test_metadata_and_missing_values(self, tmp_path: Path) -> None:
        """Test the header block and that None and NaN are written as empty cells."""
        path = tmp_path / "t.csv"
        rows = [{"a": 1, "b": None}, {"a": float("nan"), "b": 0.5}]
        write_csv(str(path), rows, ["a", "b"], {"seed": 4})
        meta, table = read_table(path)
        assert meta == ["# seed: 4"]
        assert table == [{"a": "1", "b": ""}, {"a": "", "b": "0.5"}]


class TestCommands:
    """End-to-end command runs on a tiny scenario."""

    def test_train_writes_artifacts(
        self, runner: CliRunner, config_file: Path, tmp_path: Path
    ) -> None:
        """Test checkpoint, loss trace and summary, and that a rerun is bit-identical."""
        result = runner.invoke(cli, ["train", str(config_file)])
        assert result.exit_code == 0, result.output
        out = tmp_path / "out"
        summary = json.loads((out / "summary.json").read_text())
        assert sorted(summary["thresholds"]) == ["1", "2"]
        assert summary["seed"] == 1
        meta, losses = read_table(out / "losses.csv")
        assert "# schema_version: 1" in meta
        assert [row["phase"] for row in losses] == ["pretrain"] * 2 + ["finetune"] * 2

        rerun = runner.invoke(cli, ["train", str(config_file)])
        assert rerun.exit_code == 0, rerun.output
        again = json.loads((out / "summary.json").read_text())
        assert again["checkpoint_sha256"] == summary["checkpoint_sha256"]

    def test_seed_override(self, runner: CliRunner, config_file: Path, tmp_path: Path) -> None:
        """Test that --seed changes the trained networks and is recorded."""
        runner.invoke(cli, ["train", str(config_file)])
        first = json.loads((tmp_path / "out" / "summary.json").read_text())
        runner.invoke(cli, ["train", str(config_file), "--seed", "2"])
        second = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert second["seed"] == 2
        assert second["checkpoint_sha256"] != first["checkpoint_sha256"]
        assert second["config_hash"] != first["config_hash"]

    def test_eval_checkpoint(self, runner: CliRunner, config_file: Path, tmp_path: Path) -> None:
        """Test an SNR_c sweep of a trained checkpoint."""
        runner.invoke(cli, ["train", str(config_file)])
        checkpoint = tmp_path / "out" / "checkpoint.json"
        result = runner.invoke(
            cli,
            [
                "eval",
                str(config_file),
                "--checkpoint",
                str(checkpoint),
                "--axis",
                "snr_c",
                "--grid",
                "10,20",
                "--trials",
                "10",
            ],
        )
        assert result.exit_code == 0, result.output
        _, rows = read_table(tmp_path / "out" / "sweep_snr_c.csv")
        assert [float(r["value"]) for r in rows] == [10.0, 20.0]
        assert all(r["ergodic_capacity"] for r in rows)

    def test_eval_empty_grid(self, runner: CliRunner, config_file: Path, tmp_path: Path) -> None:
        """Test that an empty grid writes a header-only table."""
        result = runner.invoke(cli, ["eval", str(config_file), "--grid", ""])
        assert result.exit_code == 0, result.output
        meta, rows = read_table(tmp_path / "out" / "sweep_snr_s.csv")
        assert rows == []
        assert meta

    def test_unknown_figure(self, runner: CliRunner, config_file: Path) -> None:
        """Test that an unknown figure name is a usage error."""
        result = runner.invoke(cli, ["figure", "heatmap", str(config_file)])
        assert result.exit_code == 2

    def test_figure_beam(self, runner: CliRunner, config_file: Path, tmp_path: Path) -> None:
        """Test the beam pattern and area power tables of the initial networks."""
        result = runner.invoke(cli, ["figure", "beam", str(config_file)])
        assert result.exit_code == 0, result.output
        _, beam = read_table(tmp_path / "out" / "beam.csv")
        _, area = read_table(tmp_path / "out" / "area_power.csv")
        assert len(beam) == 721
        assert area[0]["label"] == "initial"

    def test_figure_constellation(
        self, runner: CliRunner, config_file: Path, tmp_path: Path
    ) -> None:
        """Test the alphabet table without checkpoints."""
        result = runner.invoke(cli, ["figure", "constellation", str(config_file)])
        assert result.exit_code == 0, result.output
        _, rows = read_table(tmp_path / "out" / "constellation.csv")
        assert len(rows) == 4

    def test_baseline_np(self, runner: CliRunner, config_file: Path, tmp_path: Path) -> None:
        """Test the power-detector thresholds for every window length."""
        result = runner.invoke(cli, ["baseline", "np", str(config_file)])
        assert result.exit_code == 0, result.output
        _, rows = read_table(tmp_path / "out" / "baseline_np.csv")
        assert [int(r["n_win"]) for r in rows] == [1, 2]
        assert [int(r["dof"]) for r in rows] == [8, 16]

    def test_baseline_crb(self, runner: CliRunner, config_file: Path, tmp_path: Path) -> None:
        """Test the angle bound at a single SNR."""
        result = runner.invoke(cli, ["baseline", "crb", str(config_file), "--grid", "0"])
        assert result.exit_code == 0, result.output
        _, rows = read_table(tmp_path / "out" / "baseline_crb.csv")
        assert len(rows) == 1
        assert float(rows[0]["crb_rmse_rad"]) > 0

    def test_baseline_mld(self, runner: CliRunner, config_file: Path, tmp_path: Path) -> None:
        """Test the MLD reference curve."""
        result = runner.invoke(
            cli, ["baseline", "mld", str(config_file), "--grid", "0:20:10", "--trials", "50"]
        )
        assert result.exit_code == 0, result.output
        _, rows = read_table(tmp_path / "out" / "baseline_mld.csv")
        assert [float(r["snr_c_db"]) for r in rows] == [0.0, 10.0, 20.0]
