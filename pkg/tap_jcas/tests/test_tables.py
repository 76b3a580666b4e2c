"""Tests for the experiment table builders."""

from pathlib import Path

import numpy as np
import pytest

from tap_jcas.airlink import ScenarioConfig, steering_vector
from tap_jcas.baselines import np_threshold
from tap_jcas.constellation import make_qam
from tap_jcas.numerics import InvalidArgumentError
from tap_jcas.tables import (
    KAPPA_GRID,
    area_power_rows,
    beam_rows,
    clean,
    constellation_rows,
    esprit_rows,
    kurtosis_rows,
    mld_rows,
    networks_by_weight,
    np_threshold_rows,
    precoder,
    tradeoff_rows,
)
from tap_jcas.trainer import build_networks, save_checkpoint


@pytest.fixture
def cfg() -> ScenarioConfig:
    """Return a small scenario."""
    return ScenarioConfig(K=4, M=4, n_win_max=3)


class TestBeamTables:
    """Beam pattern and area power rows."""

    def test_beam_rows(self) -> None:
        """Test the grid and the peak of a matched beam."""
        v = np.conj(steering_vector(0.0, 4)) / 2.0
        rows = beam_rows(v)
        assert len(rows) == 721
        assert rows[0]["angle_deg"] == pytest.approx(-90.0)
        assert rows[360]["power"] == pytest.approx(4.0)

    def test_area_power(self, cfg: ScenarioConfig) -> None:
        """Test that the fractions of the initial precoder partition the power."""
        v = precoder(build_networks(cfg, seed=1), cfg)
        (row,) = area_power_rows(v, cfg, "initial")
        assert row["label"] == "initial"
        total = row["frac_sens"] + row["frac_comm"] + row["frac_outside"]
        assert total == pytest.approx(1.0)
        assert row["beta_s"] > 0


class TestShapeTables:
    """Constellation shape rows."""

    def test_kurtosis_references(self) -> None:
        """Test the QAM and PSK references and one row per APSK kappa."""
        rows = kurtosis_rows()
        assert len(rows) == 2 + len(KAPPA_GRID)
        assert rows[0]["source"] == "qam16"
        assert rows[0]["kurtosis"] == pytest.approx(1.32)
        assert rows[1]["kurtosis"] == pytest.approx(1.0)
        apsk = rows[2:]
        np.testing.assert_allclose([r["kurtosis"] for r in apsk], KAPPA_GRID, atol=1e-9)
        assert apsk[0]["valid"] is True
        assert rows[0]["valid"] is None

    def test_constellation_rows(self) -> None:
        """Test one labelled row per point."""
        rows = constellation_rows([("qam16", None, make_qam(16))])
        assert len(rows) == 16
        assert rows[0]["index"] == 0
        assert {len(r["bits"]) for r in rows} == {4}
        assert np.mean([r["re"] ** 2 + r["im"] ** 2 for r in rows]) == pytest.approx(1.0)


class TestBaselineTables:
    """Classical reference rows."""

    def test_np_thresholds(self) -> None:
        """Test degrees of freedom and thresholds per window length."""
        rows = np_threshold_rows(4, [1, 2], 0.01)
        assert [r["dof"] for r in rows] == [8, 16]
        assert rows[1]["threshold"] == pytest.approx(np_threshold(4, 2, 0.01))

    def test_esprit(self, cfg: ScenarioConfig) -> None:
        """Test that ESPRIT is accurate at high SNR and no rows come from zero trials."""
        rows = esprit_rows(cfg, [30.0], trials=100, n_win=4, seed=1)
        assert rows[0]["rmse_esprit"] < 0.05
        assert rows[0]["crb_rmse"] < rows[0]["rmse_esprit"] * 10
        assert esprit_rows(cfg, [0.0], trials=0, n_win=4, seed=1) == []

    def test_mld(self) -> None:
        """Test that MLD bit errors fall with SNR."""
        rows = mld_rows(make_qam(4), [0.0, 30.0], trials=2000, seed=2)
        assert rows[1]["ber_mld"] < rows[0]["ber_mld"]
        assert rows[0]["ergodic_capacity"] == pytest.approx(1.0)
        assert mld_rows(make_qam(4), [0.0], trials=0, seed=2) == []

    def test_clean(self) -> None:
        """Test that non-finite floats become missing values."""
        rows = clean([{"a": float("nan"), "b": float("inf"), "c": 1.5, "d": "x", "e": None}])
        assert rows == [{"a": None, "b": None, "c": 1.5, "d": "x", "e": None}]


class TestTradeoff:
    """Checkpoints keyed by their trade-off weight."""

    def _save(self, tmp_path: Path, cfg: ScenarioConfig, w_s: object, seed: int) -> str:
        nets = build_networks(cfg, seed=seed)
        nets.w_s = w_s  # type: ignore[assignment]
        path = str(tmp_path / f"nets{seed}.json")
        save_checkpoint(nets, path)
        return path

    def test_sorted_by_weight(self, tmp_path: Path, cfg: ScenarioConfig) -> None:
        """Test loading and sorting by w_s."""
        paths = [self._save(tmp_path, cfg, 0.8, 1), self._save(tmp_path, cfg, 0.2, 2)]
        assert list(networks_by_weight(paths)) == [0.2, 0.8]

    def test_rejects_untuned_and_duplicates(self, tmp_path: Path, cfg: ScenarioConfig) -> None:
        """Test that every checkpoint needs its own known w_s."""
        with pytest.raises(InvalidArgumentError):
            networks_by_weight([self._save(tmp_path, cfg, None, 1)])
        paths = [self._save(tmp_path, cfg, 0.5, 2), self._save(tmp_path, cfg, 0.5, 3)]
        with pytest.raises(InvalidArgumentError):
            networks_by_weight(paths)

    def test_tradeoff_rows(self, tmp_path: Path, cfg: ScenarioConfig) -> None:
        """Test one row per weight with the alphabet kurtosis."""
        paths = [self._save(tmp_path, cfg, 0.2, 1), self._save(tmp_path, cfg, 0.8, 2)]
        rows = tradeoff_rows(networks_by_weight(paths), cfg, trials=10, seed=0)
        assert [r["w_s"] for r in rows] == [0.2, 0.8]
        assert rows[0]["kurtosis"] == pytest.approx(1.0)
