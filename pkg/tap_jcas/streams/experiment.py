"""Streams evaluating a beamformer or a full transceiver."""

from typing import Any, Dict, List

from singer_sdk import typing as th

from tap_jcas.streams.base import JcasStream
from tap_jcas.streams.utils import SweepAxis
from tap_jcas.tables import area_power_rows, beam_rows, networks_by_weight, precoder
from tap_jcas.trainer import SweepFixed, sweep

DEFAULT_SWEEP_TRIALS = 200


class BeamPatternStream(JcasStream):
    """Radiated power ``|v^T a(theta)|^2`` on a 0.25 degree grid."""

    name = "beam_pattern"
    primary_keys = ["angle_deg"]

    schema = th.PropertiesList(
        th.Property("angle_deg", th.NumberType, required=True),
        th.Property("power", th.NumberType),
    ).to_dict()

    def build_rows(self) -> List[Dict[str, Any]]:
        """Evaluate the configured beamformer over the half-plane."""
        return beam_rows(precoder(self.networks(), self.experiment.scenario))


class AreaPowerStream(JcasStream):
    """Share of radiated power in the sensing and communication areas."""

    name = "area_power"
    primary_keys = ["label"]

    schema = th.PropertiesList(
        th.Property("label", th.StringType, required=True),
        th.Property("frac_sens", th.NumberType),
        th.Property("frac_comm", th.NumberType),
        th.Property("frac_outside", th.NumberType),
        th.Property("beta_s", th.NumberType, description="Mean beam gain over the sensing area."),
        th.Property("beta_c", th.NumberType, description="Mean beam gain over the comm area."),
    ).to_dict()

    def build_rows(self) -> List[Dict[str, Any]]:
        """Return one row for the configured beamformer."""
        label = self.experiment.checkpoints[0] if self.experiment.checkpoints else "initial"
        cfg = self.experiment.scenario
        return area_power_rows(precoder(self.networks(), cfg), cfg, label)


class SweepStream(JcasStream):
    """Network and baseline metrics along one evaluation axis."""

    name = "sweep"
    primary_keys = ["axis", "value"]

    schema = th.PropertiesList(
        th.Property("axis", th.StringType, required=True),
        th.Property("value", th.NumberType, required=True),
        th.Property("trials", th.IntegerType),
        th.Property("w_s", th.NumberType),
        th.Property("p_d", th.NumberType),
        th.Property("p_d_ci", th.NumberType, description="95% half-width of p_d."),
        th.Property("p_f", th.NumberType),
        th.Property("p_f_ci", th.NumberType),
        th.Property("p_d_np", th.NumberType, description="Power detector on the same draws."),
        th.Property("p_f_np", th.NumberType),
        th.Property("rmse_nn", th.NumberType, description="Angle RMSE in radians."),
        th.Property("bias_nn", th.NumberType),
        th.Property("rmse_esprit", th.NumberType),
        th.Property("bias_esprit", th.NumberType),
        th.Property("crb_rmse", th.NumberType),
        th.Property("ber", th.NumberType),
        th.Property("ber_ci", th.NumberType),
        th.Property("ber_mld", th.NumberType),
        th.Property("bmi", th.NumberType, description="Bits per symbol."),
        th.Property("bmi_mld", th.NumberType),
        th.Property("beta_s_db", th.NumberType),
        th.Property("beta_c_db", th.NumberType),
        th.Property("snr_plus_beta_db", th.NumberType),
        th.Property("ergodic_capacity", th.NumberType),
        th.Property("bce_floor", th.NumberType),
        th.Property("draw_hash", th.StringType, description="Digest of the noise draws."),
    ).to_dict()

    def build_rows(self) -> List[Dict[str, Any]]:
        """Run the sweep described by the ``sweep`` config section."""
        settings = self.experiment.sweep
        if not settings:
            self.logger.warning("No sweep section configured; the sweep stream is empty.")
            return []
        axis = SweepAxis(settings.get("axis", SweepAxis.SNR_S.value))
        fixed = SweepFixed(
            n_win=settings.get("n_win"),
            snr_s_db=settings.get("snr_s_db"),
            snr_c_db=settings.get("snr_c_db"),
        )
        trials = int(settings.get("trials", DEFAULT_SWEEP_TRIALS))
        if axis is SweepAxis.W_S:
            networks: Any = networks_by_weight(self.experiment.checkpoints)
            grid = settings.get("grid") or list(networks)
        else:
            networks = self.networks()
            grid = settings.get("grid", [])
        cfg = self.experiment.scenario
        return sweep(networks, cfg, axis, grid, trials, self.experiment.seed, fixed)
