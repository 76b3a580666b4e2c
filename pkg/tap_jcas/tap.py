"""JCAS tap class."""

from typing import List

from singer_sdk import Stream, Tap
from singer_sdk import typing as th  # JSON schema typing helpers

from tap_jcas.streams.analytics import (
    ConstellationStream,
    CrbCurveStream,
    KurtosisStream,
    NpThresholdStream,
)
from tap_jcas.streams.experiment import AreaPowerStream, BeamPatternStream, SweepStream
from tap_jcas.streams.utils import AngleLoss, ModulationMode, SweepAxis

INTERVAL = th.ArrayType(th.NumberType)


class TapJcas(Tap):
    """Joint communication and sensing simulator tap."""

    name = "tap-jcas"

    config_jsonschema = th.PropertiesList(
        th.Property(
            "seed",
            th.IntegerType,
            required=True,
            description="Master seed; every random draw of the experiment flows from it",
        ),
        th.Property(
            "modulation",
            th.StringType,
            description="Modulation alphabet",
            default=ModulationMode.QAM.value,
            allowed_values=[mode.value for mode in ModulationMode],
        ),
        th.Property(
            "apsk_inner_radius",
            th.NumberType,
            description="Inner ring radius for APSK modulation (0 < r <= 1)",
        ),
        th.Property(
            "output_dir",
            th.StringType,
            description="Directory for checkpoints and CSV files (env TAP_JCAS_OUTPUT_DIR)",
        ),
        th.Property(
            "checkpoint",
            th.StringType,
            description="Trained checkpoint to evaluate",
        ),
        th.Property(
            "checkpoints",
            th.ArrayType(th.StringType),
            description="Checkpoints trained at different w_s values",
        ),
        th.Property(
            "scenario",
            th.ObjectType(
                th.Property("K", th.IntegerType, description="Antennas per array"),
                th.Property("M", th.IntegerType, description="Constellation order"),
                th.Property("comm_area_deg", INTERVAL, description="[min, max] in degrees"),
                th.Property("sens_area_deg", INTERVAL, description="[min, max] in degrees"),
                th.Property("sigma_c2", th.NumberType),
                th.Property("sigma_s2", th.NumberType),
                th.Property("snr_c_db", INTERVAL, description="Training range of SNR_c"),
                th.Property("snr_s_db", INTERVAL, description="Training range of SNR_s"),
                th.Property("n_win_min", th.IntegerType),
                th.Property("n_win_max", th.IntegerType),
                th.Property("target_prior", th.NumberType),
                th.Property("p_f", th.NumberType, description="Target false-alarm rate"),
                additional_properties=False,
            ),
            description="Scenario geometry, noise levels and sampling ranges",
        ),
        th.Property(
            "plan",
            th.ObjectType(
                th.Property("pretrain_symbols", th.IntegerType),
                th.Property("finetune_symbols", th.IntegerType),
                th.Property("limit_windows", th.IntegerType),
                th.Property("budget_divisor", th.IntegerType),
                th.Property("batch_size", th.IntegerType),
                th.Property("learning_rate", th.NumberType),
                th.Property("w_s", th.NumberType, description="Sensing loss weight"),
                th.Property(
                    "angle_loss",
                    th.StringType,
                    allowed_values=[loss.value for loss in AngleLoss],
                ),
                th.Property("log_every", th.IntegerType),
                additional_properties=False,
            ),
            description="Training budgets and optimizer settings",
        ),
        th.Property(
            "mimo",
            th.ObjectType(
                th.Property("ue_angles_deg", th.ArrayType(th.NumberType)),
                th.Property("alpha", th.NumberType, description="Fairness exponent"),
                th.Property("w_s", th.NumberType),
                th.Property("order", th.IntegerType, description="Per-UE QAM order"),
                th.Property("ue_snr_offset_db", th.ArrayType(th.NumberType)),
                additional_properties=False,
            ),
            description="Multi-user downlink settings",
        ),
        th.Property(
            "sweep",
            th.ObjectType(
                th.Property(
                    "axis", th.StringType, allowed_values=[axis.value for axis in SweepAxis]
                ),
                th.Property("grid", th.ArrayType(th.NumberType)),
                th.Property("trials", th.IntegerType, description="Windows per grid point"),
                th.Property("n_win", th.IntegerType),
                th.Property("snr_s_db", th.NumberType),
                th.Property("snr_c_db", th.NumberType),
                additional_properties=False,
            ),
            description="Evaluation sweep emitted by the sweep stream",
        ),
    ).to_dict()

    def discover_streams(self) -> List[Stream]:
        """Return a list of discovered streams.

        Every stream recomputes its table from the config, so a sync is
        reproducible from the seed alone.
        """
        streams: List[Stream] = [
            ConstellationStream(tap=self),
            KurtosisStream(tap=self),
            CrbCurveStream(tap=self),
            NpThresholdStream(tap=self),
            BeamPatternStream(tap=self),
            AreaPowerStream(tap=self),
            SweepStream(tap=self),
        ]
        return streams
