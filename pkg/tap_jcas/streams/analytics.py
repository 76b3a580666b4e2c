"""Streams for closed-form and constellation analytics."""

from typing import Any, Dict, List

import numpy as np
from singer_sdk import typing as th

from tap_jcas.baselines import crb_curve
from tap_jcas.streams.base import JcasStream
from tap_jcas.tables import constellation_rows, kurtosis_rows, networks_by_weight, np_threshold_rows

CRB_GRID_DB = tuple(float(x) for x in np.arange(-10.0, 11.0, 1.0))


class ConstellationStream(JcasStream):
    """Alphabet points with their bit labels, one alphabet per checkpoint."""

    name = "constellation"
    primary_keys = ["source", "index"]

    schema = th.PropertiesList(
        th.Property("source", th.StringType, required=True),
        th.Property("w_s", th.NumberType, description="Sensing weight of the training run."),
        th.Property("index", th.IntegerType, required=True),
        th.Property("bits", th.StringType, description="Bit label, most significant bit first."),
        th.Property("re", th.NumberType),
        th.Property("im", th.NumberType),
    ).to_dict()

    def build_rows(self) -> List[Dict[str, Any]]:
        """Label each checkpoint by its ``w_s``; without checkpoints use the configured alphabet."""
        if self.experiment.checkpoints:
            trained = networks_by_weight(self.experiment.checkpoints)
            alphabets = [
                (f"trained_ws{w_s:.2f}", w_s, nets.constellation()) for w_s, nets in trained.items()
            ]
        else:
            alphabet = self.networks().constellation()
            alphabets = [(alphabet.name, None, alphabet)]
        return constellation_rows(alphabets)


class KurtosisStream(JcasStream):
    """Kurtosis and mean minimum distance of reference, APSK and trained alphabets."""

    name = "kurtosis"
    primary_keys = ["source"]

    schema = th.PropertiesList(
        th.Property("source", th.StringType, required=True),
        th.Property("w_s", th.NumberType),
        th.Property("kurtosis", th.NumberType),
        th.Property("d_min", th.NumberType, description="Brute-force mean minimum distance."),
        th.Property("d_min_closed_form", th.NumberType),
        th.Property("valid", th.BooleanType, description="Closed form is the true minimum."),
    ).to_dict()

    def build_rows(self) -> List[Dict[str, Any]]:
        """Return the reference rows plus one row per trained checkpoint."""
        trained = networks_by_weight(self.experiment.checkpoints)
        return kurtosis_rows(trained)


class CrbCurveStream(JcasStream):
    """Single-snapshot angle bound at broadside versus effective sensing SNR."""

    name = "crb_curve"
    primary_keys = ["snr_eff_db"]

    schema = th.PropertiesList(
        th.Property("snr_eff_db", th.NumberType, required=True),
        th.Property("crb_rmse_rad", th.NumberType),
    ).to_dict()

    def build_rows(self) -> List[Dict[str, Any]]:
        """Evaluate the bound on a 1 dB grid."""
        return crb_curve(CRB_GRID_DB, K=self.experiment.scenario.K)


class NpThresholdStream(JcasStream):
    """Power-detector thresholds for every window length of the scenario."""

    name = "np_threshold"
    primary_keys = ["n_win"]

    schema = th.PropertiesList(
        th.Property("n_win", th.IntegerType, required=True),
        th.Property("dof", th.IntegerType),
        th.Property("p_f", th.NumberType),
        th.Property("threshold", th.NumberType),
    ).to_dict()

    def build_rows(self) -> List[Dict[str, Any]]:
        """Return one threshold per ``N_win``."""
        cfg = self.experiment.scenario
        windows = range(cfg.n_win_min, cfg.n_win_max + 1)
        return np_threshold_rows(cfg.K, windows, cfg.p_f)
