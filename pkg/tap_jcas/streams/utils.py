"""Closed vocabularies and schema constants shared by the simulator and its streams."""

from enum import Enum

CSV_SCHEMA_VERSION = 1


class HeadType(Enum):
    """Output head applied after the last dense layer."""

    LINEAR = "linear"
    SIGMOID_OFFSET = "sigmoid_offset"
    SCALED_TANH = "scaled_tanh"
    POWER_NORMALIZED = "power_normalized"


class ModulationMode(Enum):
    """Source of the modulation alphabet."""

    QAM = "qam"
    PSK = "psk"
    APSK = "apsk"
    TRAINED = "trained"


class AngleLoss(Enum):
    """Angle-estimation loss used during training."""

    MODIFIED = "modified"
    UNMODIFIED = "unmodified"


class SweepAxis(Enum):
    """Evaluation axis of a sweep."""

    SNR_C = "snr_c"
    SNR_S = "snr_s"
    N_WIN = "n_win"
    W_S = "w_s"


class FigureName(Enum):
    """Tables emitted by ``jcas figure``."""

    BEAM = "beam"
    TRADEOFF = "tradeoff"
    KURTOSIS = "kurtosis"
    CONSTELLATION = "constellation"


class BaselineName(Enum):
    """Tables emitted by ``jcas baseline``."""

    NP = "np"
    ESPRIT = "esprit"
    CRB = "crb"
    MLD = "mld"
