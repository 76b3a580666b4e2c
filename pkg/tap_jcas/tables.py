"""Experiment tables shared by the ``jcas`` commands and the tap streams.

Every builder returns a list of flat dicts whose keys match the schema of the
corresponding stream; missing values are ``None``.
"""

import logging
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from tap_jcas.airlink import (
    BEAM_GRID_STEP,
    ScenarioConfig,
    angle_grid,
    area_power_fractions,
    beam_pattern,
    steering_vector,
)
from tap_jcas.baselines import CrbParams, crb_full, esprit_aoa, np_threshold
from tap_jcas.comm_rx import demap_mld, harden
from tap_jcas.constellation import (
    Constellation,
    apsk_from_kappa,
    dmin_from_kappa,
    kurtosis,
    make_apsk,
    make_psk,
    make_qam,
    mean_min_distance,
)
from tap_jcas.neural import beamformer_head
from tap_jcas.numerics import CMat, InvalidArgumentError, RngStream, sample_cnormal
from tap_jcas.objectives import ergodic_capacity, metric_ber, metric_bmi
from tap_jcas.sensing_rx import correlate
from tap_jcas.trainer import JcasNetworks, SweepFixed, load_checkpoint, sweep

logger = logging.getLogger(__name__)

STREAM_BASELINE = 6_000_000
KAPPA_GRID = tuple(np.round(np.arange(1.0, 1.95, 0.05), 2))


def networks_by_weight(paths: Sequence[str]) -> Dict[float, JcasNetworks]:
    """Load trained checkpoints keyed by the ``w_s`` they were fine-tuned with."""
    nets: Dict[float, JcasNetworks] = {}
    for path in paths:
        loaded = load_checkpoint(path)
        if loaded.w_s is None:
            raise InvalidArgumentError(f"{path} was not fine-tuned; its w_s is unknown.")
        if loaded.w_s in nets:
            raise InvalidArgumentError(f"Two checkpoints were trained with w_s={loaded.w_s}.")
        nets[loaded.w_s] = loaded
    return dict(sorted(nets.items()))


def precoder(nets: JcasNetworks, cfg: ScenarioConfig) -> CMat:
    """Return the beamformer output for the configured areas."""
    v, _ = beamformer_head(nets.beamformer, cfg.areas)
    return v


def beam_rows(v: CMat, step: float = BEAM_GRID_STEP) -> List[Dict[str, Any]]:
    """Return ``(angle_deg, power)`` over the full half-plane."""
    grid = angle_grid(-np.pi / 2, np.pi / 2, step)
    power = beam_pattern(v, grid)
    return [
        {"angle_deg": float(angle), "power": float(p)} for angle, p in zip(np.rad2deg(grid), power)
    ]


def area_power_rows(v: CMat, cfg: ScenarioConfig, label: str) -> List[Dict[str, Any]]:
    """Return the sensing, communication and leaked power fractions of one precoder."""
    sens, comm, outside = area_power_fractions(v, cfg)
    return [
        {
            "label": label,
            "frac_sens": sens,
            "frac_comm": comm,
            "frac_outside": outside,
            "beta_s": float(np.mean(beam_pattern(v, angle_grid(*cfg.sens_area)))),
            "beta_c": float(np.mean(beam_pattern(v, angle_grid(*cfg.comm_area)))),
        }
    ]


def _shape_row(source: str, c: Constellation, w_s: Optional[float] = None) -> Dict[str, Any]:
    return {
        "source": source,
        "w_s": w_s,
        "kurtosis": kurtosis(c),
        "d_min": mean_min_distance(c),
        "d_min_closed_form": None,
        "valid": None,
    }


def kurtosis_rows(
    trained: Optional[Mapping[float, JcasNetworks]] = None,
    kappas: Iterable[float] = KAPPA_GRID,
) -> List[Dict[str, Any]]:
    """Return kurtosis and mean minimum distance of references, APSK and trained alphabets."""
    rows = [_shape_row("qam16", make_qam(16)), _shape_row("psk16", make_psk(16))]
    for kappa in kappas:
        alphabet = make_apsk(apsk_from_kappa(float(kappa)))
        closed, valid = dmin_from_kappa(float(kappa))
        row = _shape_row(f"apsk16_k{float(kappa):.2f}", alphabet)
        row.update({"d_min_closed_form": closed, "valid": valid})
        rows.append(row)
    for w_s, nets in (trained or {}).items():
        rows.append(_shape_row(f"trained_ws{w_s:.2f}", nets.constellation(), w_s))
    return rows


def constellation_rows(
    alphabets: Iterable[Tuple[str, Optional[float], Constellation]]
) -> List[Dict[str, Any]]:
    """Return ``(source, w_s, index, bits, re, im)`` rows per labelled alphabet."""
    rows = []
    for source, w_s, c in alphabets:
        for index, (point, label) in enumerate(zip(c.points, c.bit_labels)):
            rows.append(
                {
                    "source": source,
                    "w_s": w_s,
                    "index": index,
                    "bits": "".join(str(int(b)) for b in label),
                    "re": float(point.real),
                    "im": float(point.imag),
                }
            )
    return rows


def tradeoff_rows(
    trained: Mapping[float, JcasNetworks], cfg: ScenarioConfig, trials: int, seed: int
) -> List[Dict[str, Any]]:
    """Evaluate every ``w_s`` checkpoint on shared draws: BMI versus angle RMSE."""
    points = sweep(trained, cfg, "w_s", list(trained), trials, seed, SweepFixed())
    rows = []
    for point in points:
        nets = trained[point["value"]]
        rows.append(
            {
                "w_s": point["value"],
                "bmi": point["bmi"],
                "ber": point["ber"],
                "rmse_nn": point["rmse_nn"],
                "p_d": point["p_d"],
                "p_f": point["p_f"],
                "kurtosis": kurtosis(nets.constellation()),
                "beta_s_db": point["beta_s_db"],
                "beta_c_db": point["beta_c_db"],
            }
        )
    return rows


def np_threshold_rows(K: int, windows: Iterable[int], p_f: float) -> List[Dict[str, Any]]:
    """Return the chi-squared power-detector threshold per window length."""
    return [
        {"n_win": int(n), "dof": 2 * K * int(n), "p_f": p_f, "threshold": np_threshold(K, n, p_f)}
        for n in windows
    ]


def esprit_rows(
    cfg: ScenarioConfig, grid: Sequence[float], trials: int, n_win: int, seed: int
) -> List[Dict[str, Any]]:
    """Monte-Carlo ESPRIT accuracy against the bound at fixed effective sensing SNR.

    The echo per snapshot is ``CN(0, 10^(snr/10))`` with unit noise, so the
    effective SNR equals ``beta_s sigma_s^2 / sigma_ns^2`` of the bound.
    """
    rows = []
    for index, snr_db in enumerate(grid):
        if trials == 0:
            break
        rng = RngStream(seed, STREAM_BASELINE + index)
        power = 10.0 ** (float(snr_db) / 10.0)
        theta = rng.generator.uniform(*cfg.sens_area, size=trials)
        echo = sample_cnormal(rng, 0.0, power, (trials, n_win))
        noise = sample_cnormal(rng, 0.0, 1.0, (trials, cfg.K, n_win))
        z_s = steering_vector(theta, cfg.K)[:, :, None] * echo[:, None, :] + noise
        result = esprit_aoa(correlate(z_s))
        error = result.theta - theta
        bounds = [crb_full(CrbParams(cfg.K, n_win, 1.0, power, 1.0, float(t))) for t in theta]
        rows.append(
            {
                "snr_eff_db": float(snr_db),
                "n_win": n_win,
                "trials": trials,
                "rmse_esprit": float(np.sqrt(np.mean(error**2))),
                "bias_esprit": float(np.mean(error)),
                "crb_rmse": float(np.sqrt(np.mean(bounds))),
                "degenerate_rate": float(np.mean(result.degenerate)),
            }
        )
    return rows


def mld_rows(
    c: Constellation, grid: Sequence[float], trials: int, seed: int, sigma_c2: float = 1.0
) -> List[Dict[str, Any]]:
    """Return MLD BER and BMI over the unit-gain Rayleigh link, per ``SNR_c``."""
    rows = []
    for index, snr_db in enumerate(grid):
        if trials == 0:
            break
        rng = RngStream(seed, (STREAM_BASELINE, 1, index))
        sigma = sigma_c2 * 10.0 ** (-float(snr_db) / 10.0)
        symbols = rng.generator.integers(0, c.order, size=trials)
        gamma = sample_cnormal(rng, 0.0, sigma_c2, trials)
        z = gamma * c.points[symbols] + sample_cnormal(rng, 0.0, sigma, trials)
        llrs = demap_mld(c, z, gamma, sigma)
        bits = c.bit_labels[symbols]
        rows.append(
            {
                "snr_c_db": float(snr_db),
                "trials": trials,
                "ber_mld": metric_ber(harden(llrs), bits),
                "bmi_mld": metric_bmi(llrs, bits, c.order),
                "ergodic_capacity": ergodic_capacity(float(snr_db), 1.0),
            }
        )
    return rows


def clean(rows: Iterable[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """Replace NaN and infinite floats with ``None``."""
    out = []
    for row in rows:
        out.append(
            {
                key: None if isinstance(value, float) and not np.isfinite(value) else value
                for key, value in row.items()
            }
        )
    return out
