"""Sensing receiver: correlation preprocessing, detection, AoA estimation, limiting."""

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np

from tap_jcas.neural import Mlp, Tape, mlp_forward
from tap_jcas.numerics import CMat, InvalidArgumentError, RVec

logger = logging.getLogger(__name__)

N_WIN_SCALE = 15.0


def correlate(z_s: CMat, n_win: Optional[int | np.ndarray] = None) -> CMat:
    """Return the short-term spatial autocorrelation ``Z Z^H / N_win``.

    ``z_s`` is ``(K, N)`` or a padded batch ``(B, K, N)``; ``n_win`` defaults to
    the number of columns and is needed when padding columns are present.
    """
    z_s = np.asarray(z_s, dtype=np.complex128)
    if z_s.shape[-1] < 1:
        raise InvalidArgumentError("Correlation needs at least one snapshot.")
    if n_win is None:
        n_win = z_s.shape[-1]
    count = np.asarray(n_win, dtype=np.float64)
    corr = z_s @ np.conj(np.swapaxes(z_s, -1, -2))
    return corr / count[..., None, None]


def correlate_backward(g_corr: CMat, z_s: CMat, n_win: int | np.ndarray) -> CMat:
    """Return ``dL/dZ`` given ``dL/dCorr``."""
    count = np.asarray(n_win, dtype=np.float64)
    sym = g_corr + np.conj(np.swapaxes(g_corr, -1, -2))
    return (sym @ z_s) / count[..., None, None]


def sensing_features(
    corr: CMat, n_win: int | np.ndarray, sigma_ns2: float | np.ndarray
) -> np.ndarray:
    """Flatten the noise-normalized correlation into the sensing network input.

    Args
    ----
    corr : CMat
        Correlation matrix ``(K, K)`` or batch ``(B, K, K)``.
    n_win : int | np.ndarray
        Window length per scenario.
    sigma_ns2 : float | np.ndarray
        Sensing noise variance per scenario.

    Returns
    -------
    np.ndarray
        ``(B, 2K^2 + 2)`` features: real parts, imaginary parts, ``N_win / 15``
        and ``log10 sigma_ns^2``.

    """
    sigma = np.atleast_1d(np.asarray(sigma_ns2, dtype=np.float64))
    if np.any(sigma <= 0):
        raise InvalidArgumentError("Sensing noise variance must be positive.")
    corr = np.asarray(corr, dtype=np.complex128)
    if corr.ndim == 2:
        corr = corr[None]
    scaled = corr / sigma[:, None, None]
    rows = scaled.shape[0]
    windows = np.broadcast_to(np.asarray(n_win, dtype=np.float64), (rows,))
    return np.concatenate(
        [
            scaled.real.reshape(rows, -1),
            scaled.imag.reshape(rows, -1),
            (windows / N_WIN_SCALE)[:, None],
            np.broadcast_to(np.log10(sigma), (rows,))[:, None],
        ],
        axis=1,
    )


def sensing_features_backward(g_features: np.ndarray, K: int, sigma_ns2: np.ndarray) -> CMat:
    """Return ``dL/dCorr`` for the correlation part of the features."""
    rows = g_features.shape[0]
    g_re = g_features[:, : K * K].reshape(rows, K, K)
    g_im = g_features[:, K * K : 2 * K * K].reshape(rows, K, K)
    return (g_re + 1j * g_im) / np.asarray(sigma_ns2, dtype=np.float64)[:, None, None]


@dataclass
class DetectionResult:
    """Detector outputs for a batch of windows."""

    score: RVec
    p_t: RVec
    decision: np.ndarray
    calibrated: bool = True
    tape: Optional[Tape] = None


def thresholds_for(
    thresholds: Mapping[int, float], n_win: np.ndarray
) -> Tuple[np.ndarray, bool]:
    """Look up ``tau`` per window length; missing lengths fall back to zero."""
    windows = np.atleast_1d(n_win)
    missing = sorted({int(n) for n in windows} - set(thresholds))
    if missing:
        logger.warning(f"No calibrated threshold for N_win={missing}; using tau=0.")
    tau = np.array([thresholds.get(int(n), 0.0) for n in windows])
    return tau, not missing


def detect(
    net: Mlp, features: np.ndarray, thresholds: Optional[Mapping[int, float]] = None
) -> DetectionResult:
    """Run the detection network and apply the per-window-length threshold.

    The window length is read back from the features (``N_win / 15`` column).
    Without a threshold table ``tau = 0``, as during training.
    """
    features = np.atleast_2d(features)
    if thresholds is None:
        tau, calibrated = np.zeros(len(features)), False
    else:
        n_win = np.rint(features[:, -2] * N_WIN_SCALE).astype(int)
        tau, calibrated = thresholds_for(thresholds, n_win)
    p_t, tape = mlp_forward(net, features, offset=tau)
    score = tape.preactivations[-1][:, 0]
    p_t = p_t[:, 0]
    return DetectionResult(score, p_t, (p_t > 0.5).astype(np.int8), calibrated, tape)


def estimate_aoa(net: Mlp, features: np.ndarray) -> Tuple[RVec, Tape]:
    """Return the bounded angle estimate in ``[-pi/2, pi/2]`` and its tape."""
    out, tape = mlp_forward(net, np.atleast_2d(features))
    return out[:, 0], tape


@dataclass(frozen=True)
class CalibrationResult:
    """Outcome of threshold limiting for one window length."""

    tau: float
    n_scores: int
    degenerate: bool


def calibrate_threshold(noise_only_scores: Sequence[float], p_f: float) -> CalibrationResult:
    """Set ``tau`` so that noise-only windows exceed the decision boundary at rate ``p_f``.

    Uses the order statistic at ``ceil((1 - p_f) n)`` without interpolation:
    a window is declared a target iff its raw score is strictly above it.
    """
    scores = np.sort(np.asarray(noise_only_scores, dtype=np.float64).ravel())
    if scores.size == 0:
        raise InvalidArgumentError("Threshold calibration needs at least one score.")
    if not 0.0 < p_f < 1.0:
        raise InvalidArgumentError(f"False-alarm target must lie in (0, 1), got {p_f}.")
    n = scores.size
    if n < 1.0 / p_f:
        logger.warning(f"Only {n} noise-only scores for P_f={p_f}; the threshold is coarse.")
    rank = int(np.ceil((1.0 - p_f) * n - 1e-9))
    quantile = scores[min(max(rank, 1), n) - 1]
    degenerate = bool(scores[0] == scores[-1])
    if degenerate:
        logger.warning("All noise-only scores are equal; detector threshold is degenerate.")
    return CalibrationResult(tau=float(-quantile), n_scores=n, degenerate=degenerate)


def sufficient_statistic(z_s: CMat, y: CMat) -> CMat:
    """Return ``eta = Z_s Y^H / sqrt(N_win)``."""
    z_s = np.asarray(z_s, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    if z_s.shape != y.shape:
        raise InvalidArgumentError(f"Shape mismatch: {z_s.shape} vs {y.shape}.")
    return z_s @ np.conj(np.swapaxes(y, -1, -2)) / np.sqrt(z_s.shape[-1])


def sufficient_statistic_approx(z_s: CMat) -> CMat:
    """Approximate sufficient statistic; identical to :func:`correlate`."""
    return correlate(z_s)
