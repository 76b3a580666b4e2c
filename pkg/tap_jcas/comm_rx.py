"""Communication receiver: MMSE equalization, neural and max-likelihood demapping.

LLRs follow ``l = log p(b=0 | z) - log p(b=1 | z)``; a hard decision is ``1`` iff
``l < 0``.
"""

from typing import Tuple

import numpy as np
from scipy.special import logsumexp

from tap_jcas.constellation import Constellation
from tap_jcas.neural import Mlp, Tape, mlp_forward
from tap_jcas.numerics import CMat, InvalidArgumentError, RVec

NOISE_FEATURE_CLIP = 6.0


def mmse_equalize(
    z_c: CMat, gamma: CMat, sigma_nc2: float | RVec
) -> Tuple[CMat, RVec]:
    """Return ``x_eq = conj(gamma) z / (|gamma|^2 + sigma^2)`` and ``|gamma|^2 / sigma^2``."""
    sigma = np.asarray(sigma_nc2, dtype=np.float64)
    if np.any(sigma <= 0):
        raise InvalidArgumentError("Noise variance must be positive.")
    power = np.abs(gamma) ** 2
    return np.conj(gamma) * z_c / (power + sigma), power / sigma


def mmse_equalize_backward(
    g_x: CMat, z_c: CMat, gamma: CMat, sigma_nc2: float | RVec
) -> Tuple[CMat, CMat, RVec]:
    """Return ``(dL/dz, dL/dgamma, dL/dsigma^2)`` for :func:`mmse_equalize`."""
    sigma = np.asarray(sigma_nc2, dtype=np.float64)
    denom = np.abs(gamma) ** 2 + sigma
    g_z = gamma / denom * g_x
    g_gamma = (-(gamma**2) * np.conj(z_c) * g_x + z_c * sigma * np.conj(g_x)) / denom**2
    g_sigma = np.real(np.conj(g_x) * (-np.conj(gamma) * z_c / denom**2))
    return g_z, g_gamma, g_sigma


def demapper_features(x_eq: CMat, snr_post: RVec) -> np.ndarray:
    """Return ``(Re x, Im x, log10 of the post-equalization noise variance)`` rows.

    The noise feature is ``-log10(snr_post)`` clipped to ``[-6, 6]``.
    """
    x_eq = np.asarray(x_eq)
    snr = np.broadcast_to(np.asarray(snr_post, dtype=np.float64), x_eq.shape).ravel()
    x_eq = x_eq.ravel()
    with np.errstate(divide="ignore"):
        noise = -np.log10(snr)
    noise = np.clip(noise, -NOISE_FEATURE_CLIP, NOISE_FEATURE_CLIP)
    return np.stack([x_eq.real, x_eq.imag, noise], axis=1)


def demapper_features_backward(
    g_feat: np.ndarray, gamma: CMat, sigma_nc2: float | RVec
) -> Tuple[CMat, CMat, RVec]:
    """Return ``(dL/dx_eq, dL/dgamma, dL/dsigma^2)`` for :func:`demapper_features`.

    ``gamma`` and ``sigma_nc2`` are the equalizer inputs the post-equalization
    SNR was computed from; ``gamma`` has the shape of ``x_eq``. The noise
    feature has zero gradient where it is clipped.
    """
    gamma = np.asarray(gamma)
    g_x = (g_feat[:, 0] + 1j * g_feat[:, 1]).reshape(gamma.shape)
    sigma = np.broadcast_to(np.asarray(sigma_nc2, dtype=np.float64), gamma.shape)
    power = np.abs(gamma) ** 2
    safe = np.where(power > 0, power, 1.0)
    noise = np.log10(sigma) - np.log10(safe)
    active = (power > 0) & (np.abs(noise) < NOISE_FEATURE_CLIP)
    coef = np.where(active, g_feat[:, 2].reshape(gamma.shape), 0.0) / np.log(10.0)
    return g_x, -2.0 * coef * gamma / safe, coef / sigma


def demap_nn(net: Mlp, x_eq: CMat, snr_post: RVec) -> Tuple[np.ndarray, Tape]:
    """Return ``(rows, c)`` LLRs from the demapper network and its tape."""
    llrs, tape = mlp_forward(net, demapper_features(x_eq, snr_post))
    return llrs, tape


def demap_mld(c: Constellation, z_c: CMat, gamma: CMat, sigma_nc2: float | RVec) -> np.ndarray:
    """Exact per-bit LLRs, shape ``(..., c)``.

    Args
    ----
    c : Constellation
        Alphabet with its fixed bit labels.
    z_c : CMat
        Received samples.
    gamma : CMat
        Perfect channel state per sample.
    sigma_nc2 : float | RVec
        Noise variance, scalar or broadcastable to ``z_c``.

    Returns
    -------
    np.ndarray
        LLRs accumulated with log-sum-exp.

    """
    sigma = np.asarray(sigma_nc2, dtype=np.float64)
    if np.any(sigma <= 0):
        raise InvalidArgumentError("Noise variance must be positive.")
    z = np.asarray(z_c)[..., None]
    g = np.asarray(gamma)[..., None]
    metric = -np.abs(z - g * c.points) ** 2 / np.asarray(sigma)[..., None]
    labels = c.bit_labels.astype(bool)
    llrs = np.empty(metric.shape[:-1] + (c.bits_per_symbol,))
    for bit in range(c.bits_per_symbol):
        ones = labels[:, bit]
        llrs[..., bit] = logsumexp(metric[..., ~ones], axis=-1) - logsumexp(
            metric[..., ones], axis=-1
        )
    return llrs


def harden(llrs: np.ndarray) -> np.ndarray:
    """Return hard bits: ``1`` iff the LLR is negative."""
    return (np.asarray(llrs) < 0).astype(np.int8)
