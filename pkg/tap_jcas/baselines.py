"""Classical references: power detector, ESPRIT and the Cramer-Rao bound."""

import logging
from dataclasses import dataclass
from typing import Iterable, List, Literal, Optional

import numpy as np

from tap_jcas.numerics import (
    CMat,
    InvalidArgumentError,
    RVec,
    chi2_quantile,
    hermitian_eig,
    pseudo_inverse,
)

logger = logging.getLogger(__name__)

DEGENERATE_GAP = 1e-9


@dataclass(frozen=True)
class CrbParams:
    """Parameters of the single-target angle bound."""

    K: int
    n_win: float
    sigma_ns2: float
    beta_s: float
    sigma_s2: float
    theta: float

    def __post_init__(self) -> None:
        if self.K < 2:
            raise InvalidArgumentError(f"The bound needs K >= 2, got {self.K}.")
        if self.n_win <= 0:
            raise InvalidArgumentError(f"Window length must be positive, got {self.n_win}.")
        if self.sigma_ns2 <= 0 or self.sigma_s2 <= 0 or self.beta_s <= 0:
            raise InvalidArgumentError("Variances and beam gain must be positive.")
        if abs(self.theta) >= np.pi / 2:
            raise InvalidArgumentError(f"The bound is singular at |theta| = pi/2: {self.theta}.")

    @property
    def signal_power(self) -> float:
        """Return ``s_f = beta_s sigma_s^2``."""
        return self.beta_s * self.sigma_s2


@dataclass
class NpDetection:
    """Power-detector outputs for a batch of windows."""

    statistic: RVec
    threshold: RVec
    decision: np.ndarray


def np_threshold(K: int, n_win: int, p_f: float) -> float:
    """Return the chi-squared threshold with ``2 K N_win`` degrees of freedom."""
    return chi2_quantile(2 * K * int(n_win), 1.0 - p_f)


def np_detector(
    z_s: CMat, sigma_ns2: float | RVec, p_f: float, n_win: Optional[int | np.ndarray] = None
) -> NpDetection:
    """Neyman-Pearson power detector on one window ``(K, N)`` or a padded batch.

    The statistic ``(2 / sigma^2) sum |z|^2`` is chi-squared with ``2 K N_win``
    degrees of freedom when no target is present.
    """
    z_s = np.asarray(z_s, dtype=np.complex128)
    sigma = np.asarray(sigma_ns2, dtype=np.float64)
    if np.any(sigma <= 0):
        raise InvalidArgumentError("Sensing noise variance must be positive.")
    K = z_s.shape[-2]
    statistic = 2.0 / sigma * np.sum(np.abs(z_s) ** 2, axis=(-2, -1))
    windows = np.atleast_1d(z_s.shape[-1] if n_win is None else n_win).astype(int)
    cache = {int(n): np_threshold(K, int(n), p_f) for n in np.unique(windows)}
    threshold = np.array([cache[int(n)] for n in windows])
    if np.ndim(statistic) == 0:
        threshold = threshold.reshape(())
    else:
        threshold = np.broadcast_to(threshold, np.shape(statistic)).copy()
    return NpDetection(statistic, threshold, (statistic > threshold).astype(np.int8))


@dataclass
class EspritResult:
    """ESPRIT estimates with a degeneracy flag per window."""

    theta: RVec
    degenerate: np.ndarray


def esprit_aoa(
    corr: CMat, n_targets: int = 1, method: Literal["lapack", "jacobi"] = "lapack"
) -> EspritResult:
    """Estimate the angle of a single target from the correlation matrix.

    The signal subspace is the dominant eigenvector ``u``; with the shifted
    subarrays ``u1 = u[:-1]`` and ``u2 = u[1:]`` the least-squares rotation is
    ``u1^H u2 / u1^H u1`` and its phase is ``pi sin(theta)``.
    """
    if n_targets != 1:
        raise InvalidArgumentError("ESPRIT is implemented for a single target.")
    corr = np.asarray(corr, dtype=np.complex128)
    if corr.shape[-1] < 2:
        raise InvalidArgumentError("ESPRIT needs at least two antennas.")
    if corr.ndim == 2 and method == "jacobi":
        values, vectors = hermitian_eig(corr, method="jacobi")
    else:
        values, vectors = hermitian_eig(corr)
    u = vectors[..., :, 0]
    u1, u2 = u[..., :-1], u[..., 1:]
    num = np.sum(np.conj(u1) * u2, axis=-1)
    den = np.sum(np.abs(u1) ** 2, axis=-1)
    ratio = np.angle(num / np.where(den > 0, den, 1.0)) / np.pi
    clipped = np.abs(ratio) > 1.0
    gap = values[..., 0] - values[..., 1]
    degenerate = clipped | (gap <= DEGENERATE_GAP * np.maximum(np.abs(values[..., 0]), 1e-300))
    theta = np.arcsin(np.clip(ratio, -1.0, 1.0))
    if np.any(degenerate):
        logger.debug(f"{int(np.sum(degenerate))} degenerate ESPRIT estimate(s).")
    return EspritResult(np.asarray(theta), np.asarray(degenerate))


def _assemble(p: CrbParams, curvature: float) -> float:
    s_f = p.signal_power
    gain = p.K * s_f / (p.sigma_ns2 + p.K * s_f)
    bound_gamma = p.sigma_ns2 / (2.0 * p.n_win) / (s_f * gain * curvature)
    return bound_gamma / (np.pi**2 * np.cos(p.theta) ** 2)


def crb_full(p: CrbParams) -> float:
    """Return the bound on the angle variance in rad^2."""
    return _assemble(p, (p.K**3 - p.K) / 12.0)


def crb_simplified(p: CrbParams) -> float:
    """Return the high-SNR form, which drops the ``K s_f / (sigma^2 + K s_f)`` factor."""
    return (
        p.sigma_ns2
        / p.n_win
        / p.signal_power
        * 6.0
        / (p.K**3 - p.K)
        / (np.pi**2 * np.cos(p.theta) ** 2)
    )


def array_curvature(K: int, spatial_freq: float = 0.0, h: float = 1e-5) -> float:
    """Return ``H = a'^H (I - a (a^H a)^-1 a^H) a'`` with ``a'`` from central differences."""
    k = np.arange(K)

    def manifold(gamma: float) -> CMat:
        return np.exp(-1j * k * gamma)[:, None]

    a = manifold(spatial_freq)
    derivative = (manifold(spatial_freq + h) - manifold(spatial_freq - h)) / (2.0 * h)
    projector = np.eye(K) - a @ pseudo_inverse(a)
    return float(np.real(np.conj(derivative).T @ projector @ derivative)[0, 0])


def fisher_info_oracle(p: CrbParams, h: float = 1e-5) -> float:
    """Evaluate the bound from a numerically differentiated array manifold."""
    return _assemble(p, array_curvature(p.K, np.pi * np.sin(p.theta), h))


def crb_curve(
    snr_eff_db: Iterable[float], K: int = 16, n_win: int = 1, theta: float = 0.0
) -> List[dict]:
    """Return ``(snr_eff_db, crb_rmse_rad)`` rows with ``sigma_ns^2 = 1``."""
    rows = []
    for snr in snr_eff_db:
        p = CrbParams(
            K=K, n_win=n_win, sigma_ns2=1.0, beta_s=10.0 ** (snr / 10.0), sigma_s2=1.0, theta=theta
        )
        rows.append({"snr_eff_db": float(snr), "crb_rmse_rad": float(np.sqrt(crb_full(p)))})
    return rows
