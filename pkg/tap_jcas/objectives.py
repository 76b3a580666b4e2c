"""Training losses with their gradients, and evaluation metrics.

Each loss returns a :class:`LossTerm` holding the scalar value and the gradient
with respect to its first argument. Cross-entropies are measured in bits.
"""

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
from scipy.special import expit

from tap_jcas.airlink import FrameBatch
from tap_jcas.numerics import InvalidArgumentError, RVec

LLR_CLAMP = 40.0
PROB_CLAMP = 1e-12
RATE_FLOOR = 1e-6
LN2 = np.log(2.0)


@dataclass
class LossTerm:
    """A scalar loss and its gradient."""

    value: float
    grad: Any


@dataclass(frozen=True)
class LossWeights:
    """Sensing weight ``w_s`` and, for multi-user runs, the fairness exponent."""

    w_s: float
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.w_s <= 1.0:
            raise InvalidArgumentError(f"w_s must lie in [0, 1], got {self.w_s}.")
        if self.alpha < 0:
            raise InvalidArgumentError(f"Fairness exponent must be >= 0, got {self.alpha}.")

    @property
    def comm(self) -> float:
        """Weight of the communication term."""
        return 1.0 - self.w_s


@dataclass
class BatchLabels:
    """Ground truth of a batch."""

    bits: np.ndarray
    target: np.ndarray
    theta: RVec
    n_win: np.ndarray
    sigma_ns2: RVec
    sigma_nc2: RVec
    mask: np.ndarray

    @classmethod
    def from_batch(cls, batch: FrameBatch) -> "BatchLabels":
        """Extract the labels of a generated batch."""
        return cls(
            bits=batch.bits,
            target=batch.target,
            theta=batch.theta,
            n_win=batch.n_win,
            sigma_ns2=batch.sigma_ns2,
            sigma_nc2=batch.sigma_nc2,
            mask=batch.mask,
        )


def _bit_mask(llrs: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    if mask is None:
        return np.ones(llrs.shape, dtype=bool)
    return np.broadcast_to(np.asarray(mask, dtype=bool)[..., None], llrs.shape)


def bce_per_bit(llrs: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """Return ``-log2 p(b | l) = softplus((2b - 1) l) / ln 2`` elementwise."""
    clamped = np.clip(llrs, -LLR_CLAMP, LLR_CLAMP)
    signed = (2.0 * np.asarray(bits) - 1.0) * clamped
    return np.logaddexp(0.0, signed) / LN2


def loss_comm_bce(
    llrs: np.ndarray, bits: np.ndarray, mask: Optional[np.ndarray] = None
) -> LossTerm:
    """Mean bitwise cross-entropy of the demapper LLRs."""
    llrs = np.asarray(llrs, dtype=np.float64)
    valid = _bit_mask(llrs, mask)
    count = max(int(valid.sum()), 1)
    per_bit = bce_per_bit(llrs, bits)
    sign = 2.0 * np.asarray(bits) - 1.0
    inside = np.abs(llrs) <= LLR_CLAMP
    grad = sign * expit(sign * np.clip(llrs, -LLR_CLAMP, LLR_CLAMP)) / LN2
    grad = np.where(valid & inside, grad, 0.0) / count
    return LossTerm(float(np.sum(per_bit[valid]) / count), grad)


def loss_detect_bce(p_t: np.ndarray, target: np.ndarray) -> LossTerm:
    """Mean cross-entropy between target flags and detection probabilities."""
    p = np.clip(np.asarray(p_t, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    t = np.asarray(target, dtype=np.float64)
    n = max(p.size, 1)
    value = -np.sum(t * np.log2(p) + (1.0 - t) * np.log2(1.0 - p)) / n
    grad = (-t / p + (1.0 - t) / (1.0 - p)) / (n * LN2)
    return LossTerm(float(value), grad)


def _angle_loss(theta_hat: RVec, labels: BatchLabels, weight: RVec) -> LossTerm:
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    n = max(theta_hat.size, 1)
    present = np.asarray(labels.target, dtype=np.float64)
    error = labels.theta - theta_hat
    value = np.sum(present * weight * error**2) / n
    return LossTerm(float(value), -2.0 * present * weight * error / n)


def loss_angle_crb_normalized(theta_hat: RVec, labels: BatchLabels) -> LossTerm:
    """Squared angle error on present targets, scaled by ``N_win / sigma_ns^2``."""
    return _angle_loss(theta_hat, labels, labels.n_win / labels.sigma_ns2)


def loss_angle_unmodified(theta_hat: RVec, labels: BatchLabels) -> LossTerm:
    """Squared angle error on present targets."""
    return _angle_loss(theta_hat, labels, np.ones_like(labels.sigma_ns2))


@dataclass
class LossParts:
    """Component losses of one step."""

    comm: float = 0.0
    detect: float = 0.0
    angle: float = 0.0


def loss_total(parts: LossParts, w: LossWeights) -> LossTerm:
    """Weighted sum; the gradient holds the weights of ``(comm, detect, angle)``."""
    weights = np.array([w.comm, w.w_s, w.w_s])
    value = weights @ np.array([parts.comm, parts.detect, parts.angle])
    return LossTerm(float(value), weights)


def loss_alpha_fair(per_ue_rates: RVec, alpha: float) -> LossTerm:
    """Negative alpha-fair utility of the per-user rates.

    ``alpha = 1`` gives ``-sum log2 r``; otherwise ``-sum r^(1-alpha) / (1-alpha)``.
    Rates below the floor are clamped and receive no gradient.
    """
    if alpha < 0:
        raise InvalidArgumentError(f"Fairness exponent must be >= 0, got {alpha}.")
    rates = np.asarray(per_ue_rates, dtype=np.float64)
    floored = np.maximum(rates, RATE_FLOOR)
    live = rates > RATE_FLOOR
    if alpha == 1.0:
        value = -np.sum(np.log2(floored))
        grad = -1.0 / (floored * LN2)
    else:
        value = -np.sum(floored ** (1.0 - alpha)) / (1.0 - alpha)
        grad = -(floored ** (-alpha))
    return LossTerm(float(value), np.where(live, grad, 0.0))


def metric_bmi(
    llrs: np.ndarray, bits: np.ndarray, order: int, mask: Optional[np.ndarray] = None
) -> float:
    """Estimate the bitwise mutual information in bits per symbol."""
    capacity = np.log2(order)
    bce = loss_comm_bce(llrs, bits, mask).value
    return float(np.clip(capacity - capacity * bce, 0.0, capacity))


def metric_ber(
    hard_bits: np.ndarray, bits: np.ndarray, mask: Optional[np.ndarray] = None
) -> float:
    """Return the bit error rate over valid positions."""
    hard_bits = np.asarray(hard_bits)
    valid = _bit_mask(hard_bits, mask)
    count = int(valid.sum())
    if count == 0:
        return float("nan")
    return float(np.sum((hard_bits != np.asarray(bits)) & valid) / count)


@dataclass
class SensingMetrics:
    """Detection rates and angle accuracy; ``None`` when a class is absent."""

    p_d: Optional[float]
    p_f: Optional[float]
    rmse_rad: Optional[float]
    bias_rad: Optional[float]
    n_present: int
    n_absent: int


def metric_sensing(
    decisions: np.ndarray, target: np.ndarray, theta_hat: RVec, theta: RVec
) -> SensingMetrics:
    """Compute ``P_d``, ``P_f`` and the angle RMSE and bias over present targets."""
    decisions = np.asarray(decisions, dtype=np.float64)
    present = np.asarray(target).astype(bool)
    n_present, n_absent = int(present.sum()), int((~present).sum())
    p_d = float(decisions[present].mean()) if n_present else None
    p_f = float(decisions[~present].mean()) if n_absent else None
    if n_present:
        error = np.asarray(theta_hat)[present] - np.asarray(theta)[present]
        rmse, bias = float(np.sqrt(np.mean(error**2))), float(np.mean(error))
    else:
        rmse = bias = None
    return SensingMetrics(p_d, p_f, rmse, bias, n_present, n_absent)


def ergodic_capacity(snr_c_db: float, beta_c: float, power: float = 1.0) -> float:
    """Return the reference rate ``log2(1 + sigma_c^2 beta_c P / sigma_nc^2)``.

    ``snr_c_db`` is ``sigma_c^2 / sigma_nc^2`` in dB.
    """
    return float(np.log2(1.0 + beta_c * power * 10.0 ** (snr_c_db / 10.0)))


def bce_floor(order: int, capacity: float) -> float:
    """Return the smallest achievable total cross-entropy ``max(0, log2 M - C)``."""
    return float(max(0.0, np.log2(order) - capacity))
